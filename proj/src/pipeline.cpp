#include "steerkit/pipeline.hpp"

#include <cmath>

#include "steerkit/errors.hpp"
#include "steerkit/extraction.hpp"
#include "steerkit/parallel.hpp"
#include "steerkit/rng.hpp"

namespace steerkit {

Trace make_toy_trace(const toy::ToyModel& model, const ToygenOptions& opts) {
    if (opts.n_prompts < 2) {
        throw ValidationError("toygen: need at least 2 prompts");
    }
    if (!(opts.no_signal_frac >= 0.0 && opts.no_signal_frac <= 1.0)) {
        throw ValidationError("toygen: no_signal_frac must lie in [0, 1]");
    }
    if (!(opts.train_frac > 0.0 && opts.train_frac < 1.0)) {
        throw ValidationError("toygen: train_frac must lie in (0, 1)");
    }
    const auto& cfg = model.config();
    const auto& signals = model.signal_tokens();
    const ConceptSpec spec = model.concept_spec();

    Rng rng(opts.seed);
    std::vector<std::vector<TokenId>> prompts(opts.n_prompts);
    for (auto& p : prompts) {
        std::optional<TokenId> signal;
        if (rng.uniform() >= opts.no_signal_frac) {
            signal = signals[rng.below(signals.size())].token;
        }
        p = toy::synth_prompt(model, signal, rng);
    }

    std::vector<std::size_t> order(opts.n_prompts);
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    Rng split_rng(derive_seed(opts.seed, 0x5917));
    split_rng.shuffle(order);
    const auto n_train = static_cast<std::size_t>(std::llround(opts.train_frac * static_cast<double>(opts.n_prompts)));
    std::vector<Split> splits(opts.n_prompts, Split::validation);
    for (std::size_t i = 0; i < n_train; ++i) {
        splits[order[i]] = Split::train;
    }

    std::vector<toy::Hook> hooks;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        hooks.push_back(toy::Hook::capture(l));
    }
    std::vector<PromptRecord> records(opts.n_prompts);
    std::vector<LayerBlock> layers(cfg.n_layers);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        layers[l] = LayerBlock{l, opts.n_prompts, cfg.d_model, std::vector<float>(opts.n_prompts * cfg.d_model)};
    }
    parallel_for(opts.n_prompts, [&](std::size_t i) {
        const auto result = model.forward(prompts[i], hooks);
        PromptRecord rec;
        rec.id = static_cast<PromptId>(i);
        rec.text = model.detokenize(prompts[i]);
        rec.token_count = prompts[i].size();
        rec.p_a = concept_probability(result.distribution, spec.tokens_a);
        rec.p_b = concept_probability(result.distribution, spec.tokens_b);
        rec.disparity = rec.p_a - rec.p_b;
        rec.split = splits[i];
        records[i] = std::move(rec);
        for (std::size_t l = 0; l < cfg.n_layers; ++l) {
            const auto row = result.captures[l].row(0);
            float* dst = layers[l].values.data() + i * cfg.d_model;
            for (std::size_t k = 0; k < cfg.d_model; ++k) {
                dst[k] = static_cast<float>(row[k]);
            }
        }
    });

    TraceManifest m;
    m.model_id = opts.model_id;
    m.d_model = cfg.d_model;
    m.n_layers = cfg.n_layers;
    m.concept_spec = spec;
    for (TokenId t : spec.tokens_a) {
        m.token_strings_a.push_back(model.token_string(t));
    }
    for (TokenId t : spec.tokens_b) {
        m.token_strings_b.push_back(model.token_string(t));
    }
    m.n_prompts = opts.n_prompts;
    m.toy_model = nlohmann::json{{"config", cfg}, {"plant", model.plant()}};
    m.metadata = {{"generator", "steerkit toygen"},
                  {"seed", opts.seed},
                  {"no_signal_frac", opts.no_signal_frac},
                  {"train_frac", opts.train_frac},
                  {"read_point", "block output, last token"}};
    return Trace(std::move(m), std::move(records), std::move(layers));
}

toy::ToyModel model_from_manifest(const TraceManifest& manifest) {
    if (!manifest.toy_model) {
        throw ValidationError("trace '" + manifest.model_id +
                              "' was not produced by the toy model; live evaluation needs a toy_model manifest entry");
    }
    toy::ModelConfig cfg;
    toy::PlantSpec plant;
    try {
        cfg = manifest.toy_model->at("config").get<toy::ModelConfig>();
        plant = manifest.toy_model->at("plant").get<toy::PlantSpec>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest toy_model: ") + e.what());
    }
    auto model = toy::ToyModel::build(cfg, plant);
    if (model.config().d_model != manifest.d_model || model.config().n_layers != manifest.n_layers) {
        throw ValidationError("manifest toy_model disagrees with trace dimensions");
    }
    return model;
}

std::vector<PromptId> split_ids(const Trace& trace, Split split) {
    std::vector<PromptId> out;
    for (const auto& r : trace.records()) {
        if (r.split == split) {
            out.push_back(r.id);
        }
    }
    return out;
}

std::pair<SteeringVector, SelectionReport> fit_vector(const Trace& trace, Method method, double delta,
                                                      double exclude_frac, std::optional<std::size_t> layer_override) {
    const auto part = partition(trace.records_in(Split::train), delta);
    const auto val = split_ids(trace, Split::validation);
    auto candidates = extract_all_layers(trace, part, method);
    std::pair<SteeringVector, SelectionReport> out;
    if (layer_override) {
        if (*layer_override >= candidates.size()) {
            throw ValidationError("layer override " + std::to_string(*layer_override) + " outside trace");
        }
        const CandidateVector only = candidates[*layer_override];
        out = select_steering_vector(std::span<const CandidateVector>(&only, 1), trace, val, 0.0);
        // Keep the full per-layer table for reporting.
        auto full = select_steering_vector(candidates, trace, val, exclude_frac).second;
        full.chosen_layer = out.second.chosen_layer;
        full.flipped = out.second.flipped;
        out.second = full;
    } else {
        out = select_steering_vector(candidates, trace, val, exclude_frac);
    }
    out.first = calibrate_scale(out.first, trace, val, delta);
    return out;
}

std::vector<MethodResult> run_pipeline(const Trace& trace, const toy::ToyModel& model, const PipelineOptions& opts) {
    const auto prompts = eval_prompts(model, trace, Split::validation);
    std::vector<MethodResult> out;
    for (Method m : opts.methods) {
        MethodResult r;
        r.method = m;
        std::tie(r.vector, r.selection) = fit_vector(trace, m, opts.delta, opts.exclude_frac, opts.layer_override);
        r.bias = run_debias_eval(model, prompts, r.vector, 0.0);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace steerkit

#include "steerkit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>

#include "steerkit/errors.hpp"
#include "steerkit/extraction.hpp"
#include "steerkit/parallel.hpp"
#include "steerkit/rng.hpp"
#include "steerkit/simd/kernels.hpp"

namespace steerkit {
namespace {

struct Measured {
    double disparity = 0.0;
    double projection = 0.0;
};

Measured measure(const toy::ToyModel& model, const ConceptSpec& spec, std::span<const TokenId> tokens,
                 const SteeringVector& vector) {
    const toy::Hook cap = toy::Hook::capture(vector.layer);
    const auto result = model.forward(tokens, std::span<const toy::Hook>(&cap, 1));
    return {disparity_score(result.distribution, spec), simd::dot(result.captures[0].row(0), vector.unit_direction)};
}

void csv_precision(std::ostream& os) {
    os << std::setprecision(12);
}

const char* group_name(Group g) {
    return g == Group::a ? "A" : "B";
}

}  // namespace

double bias_score(std::span<const double> scores) {
    if (scores.empty()) {
        throw ValidationError("bias_score: empty score list");
    }
    double acc = 0.0;
    for (double s : scores) {
        acc += s * s;
    }
    return std::sqrt(acc / static_cast<double>(scores.size()));
}

std::vector<EvalPrompt> eval_prompts(const toy::ToyModel& model, const Trace& trace, Split split) {
    std::vector<EvalPrompt> out;
    for (const auto& rec : trace.records()) {
        if (rec.split != split) {
            continue;
        }
        if (!rec.text) {
            throw ValidationError("prompt " + std::to_string(rec.id) + " has no text; cannot replay it on the model");
        }
        out.push_back({rec.id, model.tokenize(*rec.text)});
    }
    return out;
}

double BiasReport::reduction() const {
    return baseline_bias > 0.0 ? 1.0 - steered_bias / baseline_bias : 0.0;
}

double BiasReport::delta_projection_correlation() const {
    std::vector<double> d, c;
    for (const auto& p : deltas) {
        d.push_back(p.s_before - p.s_after);
        c.push_back(p.comp_before);
    }
    return pearson(d, c);
}

BiasReport run_debias_eval(const toy::ToyModel& model, std::span<const EvalPrompt> prompts,
                           const SteeringVector& vector, double lambda) {
    if (prompts.empty()) {
        throw ValidationError("debias eval: no prompts");
    }
    const SteeredModel steered(model, vector,
                               InterventionConfig{InterventionMode::projection_edit, vector.layer, lambda, true});
    const ConceptSpec spec = model.concept_spec();

    BiasReport report;
    report.vector_rmse = vector.rmse;
    report.vector_pearson_r = vector.pearson_r;
    report.vector_layer = vector.layer;
    report.lambda = lambda;
    report.deltas.resize(prompts.size());
    parallel_for(prompts.size(), [&](std::size_t i) {
        const auto before = measure(model, spec, prompts[i].tokens, vector);
        const double after = disparity_score(steered.forward(prompts[i].tokens).distribution, spec);
        report.deltas[i] = PromptDelta{prompts[i].id, before.disparity, after, before.projection};
    });

    std::vector<double> sb, sa;
    for (const auto& d : report.deltas) {
        sb.push_back(d.s_before);
        sa.push_back(d.s_after);
    }
    report.baseline_bias = bias_score(sb);
    report.steered_bias = bias_score(sa);
    return report;
}

std::vector<double> default_lambda_grid() {
    std::vector<double> out;
    for (int i = 0; i < 9; ++i) {
        out.push_back(-1.0 + 0.25 * i);
    }
    return out;
}

void ChoiceTaskSpec::validate() const {
    if (prompts.empty()) {
        throw ValidationError("choice task: no prompts");
    }
    if (lambdas.empty()) {
        throw ValidationError("choice task: empty lambda grid");
    }
    for (std::size_t i = 0; i < 3; ++i) {
        if (options[i].empty()) {
            throw ValidationError("choice task: option " + std::to_string(i) + " has no tokens");
        }
        for (std::size_t j = i + 1; j < 3; ++j) {
            for (TokenId t : options[i]) {
                if (std::find(options[j].begin(), options[j].end(), t) != options[j].end()) {
                    throw ValidationError("choice task: option sets overlap on token " + std::to_string(t));
                }
            }
        }
    }
}

bool normalize_options(const std::array<double, 3>& raw, std::array<double, 3>& out) {
    const double total = raw[0] + raw[1] + raw[2];
    if (!(total > 0.0)) {
        return false;
    }
    for (std::size_t i = 0; i < 3; ++i) {
        out[i] = raw[i] / total;
    }
    return true;
}

ChoiceTaskReport choice_task_eval(const toy::ToyModel& model, const ChoiceTaskSpec& spec, const SteeringVector& vector,
                                  InterventionMode mode) {
    spec.validate();
    ChoiceTaskReport report;
    for (double lambda : spec.lambdas) {
        const SteeredModel steered(model, vector, InterventionConfig{mode, vector.layer, lambda, true});
        const std::size_t n = spec.prompts.size();
        std::vector<std::array<double, 3>> norm(n);
        std::vector<char> used(n, 0);
        std::vector<double> disp(n);
        parallel_for(n, [&](std::size_t i) {
            const auto dist = steered.forward(spec.prompts[i]).distribution;
            std::array<double, 3> raw{};
            for (std::size_t k = 0; k < 3; ++k) {
                raw[k] = concept_probability(dist, spec.options[k]);
            }
            disp[i] = raw[0] - raw[1];
            used[i] = normalize_options(raw, norm[i]) ? 1 : 0;
        });

        ChoiceRow row;
        row.lambda = lambda;
        for (std::size_t i = 0; i < n; ++i) {
            row.mean_disparity += disp[i];
            if (!used[i]) {
                ++row.n_excluded;
                continue;
            }
            ++row.n_used;
            for (std::size_t k = 0; k < 3; ++k) {
                row.mean[k] += norm[i][k];
            }
        }
        row.mean_disparity /= static_cast<double>(n);
        if (row.n_used > 0) {
            for (std::size_t k = 0; k < 3; ++k) {
                row.mean[k] /= static_cast<double>(row.n_used);
            }
            for (std::size_t i = 0; i < n; ++i) {
                if (!used[i]) {
                    continue;
                }
                for (std::size_t k = 0; k < 3; ++k) {
                    const double d = norm[i][k] - row.mean[k];
                    row.stddev[k] += d * d;
                }
            }
            for (std::size_t k = 0; k < 3; ++k) {
                row.stddev[k] = std::sqrt(row.stddev[k] / static_cast<double>(row.n_used));
            }
        }
        report.rows.push_back(row);
    }
    return report;
}

FrequencyGapReport frequency_gap_eval(std::span<const LabeledGeneration> before,
                                      std::span<const LabeledGeneration> after) {
    std::map<std::string, GapRow> rows;
    for (const auto& g : before) {
        for (const auto& label : g.labels) {
            auto& row = rows[label];
            row.label = label;
            ++(g.group == Group::a ? row.count_a_before : row.count_b_before);
        }
    }
    for (const auto& g : after) {
        for (const auto& label : g.labels) {
            auto& row = rows[label];
            row.label = label;
            ++(g.group == Group::a ? row.count_a_after : row.count_b_after);
        }
    }
    FrequencyGapReport report;
    for (auto& [label, row] : rows) {
        report.rows.push_back(row);
    }
    std::stable_sort(report.rows.begin(), report.rows.end(), [](const GapRow& x, const GapRow& y) {
        return std::labs(x.gap_before()) > std::labs(y.gap_before());
    });
    return report;
}

std::vector<std::string> extract_labels(std::span<const TokenId> generated,
                                        const std::map<TokenId, std::string>& label_vocab) {
    std::vector<std::string> out;
    for (TokenId t : generated) {
        if (auto it = label_vocab.find(t); it != label_vocab.end()) {
            out.push_back(it->second);
        }
    }
    return out;
}

FrequencyGapReport toy_frequency_gap(const toy::ToyModel& model, const SteeringVector& vector,
                                     const GapHarnessOptions& opts) {
    std::vector<TokenId> pos, neg;
    for (const auto& st : model.signal_tokens()) {
        if (st.level > 0.0) {
            pos.push_back(st.token);
        } else if (st.level < 0.0) {
            neg.push_back(st.token);
        }
    }
    if (pos.empty() || neg.empty()) {
        throw ValidationError("frequency gap harness needs positive and negative signal tokens");
    }
    std::map<TokenId, std::string> vocab;
    const auto& plant = model.plant();
    for (const auto* set : {&plant.concept_a_tokens, &plant.concept_b_tokens, &plant.neutral_tokens}) {
        for (TokenId t : *set) {
            vocab[t] = model.token_string(t);
        }
    }

    Rng rng(opts.seed);
    std::vector<std::pair<Group, std::vector<TokenId>>> prompts;
    for (Group g : {Group::a, Group::b}) {
        const auto& pool = g == Group::a ? pos : neg;
        for (std::size_t i = 0; i < opts.prompts_per_group; ++i) {
            prompts.emplace_back(g, toy::synth_prompt(model, pool[rng.below(pool.size())], rng));
        }
    }

    const SteeredModel steered(model, vector,
                               InterventionConfig{InterventionMode::projection_edit, vector.layer, 0.0, true});
    std::vector<LabeledGeneration> before(prompts.size()), after(prompts.size());
    parallel_for(prompts.size(), [&](std::size_t i) {
        auto gen = opts.generation;
        gen.seed = derive_seed(opts.seed, i);
        const auto& [group, tokens] = prompts[i];
        before[i] = {group, extract_labels(toy::generate(model, tokens, gen), vocab)};
        after[i] = {group, extract_labels(steered.generate(tokens, gen), vocab)};
    });
    return frequency_gap_eval(before, after);
}

std::vector<double> default_delta_grid() {
    return {0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3};
}

SweepReport threshold_sweep(const Trace& trace, const toy::ToyModel& model, std::span<const double> deltas,
                            Method method, double exclude_frac) {
    if (deltas.empty()) {
        throw ValidationError("sweep: empty delta list");
    }
    for (double d : deltas) {
        if (!(d >= 0.0)) {
            throw ValidationError("sweep: deltas must be >= 0");
        }
    }
    const auto train = trace.records_in(Split::train);
    std::vector<PromptId> val_ids;
    for (const auto& r : trace.records_in(Split::validation)) {
        val_ids.push_back(r.id);
    }
    const auto prompts = eval_prompts(model, trace, Split::validation);

    SweepReport report;
    report.method = method;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (double delta : deltas) {
        SweepRow row;
        row.delta = delta;
        try {
            const auto part = partition(train, delta);
            row.n_a = part.ids_a.size();
            row.n_b = part.ids_b.size();
            row.n_o = part.ids_o.size();
            const auto candidates = extract_all_layers(trace, part, method);
            const auto [sv, sel] = select_steering_vector(candidates, trace, val_ids, exclude_frac);
            const auto calibrated = calibrate_scale(sv, trace, val_ids, delta);
            const auto bias = run_debias_eval(model, prompts, calibrated, 0.0);
            row.layer = sv.layer;
            row.pearson_r = sv.pearson_r;
            row.baseline_bias = bias.baseline_bias;
            row.steered_bias = bias.steered_bias;
            row.ok = true;
            lo = std::min(lo, row.steered_bias);
            hi = std::max(hi, row.steered_bias);
        } catch (const Error& e) {
            row.error = e.what();
        }
        report.rows.push_back(row);
    }
    report.spread = hi >= lo ? hi - lo : 0.0;
    return report;
}

void write_csv(std::ostream& os, const SelectionReport& r) {
    csv_precision(os);
    os << "layer,rmse,pearson_r,excluded,degenerate,chosen\n";
    for (const auto& m : r.rows) {
        os << m.layer << ',' << m.rmse << ',' << m.pearson_r << ',' << int(m.excluded) << ',' << int(m.degenerate)
           << ',' << int(m.layer == r.chosen_layer) << '\n';
    }
}

void write_csv(std::ostream& os, const BiasReport& r) {
    csv_precision(os);
    os << "id,s_before,s_after,delta,comp_before\n";
    for (const auto& d : r.deltas) {
        os << d.id << ',' << d.s_before << ',' << d.s_after << ',' << d.s_before - d.s_after << ',' << d.comp_before
           << '\n';
    }
}

void write_scatter_csv(std::ostream& os, const BiasReport& r) {
    csv_precision(os);
    os << "comp_before,s_before,s_after\n";
    for (const auto& d : r.deltas) {
        os << d.comp_before << ',' << d.s_before << ',' << d.s_after << '\n';
    }
}

void write_csv(std::ostream& os, const ChoiceTaskReport& r) {
    csv_precision(os);
    os << "lambda,mean_a,mean_b,mean_n,std_a,std_b,std_n,mean_disparity,n_used,n_excluded\n";
    for (const auto& row : r.rows) {
        os << row.lambda << ',' << row.mean[0] << ',' << row.mean[1] << ',' << row.mean[2] << ',' << row.stddev[0]
           << ',' << row.stddev[1] << ',' << row.stddev[2] << ',' << row.mean_disparity << ',' << row.n_used << ','
           << row.n_excluded << '\n';
    }
}

void write_csv(std::ostream& os, const FrequencyGapReport& r) {
    os << "label,count_a_before,count_b_before,gap_before,count_a_after,count_b_after,gap_after\n";
    for (const auto& row : r.rows) {
        os << row.label << ',' << row.count_a_before << ',' << row.count_b_before << ',' << row.gap_before() << ','
           << row.count_a_after << ',' << row.count_b_after << ',' << row.gap_after() << '\n';
    }
}

void write_csv(std::ostream& os, const SweepReport& r) {
    csv_precision(os);
    os << "delta,ok,n_a,n_b,n_o,layer,pearson_r,baseline_bias,steered_bias,error\n";
    for (const auto& row : r.rows) {
        os << row.delta << ',' << int(row.ok) << ',' << row.n_a << ',' << row.n_b << ',' << row.n_o << ','
           << row.layer << ',' << row.pearson_r << ',' << row.baseline_bias << ',' << row.steered_bias << ",\""
           << row.error << "\"\n";
    }
}

namespace {

nlohmann::json number_or_null(double x) {
    return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json to_json(const SelectionReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& m : r.rows) {
        rows.push_back({{"layer", m.layer},
                        {"rmse", number_or_null(m.rmse)},
                        {"pearson_r", number_or_null(m.pearson_r)},
                        {"excluded", m.excluded},
                        {"degenerate", m.degenerate}});
    }
    return {{"method", method_name(r.method)},
            {"chosen_layer", r.chosen_layer},
            {"excluded_layers", r.excluded_layers},
            {"flipped", r.flipped},
            {"layers", rows}};
}

nlohmann::json to_json(const BiasReport& r) {
    nlohmann::json deltas = nlohmann::json::array();
    for (const auto& d : r.deltas) {
        deltas.push_back({{"id", d.id}, {"s_before", d.s_before}, {"s_after", d.s_after}, {"comp_before", d.comp_before}});
    }
    return {{"baseline_bias", r.baseline_bias},
            {"steered_bias", r.steered_bias},
            {"lambda", r.lambda},
            {"vector_metrics", {{"rmse", r.vector_rmse}, {"pearson_r", r.vector_pearson_r}, {"layer", r.vector_layer}}},
            {"deltas", deltas}};
}

nlohmann::json to_json(const ChoiceTaskReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows) {
        rows.push_back({{"lambda", row.lambda},
                        {"mean", row.mean},
                        {"stddev", row.stddev},
                        {"mean_disparity", row.mean_disparity},
                        {"n_used", row.n_used},
                        {"n_excluded", row.n_excluded}});
    }
    return {{"options", {"A", "B", "neutral"}}, {"rows", rows}};
}

nlohmann::json to_json(const FrequencyGapReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows) {
        rows.push_back({{"label", row.label},
                        {"before", {{group_name(Group::a), row.count_a_before}, {group_name(Group::b), row.count_b_before}, {"gap", row.gap_before()}}},
                        {"after", {{group_name(Group::a), row.count_a_after}, {group_name(Group::b), row.count_b_after}, {"gap", row.gap_after()}}}});
    }
    return {{"rows", rows}};
}

nlohmann::json to_json(const SweepReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows) {
        nlohmann::json j = {{"delta", row.delta}, {"ok", row.ok}, {"n_a", row.n_a}, {"n_b", row.n_b}, {"n_o", row.n_o}};
        if (row.ok) {
            j["layer"] = row.layer;
            j["pearson_r"] = row.pearson_r;
            j["baseline_bias"] = row.baseline_bias;
            j["steered_bias"] = row.steered_bias;
        } else {
            j["error"] = row.error;
        }
        rows.push_back(j);
    }
    return {{"method", method_name(r.method)}, {"spread", r.spread}, {"rows", rows}};
}

}  // namespace steerkit

#include "steerkit/toymodel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "steerkit/errors.hpp"
#include "steerkit/rng.hpp"
#include "steerkit/simd/kernels.hpp"

namespace steerkit::toy {
namespace {

constexpr double kInitScale = 0.02;
constexpr double kRmsEps = 1e-5;
constexpr std::size_t kMlpRatio = 4;

// Planted-circuit gains. The key/query markers are large relative to the
// 0.02-scale random embeddings so the copy head attends almost entirely to
// the signal token.
constexpr double kSignalAmplitude = 1.0;
constexpr double kKeyMarker = 1.0;
constexpr double kQueryMarker = 1.0;
constexpr double kAttentionGain = 1.2;
constexpr double kValueGain = 1.0;
constexpr double kOutputGain = 0.15;
constexpr double kUnembedGain = 1.0;
constexpr double kNeutralLogitBias = 1.5;

void fill_gaussian(std::vector<double>& w, std::size_t n, Rng& rng) {
    w.resize(n);
    for (double& x : w) {
        x = kInitScale * rng.normal();
    }
}

void normalize(std::vector<double>& v) {
    const double n = simd::norm(v);
    simd::scale(1.0 / n, v);
}

// Rows of a (rows x cols) matrix lose their components along the orthonormal basis.
void project_rows_off(std::vector<double>& m, std::size_t rows, std::size_t cols,
                      const std::vector<std::vector<double>>& basis) {
    for (std::size_t r = 0; r < rows; ++r) {
        std::span<double> row(m.data() + r * cols, cols);
        for (const auto& b : basis) {
            simd::axpy(-simd::dot(row, b), b, row);
        }
    }
}

// Columns of a (rows x cols) matrix, rows == basis dimension.
void project_cols_off(std::vector<double>& m, std::size_t rows, std::size_t cols,
                      const std::vector<std::vector<double>>& basis) {
    std::vector<double> col(rows);
    for (std::size_t c = 0; c < cols; ++c) {
        for (std::size_t r = 0; r < rows; ++r) {
            col[r] = m[r * cols + c];
        }
        for (const auto& b : basis) {
            simd::axpy(-simd::dot(col, b), b, col);
        }
        for (std::size_t r = 0; r < rows; ++r) {
            m[r * cols + c] = col[r];
        }
    }
}

void rms_normalize(std::span<const double> x, std::span<double> out) {
    const double mean_sq = simd::active().sum_sq(x.data(), x.size()) / static_cast<double>(x.size());
    const double inv = 1.0 / std::sqrt(mean_sq + kRmsEps);
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] * inv;
    }
}

double gelu(double x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

void softmax_inplace(std::span<double> x) {
    const double mx = *std::max_element(x.begin(), x.end());
    double total = 0.0;
    for (double& v : x) {
        v = std::exp(v - mx);
        total += v;
    }
    for (double& v : x) {
        v /= total;
    }
}

}  // namespace

struct ToyModel::Weights {
    struct Block {
        std::vector<double> wq, wk, wv, wo;  // d x d
        std::vector<double> w1;              // ff x d
        std::vector<double> w2;              // d x ff
    };
    std::vector<double> embed;    // vocab x d
    std::vector<double> pos;      // max_seq_len x d
    std::vector<Block> blocks;
    std::vector<double> unembed;  // vocab x d
    std::vector<double> out_bias; // vocab
    std::vector<double> direction;
};

void ModelConfig::validate() const {
    if (vocab_size < 1 || d_model < 1 || n_heads < 1 || max_seq_len < 1) {
        throw ValidationError("model config: all counts must be >= 1");
    }
    if (n_layers < 2) {
        throw ValidationError("model config: n_layers must be >= 2");
    }
    if (d_model % n_heads != 0) {
        throw ValidationError("model config: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                              std::to_string(n_heads));
    }
    if (d_model < 4) {
        throw ValidationError("model config: d_model must be >= 4 to hold the planted subspace");
    }
}

void PlantSpec::validate(const ModelConfig& cfg) const {
    if (signal_levels.empty()) {
        throw ValidationError("plant: signal_levels must be nonempty");
    }
    bool neg = false, zero = false, pos = false;
    for (double a : signal_levels) {
        if (!(a >= -1.0 && a <= 1.0)) {
            throw ValidationError("plant: signal level " + std::to_string(a) + " outside [-1, 1]");
        }
        neg |= a < 0.0;
        zero |= a == 0.0;
        pos |= a > 0.0;
    }
    if (!(neg && zero && pos)) {
        throw ValidationError("plant: signal levels must include negative, zero and positive values");
    }
    if (concept_a_tokens.empty() || concept_b_tokens.empty()) {
        throw ValidationError("plant: concept token sets must be nonempty");
    }
    if (concept_a_tokens.size() != concept_b_tokens.size()) {
        throw ValidationError("plant: concept A and B token sets must have equal size (rows are paired)");
    }
    std::set<TokenId> seen;
    for (const auto* set : {&concept_a_tokens, &concept_b_tokens, &neutral_tokens}) {
        std::set<TokenId> local;
        for (TokenId t : *set) {
            if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size) {
                throw ValidationError("plant: token id " + std::to_string(t) + " outside vocabulary");
            }
            if (!local.insert(t).second) {
                throw ValidationError("plant: duplicate token id " + std::to_string(t));
            }
            if (!seen.insert(t).second) {
                throw ValidationError("plant: token id " + std::to_string(t) + " appears in more than one token set");
            }
        }
    }
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
        throw ValidationError("plant: noise_sigma must be finite and >= 0");
    }
    if (plant_layer >= cfg.n_layers) {
        throw ValidationError("plant: plant_layer " + std::to_string(plant_layer) + " >= n_layers");
    }
    if (signal_tokens_per_level < 1) {
        throw ValidationError("plant: signal_tokens_per_level must be >= 1");
    }
    const std::size_t needed = seen.size() + 1 + signal_levels.size() * signal_tokens_per_level;
    if (needed > cfg.vocab_size) {
        throw ValidationError("plant: vocabulary of " + std::to_string(cfg.vocab_size) + " cannot hold " +
                              std::to_string(needed) + " planted tokens");
    }
}

std::pair<ModelConfig, PlantSpec> preset(std::string_view name) {
    ModelConfig cfg;
    PlantSpec plant;
    plant.signal_levels = {-0.8, -0.6, -0.4, -0.2, 0.0, 0.2, 0.4, 0.6, 0.8};
    plant.concept_a_tokens = {1, 2, 3, 4};
    plant.concept_b_tokens = {5, 6, 7, 8};
    plant.neutral_tokens = {9, 10, 11, 12};
    if (name == "default") {
        plant.noise_sigma = 0.05;
    } else if (name == "clean") {
        plant.noise_sigma = 0.0;
    } else {
        throw ValidationError("unknown preset '" + std::string(name) + "'");
    }
    return {cfg, plant};
}

std::vector<std::string> preset_names() {
    return {"default", "clean"};
}

Hook Hook::capture(std::size_t layer, PositionScope scope) {
    return Hook{HookPoint{layer, scope, HookAction::capture}, {}};
}

Hook Hook::editor(std::size_t layer, PositionScope scope, EditFn fn) {
    return Hook{HookPoint{layer, scope, HookAction::edit}, std::move(fn)};
}

ToyModel ToyModel::build(const ModelConfig& cfg, const PlantSpec& plant) {
    cfg.validate();
    plant.validate(cfg);

    const std::size_t d = cfg.d_model;
    const std::size_t v = cfg.vocab_size;
    const std::size_t ff = kMlpRatio * d;

    auto w = std::make_shared<Weights>();
    Rng rng(cfg.seed);
    fill_gaussian(w->embed, v * d, rng);
    fill_gaussian(w->pos, cfg.max_seq_len * d, rng);
    w->blocks.resize(cfg.n_layers);
    for (auto& b : w->blocks) {
        fill_gaussian(b.wq, d * d, rng);
        fill_gaussian(b.wk, d * d, rng);
        fill_gaussian(b.wv, d * d, rng);
        fill_gaussian(b.wo, d * d, rng);
        fill_gaussian(b.w1, ff * d, rng);
        fill_gaussian(b.w2, d * ff, rng);
    }
    fill_gaussian(w->unembed, v * d, rng);
    w->out_bias.assign(v, 0.0);

    // Planted orthonormal subspace: concept direction, query marker, key marker.
    Rng plant_rng(plant.direction_seed);
    std::vector<std::vector<double>> basis;
    for (int k = 0; k < 3; ++k) {
        std::vector<double> b(d);
        for (double& x : b) {
            x = plant_rng.normal();
        }
        for (const auto& prev : basis) {
            simd::axpy(-simd::dot(b, prev), prev, b);
        }
        normalize(b);
        basis.push_back(std::move(b));
    }
    const auto& dir = basis[0];
    const auto& query_dir = basis[1];
    const auto& key_dir = basis[2];
    w->direction = dir;

    project_rows_off(w->embed, v, d, basis);
    project_rows_off(w->pos, cfg.max_seq_len, d, basis);
    project_rows_off(w->unembed, v, d, basis);
    for (auto& b : w->blocks) {
        project_rows_off(b.wq, d, d, basis);
        project_rows_off(b.wk, d, d, basis);
        project_rows_off(b.wv, d, d, basis);
        project_rows_off(b.w1, ff, d, basis);
        project_cols_off(b.wo, d, d, basis);
        project_cols_off(b.w2, d, ff, basis);
    }

    ToyModel model;
    model.cfg_ = cfg;
    model.plant_ = plant;

    std::set<TokenId> reserved(plant.concept_a_tokens.begin(), plant.concept_a_tokens.end());
    reserved.insert(plant.concept_b_tokens.begin(), plant.concept_b_tokens.end());
    reserved.insert(plant.neutral_tokens.begin(), plant.neutral_tokens.end());
    std::vector<TokenId> free_ids;
    for (std::size_t t = 0; t < v; ++t) {
        if (!reserved.contains(static_cast<TokenId>(t))) {
            free_ids.push_back(static_cast<TokenId>(t));
        }
    }
    std::size_t next = 0;
    model.query_token_ = free_ids[next++];
    for (double level : plant.signal_levels) {
        for (std::size_t k = 0; k < plant.signal_tokens_per_level; ++k) {
            model.signal_tokens_.push_back({free_ids[next++], level});
        }
    }
    model.filler_tokens_.assign(free_ids.begin() + static_cast<std::ptrdiff_t>(next), free_ids.end());

    auto embed_row = [&](TokenId t) { return std::span<double>(w->embed.data() + static_cast<std::size_t>(t) * d, d); };
    auto unembed_row = [&](TokenId t) {
        return std::span<double>(w->unembed.data() + static_cast<std::size_t>(t) * d, d);
    };

    Rng noise_rng(derive_seed(plant.direction_seed, 0x5e));
    const double noise_scale = plant.noise_sigma / std::sqrt(static_cast<double>(d));
    for (const auto& sig : model.signal_tokens_) {
        auto row = embed_row(sig.token);
        simd::axpy(kSignalAmplitude * sig.level, dir, row);
        simd::axpy(kKeyMarker, key_dir, row);
        for (double& x : row) {
            x += noise_scale * noise_rng.normal();
        }
    }
    simd::axpy(kQueryMarker, query_dir, embed_row(model.query_token_));

    for (std::size_t i = 0; i < plant.concept_a_tokens.size(); ++i) {
        auto a = unembed_row(plant.concept_a_tokens[i]);
        auto b = unembed_row(plant.concept_b_tokens[i]);
        std::copy(a.begin(), a.end(), b.begin());
        simd::axpy(kUnembedGain, dir, a);
        simd::axpy(-kUnembedGain, dir, b);
    }
    for (TokenId t : plant.neutral_tokens) {
        w->out_bias[static_cast<std::size_t>(t)] = kNeutralLogitBias;
    }

    // Copy head: head 0 of the plant layer, first coordinate of its subspace.
    auto& blk = w->blocks[plant.plant_layer];
    simd::axpy(kAttentionGain, query_dir, std::span<double>(blk.wq.data(), d));
    simd::axpy(kAttentionGain, key_dir, std::span<double>(blk.wk.data(), d));
    // The copied coordinate carries only d: its value row and output column
    // are exactly the planted direction.
    for (std::size_t c = 0; c < d; ++c) {
        blk.wv[c] = kValueGain * dir[c];
    }
    for (std::size_t r = 0; r < d; ++r) {
        blk.wo[r * d] = kOutputGain * dir[r];
    }

    model.vocab_.resize(v);
    for (std::size_t t = 0; t < v; ++t) {
        model.vocab_[t] = "t" + std::to_string(t);
    }
    auto name_set = [&](const std::vector<TokenId>& ids, const char* prefix) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
            model.vocab_[static_cast<std::size_t>(ids[i])] = prefix + std::to_string(i);
        }
    };
    name_set(plant.concept_a_tokens, "a");
    name_set(plant.concept_b_tokens, "b");
    name_set(plant.neutral_tokens, "n");
    model.vocab_[static_cast<std::size_t>(model.query_token_)] = "<q>";
    for (std::size_t i = 0; i < model.signal_tokens_.size(); ++i) {
        model.vocab_[static_cast<std::size_t>(model.signal_tokens_[i].token)] = "s" + std::to_string(i);
    }

    model.weights_ = std::move(w);
    return model;
}

std::span<const double> ToyModel::planted_direction() const {
    return weights_->direction;
}

ConceptSpec ToyModel::concept_spec() const {
    return ConceptSpec{"A", "B", plant_.concept_a_tokens, plant_.concept_b_tokens};
}

std::string ToyModel::token_string(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
        throw ValidationError("token id " + std::to_string(id) + " outside vocabulary");
    }
    return vocab_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> ToyModel::token_id(std::string_view text) const {
    for (std::size_t t = 0; t < vocab_.size(); ++t) {
        if (vocab_[t] == text) {
            return static_cast<TokenId>(t);
        }
    }
    return std::nullopt;
}

std::string ToyModel::detokenize(std::span<const TokenId> tokens) const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) {
            out += ' ';
        }
        out += token_string(tokens[i]);
    }
    return out;
}

std::vector<TokenId> ToyModel::tokenize(std::string_view text) const {
    std::vector<TokenId> out;
    std::istringstream in{std::string(text)};
    std::string word;
    while (in >> word) {
        const auto id = token_id(word);
        if (!id) {
            throw ValidationError("unknown toy token '" + word + "'");
        }
        out.push_back(*id);
    }
    return out;
}

ForwardResult ToyModel::forward(std::span<const TokenId> tokens, std::span<const Hook> hooks) const {
    const std::size_t n_tok = tokens.size();
    const std::size_t d = cfg_.d_model;
    const std::size_t ff = kMlpRatio * d;
    const std::size_t n_heads = cfg_.n_heads;
    const std::size_t head_dim = d / n_heads;
    if (n_tok == 0) {
        throw ValidationError("forward: empty token sequence");
    }
    if (n_tok > cfg_.max_seq_len) {
        throw ValidationError("forward: sequence length " + std::to_string(n_tok) + " exceeds max_seq_len " +
                              std::to_string(cfg_.max_seq_len));
    }
    for (TokenId t : tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= cfg_.vocab_size) {
            throw ValidationError("forward: token id " + std::to_string(t) + " out of range");
        }
    }
    for (const auto& h : hooks) {
        if (h.point.layer >= cfg_.n_layers) {
            throw ValidationError("forward: hook layer " + std::to_string(h.point.layer) + " >= n_layers " +
                                  std::to_string(cfg_.n_layers));
        }
        if (h.point.action == HookAction::edit && !h.edit) {
            throw ValidationError("forward: edit hook without an edit function");
        }
    }

    const auto& k = simd::active();
    const Weights& w = *weights_;

    Matrix x(n_tok, d);
    for (std::size_t t = 0; t < n_tok; ++t) {
        auto row = x.row(t);
        const double* e = w.embed.data() + static_cast<std::size_t>(tokens[t]) * d;
        const double* p = w.pos.data() + t * d;
        for (std::size_t i = 0; i < d; ++i) {
            row[i] = e[i] + p[i];
        }
    }

    ForwardResult result;
    result.captures.resize(hooks.size());

    Matrix normed(n_tok, d), q(n_tok, d), key(n_tok, d), val(n_tok, d), attn(n_tok, d);
    std::vector<double> tmp(d), hidden(ff), scores(n_tok);
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(head_dim));

    for (std::size_t layer = 0; layer < cfg_.n_layers; ++layer) {
        const auto& blk = w.blocks[layer];

        for (std::size_t t = 0; t < n_tok; ++t) {
            rms_normalize(x.row(t), normed.row(t));
            k.matvec(blk.wq.data(), normed.row(t).data(), q.row(t).data(), d, d);
            k.matvec(blk.wk.data(), normed.row(t).data(), key.row(t).data(), d, d);
            k.matvec(blk.wv.data(), normed.row(t).data(), val.row(t).data(), d, d);
        }
        std::fill(attn.data.begin(), attn.data.end(), 0.0);
        for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t off = h * head_dim;
            for (std::size_t t = 0; t < n_tok; ++t) {
                std::span<double> sc(scores.data(), t + 1);
                for (std::size_t s = 0; s <= t; ++s) {
                    sc[s] = k.dot(q.row(t).data() + off, key.row(s).data() + off, head_dim) * inv_sqrt_hd;
                }
                softmax_inplace(sc);
                double* out = attn.row(t).data() + off;
                for (std::size_t s = 0; s <= t; ++s) {
                    k.axpy(sc[s], val.row(s).data() + off, out, head_dim);
                }
            }
        }
        for (std::size_t t = 0; t < n_tok; ++t) {
            k.matvec(blk.wo.data(), attn.row(t).data(), tmp.data(), d, d);
            k.axpy(1.0, tmp.data(), x.row(t).data(), d);
        }

        for (std::size_t t = 0; t < n_tok; ++t) {
            rms_normalize(x.row(t), normed.row(t));
            k.matvec(blk.w1.data(), normed.row(t).data(), hidden.data(), ff, d);
            for (double& hv : hidden) {
                hv = gelu(hv);
            }
            k.matvec(blk.w2.data(), hidden.data(), tmp.data(), d, ff);
            k.axpy(1.0, tmp.data(), x.row(t).data(), d);
        }

        for (const auto& h : hooks) {
            if (h.point.layer != layer || h.point.action != HookAction::edit) {
                continue;
            }
            const std::size_t first = h.point.scope == PositionScope::all_tokens ? 0 : n_tok - 1;
            for (std::size_t t = first; t < n_tok; ++t) {
                h.edit(x.row(t));
            }
        }
        for (std::size_t i = 0; i < hooks.size(); ++i) {
            const auto& h = hooks[i];
            if (h.point.layer != layer || h.point.action != HookAction::capture) {
                continue;
            }
            const std::size_t first = h.point.scope == PositionScope::all_tokens ? 0 : n_tok - 1;
            Matrix cap(n_tok - first, d);
            for (std::size_t t = first; t < n_tok; ++t) {
                auto src = x.row(t);
                std::copy(src.begin(), src.end(), cap.row(t - first).begin());
            }
            result.captures[i] = std::move(cap);
        }
    }

    std::vector<double> final_norm(d);
    rms_normalize(x.row(n_tok - 1), final_norm);
    result.distribution.resize(cfg_.vocab_size);
    k.matvec(w.unembed.data(), final_norm.data(), result.distribution.data(), cfg_.vocab_size, d);
    for (std::size_t t = 0; t < cfg_.vocab_size; ++t) {
        result.distribution[t] += w.out_bias[t];
    }
    softmax_inplace(result.distribution);
    return result;
}

std::vector<TokenId> synth_prompt(const ToyModel& model, std::optional<TokenId> signal, Rng& rng) {
    const auto& filler = model.filler_tokens();
    if (filler.empty()) {
        throw ValidationError("synth_prompt: model has no filler tokens");
    }
    const std::size_t n = kMinFiller + rng.below(kMaxFiller - kMinFiller + 1);
    std::vector<TokenId> out;
    out.reserve(n + 2);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(filler[rng.below(filler.size())]);
    }
    if (signal) {
        out.insert(out.begin() + static_cast<std::ptrdiff_t>(rng.below(n + 1)), *signal);
    }
    out.push_back(model.query_token());
    return out;
}

std::vector<TokenId> generate(const ToyModel& model, std::span<const TokenId> prompt, const GenerationOptions& opts,
                              std::span<const Hook> hooks) {
    if (opts.temperature < 0.0) {
        throw ValidationError("generate: temperature must be >= 0");
    }
    std::vector<TokenId> seq(prompt.begin(), prompt.end());
    std::vector<TokenId> produced;
    Rng rng(opts.seed);
    for (std::size_t step = 0; step < opts.max_new_tokens && seq.size() < model.config().max_seq_len; ++step) {
        const auto result = model.forward(seq, hooks);
        const auto& dist = result.distribution;
        TokenId next = 0;
        if (opts.temperature == 0.0) {
            next = static_cast<TokenId>(std::max_element(dist.begin(), dist.end()) - dist.begin());
        } else {
            std::vector<double> logp(dist.size());
            for (std::size_t i = 0; i < dist.size(); ++i) {
                logp[i] = std::log(std::max(dist[i], 1e-300)) / opts.temperature;
            }
            softmax_inplace(logp);
            double u = rng.uniform();
            next = static_cast<TokenId>(logp.size() - 1);
            for (std::size_t i = 0; i < logp.size(); ++i) {
                u -= logp[i];
                if (u < 0.0) {
                    next = static_cast<TokenId>(i);
                    break;
                }
            }
        }
        seq.push_back(next);
        produced.push_back(next);
    }
    return produced;
}

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
    j = nlohmann::json{{"vocab_size", cfg.vocab_size}, {"d_model", cfg.d_model},
                       {"n_layers", cfg.n_layers},     {"n_heads", cfg.n_heads},
                       {"max_seq_len", cfg.max_seq_len}, {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
    j.at("vocab_size").get_to(cfg.vocab_size);
    j.at("d_model").get_to(cfg.d_model);
    j.at("n_layers").get_to(cfg.n_layers);
    j.at("n_heads").get_to(cfg.n_heads);
    j.at("max_seq_len").get_to(cfg.max_seq_len);
    j.at("seed").get_to(cfg.seed);
}

void to_json(nlohmann::json& j, const PlantSpec& plant) {
    j = nlohmann::json{{"direction_seed", plant.direction_seed},
                       {"signal_levels", plant.signal_levels},
                       {"concept_a_tokens", plant.concept_a_tokens},
                       {"concept_b_tokens", plant.concept_b_tokens},
                       {"neutral_tokens", plant.neutral_tokens},
                       {"noise_sigma", plant.noise_sigma},
                       {"plant_layer", plant.plant_layer},
                       {"signal_tokens_per_level", plant.signal_tokens_per_level}};
}

void from_json(const nlohmann::json& j, PlantSpec& plant) {
    j.at("direction_seed").get_to(plant.direction_seed);
    j.at("signal_levels").get_to(plant.signal_levels);
    j.at("concept_a_tokens").get_to(plant.concept_a_tokens);
    j.at("concept_b_tokens").get_to(plant.concept_b_tokens);
    j.at("neutral_tokens").get_to(plant.neutral_tokens);
    j.at("noise_sigma").get_to(plant.noise_sigma);
    j.at("plant_layer").get_to(plant.plant_layer);
    j.at("signal_tokens_per_level").get_to(plant.signal_tokens_per_level);
}

}  // namespace steerkit::toy

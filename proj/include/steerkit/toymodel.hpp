#pragma once

// A small deterministic pre-norm decoder-only transformer with residual
// stream hooks and a planted concept direction.
//
// Planting: a unit direction d is written into the embeddings of "signal"
// tokens (scaled by each token's signal level) and into the unembedding rows
// of the concept tokens (+d for A, -d for B, on a shared base row per A/B
// pair). One attention head at `plant_layer` copies the d component from the
// signal token to the final "query" token. Every other weight is kept off the
// planted subspace, so the last-token residual carries d from `plant_layer`
// onward and nothing before it.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "steerkit/matrix.hpp"
#include "steerkit/rng.hpp"
#include "steerkit/types.hpp"

namespace steerkit::toy {

struct ModelConfig {
    std::size_t vocab_size = 128;
    std::size_t d_model = 64;
    std::size_t n_layers = 6;
    std::size_t n_heads = 4;
    std::size_t max_seq_len = 32;
    std::uint64_t seed = 7;

    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct PlantSpec {
    std::uint64_t direction_seed = 11;
    std::vector<double> signal_levels;
    std::vector<TokenId> concept_a_tokens;
    std::vector<TokenId> concept_b_tokens;
    std::vector<TokenId> neutral_tokens;
    double noise_sigma = 0.0;
    std::size_t plant_layer = 2;
    std::size_t signal_tokens_per_level = 4;

    void validate(const ModelConfig& cfg) const;
    friend bool operator==(const PlantSpec&, const PlantSpec&) = default;
};

/// Named (config, plant) pairs: "default" (mild embedding noise) and
/// "clean" (noise_sigma = 0).
std::pair<ModelConfig, PlantSpec> preset(std::string_view name);
std::vector<std::string> preset_names();

enum class PositionScope { last_token, all_tokens };
enum class HookAction { capture, edit };

/// Residual stream location: the output of block `layer` after its residual add.
struct HookPoint {
    std::size_t layer = 0;
    PositionScope scope = PositionScope::last_token;
    HookAction action = HookAction::capture;
};

using EditFn = std::function<void(std::span<double> activation)>;

struct Hook {
    HookPoint point;
    EditFn edit;  // set iff point.action == edit

    static Hook capture(std::size_t layer, PositionScope scope = PositionScope::last_token);
    static Hook editor(std::size_t layer, PositionScope scope, EditFn fn);
};

struct ForwardResult {
    std::vector<double> distribution;
    /// captures[i] belongs to hooks[i]; one row per captured position, empty
    /// for edit hooks.
    std::vector<Matrix> captures;
};

struct SignalToken {
    TokenId token;
    double level;
};

class ToyModel {
public:
    /// Builds the planted model. Identical (cfg, plant) gives bit-identical weights.
    static ToyModel build(const ModelConfig& cfg, const PlantSpec& plant);

    /// Next-token distribution at the final position. Hooks at the same layer
    /// run in order: all edits first, then captures.
    ForwardResult forward(std::span<const TokenId> tokens, std::span<const Hook> hooks = {}) const;

    const ModelConfig& config() const { return cfg_; }
    const PlantSpec& plant() const { return plant_; }
    std::span<const double> planted_direction() const;

    TokenId query_token() const { return query_token_; }
    const std::vector<SignalToken>& signal_tokens() const { return signal_tokens_; }
    const std::vector<TokenId>& filler_tokens() const { return filler_tokens_; }
    ConceptSpec concept_spec() const;

    std::string token_string(TokenId id) const;
    std::optional<TokenId> token_id(std::string_view text) const;
    std::string detokenize(std::span<const TokenId> tokens) const;
    std::vector<TokenId> tokenize(std::string_view text) const;

private:
    struct Weights;

    ToyModel() = default;

    ModelConfig cfg_;
    PlantSpec plant_;
    std::shared_ptr<const Weights> weights_;
    TokenId query_token_ = 0;
    std::vector<SignalToken> signal_tokens_;
    std::vector<TokenId> filler_tokens_;
    std::vector<std::string> vocab_;
};

inline constexpr std::size_t kMinFiller = 2;
inline constexpr std::size_t kMaxFiller = 8;

/// Filler context of kMinFiller..kMaxFiller tokens, the signal token (if any)
/// at a random position within it, and the query token last.
std::vector<TokenId> synth_prompt(const ToyModel& model, std::optional<TokenId> signal, Rng& rng);

struct GenerationOptions {
    std::size_t max_new_tokens = 4;
    double temperature = 0.0;  // 0 = greedy
    std::uint64_t seed = 0;
};

/// Autoregressive decoding. Hooks stay registered for every step and apply to
/// every position of the growing sequence. Stops at max_seq_len.
std::vector<TokenId> generate(const ToyModel& model, std::span<const TokenId> prompt, const GenerationOptions& opts,
                              std::span<const Hook> hooks = {});

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);
void to_json(nlohmann::json& j, const PlantSpec& plant);
void from_json(const nlohmann::json& j, PlantSpec& plant);

}  // namespace steerkit::toy

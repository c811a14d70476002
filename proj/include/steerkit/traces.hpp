#pragma once

// On-disk activation traces and steering-vector files.
//
// Trace directory:
//   manifest.json   model id, dimensions, concept spec, prompt count, dtype
//   prompts.jsonl   one PromptRecord per line, in row order
//   layer_<k>.bin   n_prompts x d_model float32 little-endian, row-major
//
// Vector file: one JSON document holding a unit direction and its metrics.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "steerkit/types.hpp"

namespace steerkit {

inline constexpr int kTraceSchemaVersion = 1;
inline constexpr const char* kTraceDtype = "float32-le";

struct TraceManifest {
    std::string model_id;
    std::size_t d_model = 0;
    std::size_t n_layers = 0;
    ConceptSpec concept_spec;
    /// Token strings parallel to concept_spec.tokens_a / tokens_b (may be empty).
    std::vector<std::string> token_strings_a;
    std::vector<std::string> token_strings_b;
    std::size_t n_prompts = 0;
    std::string dtype = kTraceDtype;
    int schema_version = kTraceSchemaVersion;
    /// {"config": ..., "plant": ...} when the trace came from the toy model.
    std::optional<nlohmann::json> toy_model;
    /// Free-form producer notes, carried through unchanged.
    nlohmann::json metadata = nlohmann::json::object();

    void validate() const;
};

/// Last-token residual activations of every prompt at one layer.
struct LayerBlock {
    std::size_t layer = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> values;

    std::span<const float> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

    friend bool operator==(const LayerBlock&, const LayerBlock&) = default;
};

/// Validated in-memory trace. Construction checks every invariant of the
/// manifest, records and blocks.
class Trace {
public:
    Trace(TraceManifest manifest, std::vector<PromptRecord> records, std::vector<LayerBlock> layers);

    const TraceManifest& manifest() const { return manifest_; }
    const std::vector<PromptRecord>& records() const { return records_; }
    const std::vector<LayerBlock>& layers() const { return layers_; }
    const LayerBlock& layer(std::size_t l) const;
    std::size_t n_layers() const { return layers_.size(); }
    std::size_t d_model() const { return manifest_.d_model; }

    bool contains(PromptId id) const { return index_.contains(id); }
    std::size_t row_of(PromptId id) const;
    const PromptRecord& record(PromptId id) const { return records_[row_of(id)]; }
    std::span<const float> activation(PromptId id, std::size_t layer) const;

    std::vector<PromptRecord> records_in(Split split) const;

private:
    TraceManifest manifest_;
    std::vector<PromptRecord> records_;
    std::vector<LayerBlock> layers_;
    std::unordered_map<PromptId, std::size_t> index_;
};

/// Writes manifest.json, prompts.jsonl and layer_<k>.bin into `dir`
/// (created if missing). Validates first; nothing is written on error.
void write_trace(const TraceManifest& manifest, std::span<const PromptRecord> records,
                 std::span<const LayerBlock> layers, const std::filesystem::path& dir);
void write_trace(const Trace& trace, const std::filesystem::path& dir);

Trace read_trace(const std::filesystem::path& dir);

struct VectorFile {
    Method method = Method::wmd;
    std::size_t layer = 0;
    std::vector<double> direction;
    double scale = 1.0;
    double rmse = 0.0;
    double pearson_r = 0.0;
    std::string manifest_ref;

    /// direction unit-norm within 1e-9, scale finite and > 0.
    void validate() const;
};

void write_vector_file(const VectorFile& vf, const std::filesystem::path& path);
VectorFile read_vector_file(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const ConceptSpec& spec);
void to_json(nlohmann::json& j, const PromptRecord& rec);
PromptRecord prompt_record_from_json(const nlohmann::json& j);
nlohmann::json manifest_to_json(const TraceManifest& m);
TraceManifest manifest_from_json(const nlohmann::json& j);
nlohmann::json vector_file_to_json(const VectorFile& vf);
VectorFile vector_file_from_json(const nlohmann::json& j);

/// Concept spec document: {"name_a", "name_b", "tokens_a", "tokens_b"} where
/// tokens are strings (resolved by `resolve`) or integer ids.
ConceptSpec concept_spec_from_json(const nlohmann::json& j,
                                   const std::function<std::optional<TokenId>(const std::string&)>& resolve = {});

}  // namespace steerkit

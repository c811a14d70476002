#include "steerkit/traces.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <fstream>
#include <set>
#include <sstream>

#include "steerkit/errors.hpp"

namespace steerkit {
namespace fs = std::filesystem;
namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559, "float32 storage requires IEEE-754");

std::string layer_file_name(std::size_t layer) {
    return "layer_" + std::to_string(layer) + ".bin";
}

std::uint32_t byteswap32(std::uint32_t v) {
    return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

void write_le_floats(std::ostream& out, std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    } else {
        for (float f : values) {
            const std::uint32_t le = byteswap32(std::bit_cast<std::uint32_t>(f));
            out.write(reinterpret_cast<const char*>(&le), 4);
        }
    }
}

std::vector<float> read_le_floats(const fs::path& path, std::size_t layer, std::size_t expected_count) {
    std::error_code ec;
    const auto size = fs::file_size(path, ec);
    if (ec) {
        throw FormatError("layer " + std::to_string(layer) + ": cannot stat " + path.string() + ": " + ec.message());
    }
    const std::uintmax_t expected_bytes = static_cast<std::uintmax_t>(expected_count) * 4u;
    if (size != expected_bytes) {
        throw FormatError("layer " + std::to_string(layer) + ": " + path.filename().string() + " has " +
                          std::to_string(size) + " bytes, expected " + std::to_string(expected_bytes) +
                          " (n_prompts x d_model x 4)");
    }
    std::vector<float> values(expected_count);
    std::ifstream in(path, std::ios::binary);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(expected_bytes));
    if (!in) {
        throw FormatError("layer " + std::to_string(layer) + ": short read from " + path.string());
    }
    if constexpr (std::endian::native != std::endian::little) {
        for (float& f : values) {
            f = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(f)));
        }
    }
    return values;
}

void check_layers(const TraceManifest& m, std::span<const LayerBlock> layers) {
    if (layers.size() != m.n_layers) {
        throw ValidationError("trace: " + std::to_string(layers.size()) + " layer blocks for manifest n_layers " +
                              std::to_string(m.n_layers));
    }
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const auto& b = layers[k];
        const auto where = "layer " + std::to_string(k) + ": ";
        if (b.layer != k) {
            throw ValidationError(where + "block is labelled layer " + std::to_string(b.layer));
        }
        if (b.rows != m.n_prompts) {
            throw ValidationError(where + "row count " + std::to_string(b.rows) + " != n_prompts " +
                                  std::to_string(m.n_prompts));
        }
        if (b.cols != m.d_model) {
            throw ValidationError(where + "column count " + std::to_string(b.cols) + " != d_model " +
                                  std::to_string(m.d_model));
        }
        if (b.values.size() != b.rows * b.cols) {
            throw ValidationError(where + "payload size does not match rows x cols");
        }
        for (std::size_t i = 0; i < b.values.size(); ++i) {
            if (!std::isfinite(b.values[i])) {
                throw ValidationError(where + "non-finite activation at row " + std::to_string(i / b.cols) +
                                      ", column " + std::to_string(i % b.cols));
            }
        }
    }
}

void check_records(const TraceManifest& m, std::span<const PromptRecord> records) {
    if (records.size() != m.n_prompts) {
        throw ValidationError("trace: manifest n_prompts " + std::to_string(m.n_prompts) + " but " +
                              std::to_string(records.size()) + " prompt records");
    }
    std::set<PromptId> ids;
    for (const auto& r : records) {
        r.validate();
        if (!ids.insert(r.id).second) {
            throw ValidationError("trace: duplicate prompt id " + std::to_string(r.id));
        }
    }
}

nlohmann::json token_list(const std::vector<TokenId>& ids, const std::vector<std::string>& strings) {
    auto arr = nlohmann::json::array();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        nlohmann::json t{{"id", ids[i]}};
        if (i < strings.size()) {
            t["text"] = strings[i];
        }
        arr.push_back(std::move(t));
    }
    return arr;
}

template <typename Fn>
auto with_format_errors(const std::string& what, Fn&& fn) {
    try {
        return fn();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(what + ": " + e.what());
    }
}

nlohmann::json parse_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    return with_format_errors(path.string(), [&] { return nlohmann::json::parse(in); });
}

}  // namespace

void TraceManifest::validate() const {
    if (schema_version != kTraceSchemaVersion) {
        throw ValidationError("manifest: unsupported schema_version " + std::to_string(schema_version) +
                              " (supported: " + std::to_string(kTraceSchemaVersion) + ")");
    }
    if (dtype != kTraceDtype) {
        throw ValidationError("manifest: unsupported dtype '" + dtype + "' (expected float32-le)");
    }
    if (n_layers < 1) {
        throw ValidationError("manifest: n_layers must be >= 1");
    }
    if (n_prompts < 1) {
        throw ValidationError("manifest: n_prompts must be >= 1");
    }
    if (d_model < 1) {
        throw ValidationError("manifest: d_model must be >= 1");
    }
    concept_spec.validate();
    if ((!token_strings_a.empty() && token_strings_a.size() != concept_spec.tokens_a.size()) ||
        (!token_strings_b.empty() && token_strings_b.size() != concept_spec.tokens_b.size())) {
        throw ValidationError("manifest: concept token strings do not line up with token ids");
    }
}

Trace::Trace(TraceManifest manifest, std::vector<PromptRecord> records, std::vector<LayerBlock> layers)
    : manifest_(std::move(manifest)), records_(std::move(records)), layers_(std::move(layers)) {
    manifest_.validate();
    check_records(manifest_, records_);
    check_layers(manifest_, layers_);
    index_.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
        index_.emplace(records_[i].id, i);
    }
}

const LayerBlock& Trace::layer(std::size_t l) const {
    if (l >= layers_.size()) {
        throw ValidationError("trace: layer " + std::to_string(l) + " out of range (n_layers " +
                              std::to_string(layers_.size()) + ")");
    }
    return layers_[l];
}

std::size_t Trace::row_of(PromptId id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) {
        throw ValidationError("trace: unknown prompt id " + std::to_string(id));
    }
    return it->second;
}

std::span<const float> Trace::activation(PromptId id, std::size_t layer) const {
    return this->layer(layer).row(row_of(id));
}

std::vector<PromptRecord> Trace::records_in(Split split) const {
    std::vector<PromptRecord> out;
    for (const auto& r : records_) {
        if (r.split == split) {
            out.push_back(r);
        }
    }
    return out;
}

void to_json(nlohmann::json& j, const ConceptSpec& spec) {
    j = nlohmann::json{{"name_a", spec.name_a}, {"name_b", spec.name_b}, {"tokens_a", spec.tokens_a},
                       {"tokens_b", spec.tokens_b}};
}

void to_json(nlohmann::json& j, const PromptRecord& rec) {
    j = nlohmann::json{{"id", rec.id}};
    if (rec.text) {
        j["text"] = *rec.text;
    }
    j["token_count"] = rec.token_count;
    j["p_a"] = rec.p_a;
    j["p_b"] = rec.p_b;
    j["disparity"] = rec.disparity;
    j["split"] = std::string(split_name(rec.split));
}

PromptRecord prompt_record_from_json(const nlohmann::json& j) {
    return with_format_errors("prompt record", [&] {
        PromptRecord r;
        r.id = j.at("id").get<PromptId>();
        if (j.contains("text") && !j.at("text").is_null()) {
            r.text = j.at("text").get<std::string>();
        }
        r.token_count = j.at("token_count").get<std::size_t>();
        r.p_a = j.at("p_a").get<double>();
        r.p_b = j.at("p_b").get<double>();
        r.disparity = j.at("disparity").get<double>();
        try {
            r.split = parse_split(j.at("split").get<std::string>());
        } catch (const ValidationError& e) {
            throw FormatError(std::string("prompt record: ") + e.what());
        }
        return r;
    });
}

nlohmann::json manifest_to_json(const TraceManifest& m) {
    nlohmann::json j{{"schema_version", m.schema_version},
                     {"model_id", m.model_id},
                     {"d_model", m.d_model},
                     {"n_layers", m.n_layers},
                     {"n_prompts", m.n_prompts},
                     {"dtype", m.dtype},
                     {"concept_spec",
                      {{"name_a", m.concept_spec.name_a},
                       {"name_b", m.concept_spec.name_b},
                       {"tokens_a", token_list(m.concept_spec.tokens_a, m.token_strings_a)},
                       {"tokens_b", token_list(m.concept_spec.tokens_b, m.token_strings_b)}}}};
    if (m.toy_model) {
        j["toy_model"] = *m.toy_model;
    }
    if (!m.metadata.empty()) {
        j["metadata"] = m.metadata;
    }
    return j;
}

TraceManifest manifest_from_json(const nlohmann::json& j) {
    return with_format_errors("manifest", [&] {
        TraceManifest m;
        m.schema_version = j.at("schema_version").get<int>();
        m.model_id = j.at("model_id").get<std::string>();
        m.d_model = j.at("d_model").get<std::size_t>();
        m.n_layers = j.at("n_layers").get<std::size_t>();
        m.n_prompts = j.at("n_prompts").get<std::size_t>();
        m.dtype = j.at("dtype").get<std::string>();
        const auto& cs = j.at("concept_spec");
        m.concept_spec.name_a = cs.at("name_a").get<std::string>();
        m.concept_spec.name_b = cs.at("name_b").get<std::string>();
        auto read_tokens = [](const nlohmann::json& arr, std::vector<TokenId>& ids, std::vector<std::string>& strings) {
            bool all_text = true;
            std::vector<std::string> texts;
            for (const auto& t : arr) {
                ids.push_back(t.at("id").get<TokenId>());
                if (t.contains("text")) {
                    texts.push_back(t.at("text").get<std::string>());
                } else {
                    all_text = false;
                }
            }
            if (all_text) {
                strings = std::move(texts);
            }
        };
        read_tokens(cs.at("tokens_a"), m.concept_spec.tokens_a, m.token_strings_a);
        read_tokens(cs.at("tokens_b"), m.concept_spec.tokens_b, m.token_strings_b);
        if (j.contains("toy_model")) {
            m.toy_model = j.at("toy_model");
        }
        if (j.contains("metadata")) {
            m.metadata = j.at("metadata");
        }
        return m;
    });
}

void write_trace(const TraceManifest& manifest, std::span<const PromptRecord> records,
                 std::span<const LayerBlock> layers, const fs::path& dir) {
    manifest.validate();
    check_records(manifest, records);
    check_layers(manifest, layers);

    fs::create_directories(dir);
    {
        std::ofstream out(dir / "manifest.json");
        out << manifest_to_json(manifest).dump(2) << '\n';
        if (!out) {
            throw Error("cannot write " + (dir / "manifest.json").string());
        }
    }
    {
        std::ofstream out(dir / "prompts.jsonl");
        for (const auto& r : records) {
            out << nlohmann::json(r).dump() << '\n';
        }
        if (!out) {
            throw Error("cannot write " + (dir / "prompts.jsonl").string());
        }
    }
    for (const auto& b : layers) {
        const auto path = dir / layer_file_name(b.layer);
        std::ofstream out(path, std::ios::binary);
        write_le_floats(out, b.values);
        if (!out) {
            throw Error("cannot write " + path.string());
        }
    }
}

void write_trace(const Trace& trace, const fs::path& dir) {
    write_trace(trace.manifest(), trace.records(), trace.layers(), dir);
}

Trace read_trace(const fs::path& dir) {
    if (!fs::is_directory(dir)) {
        throw FormatError("trace directory not found: " + dir.string());
    }
    auto manifest = manifest_from_json(parse_json_file(dir / "manifest.json"));
    try {
        manifest.validate();
    } catch (const ValidationError& e) {
        throw FormatError(e.what());
    }

    std::vector<PromptRecord> records;
    {
        std::ifstream in(dir / "prompts.jsonl");
        if (!in) {
            throw FormatError("cannot open " + (dir / "prompts.jsonl").string());
        }
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) {
                continue;
            }
            const auto j = with_format_errors("prompts.jsonl line " + std::to_string(line_no),
                                              [&] { return nlohmann::json::parse(line); });
            records.push_back(prompt_record_from_json(j));
        }
    }

    std::vector<LayerBlock> layers;
    for (std::size_t k = 0; k < manifest.n_layers; ++k) {
        const auto path = dir / layer_file_name(k);
        if (!fs::exists(path)) {
            throw FormatError("layer " + std::to_string(k) + ": missing " + path.string());
        }
        LayerBlock b;
        b.layer = k;
        b.rows = manifest.n_prompts;
        b.cols = manifest.d_model;
        b.values = read_le_floats(path, k, b.rows * b.cols);
        layers.push_back(std::move(b));
    }

    try {
        return Trace(std::move(manifest), std::move(records), std::move(layers));
    } catch (const ValidationError& e) {
        throw FormatError(e.what());
    }
}

void VectorFile::validate() const {
    if (direction.empty()) {
        throw ValidationError("vector file: empty direction");
    }
    double sq = 0.0;
    for (double x : direction) {
        if (!std::isfinite(x)) {
            throw ValidationError("vector file: non-finite direction component");
        }
        sq += x * x;
    }
    const double n = std::sqrt(sq);
    if (std::abs(n - 1.0) > 1e-9) {
        throw ValidationError("vector file: direction norm " + std::to_string(n) + " is not 1 (unnormalized)");
    }
    if (!(scale > 0.0) || !std::isfinite(scale)) {
        throw ValidationError("vector file: scale must be finite and > 0");
    }
}

nlohmann::json vector_file_to_json(const VectorFile& vf) {
    return nlohmann::json{{"method", std::string(method_name(vf.method))},
                          {"layer", vf.layer},
                          {"direction", vf.direction},
                          {"scale", vf.scale},
                          {"metrics", {{"rmse", vf.rmse}, {"pearson_r", vf.pearson_r}}},
                          {"manifest_ref", vf.manifest_ref}};
}

VectorFile vector_file_from_json(const nlohmann::json& j) {
    VectorFile vf = with_format_errors("vector file", [&] {
        VectorFile v;
        try {
            v.method = parse_method(j.at("method").get<std::string>());
        } catch (const ValidationError& e) {
            throw FormatError(e.what());
        }
        v.layer = j.at("layer").get<std::size_t>();
        v.direction = j.at("direction").get<std::vector<double>>();
        v.scale = j.at("scale").get<double>();
        v.rmse = j.at("metrics").at("rmse").get<double>();
        v.pearson_r = j.at("metrics").at("pearson_r").get<double>();
        v.manifest_ref = j.at("manifest_ref").get<std::string>();
        return v;
    });
    try {
        vf.validate();
    } catch (const ValidationError& e) {
        throw FormatError(e.what());
    }
    return vf;
}

void write_vector_file(const VectorFile& vf, const fs::path& path) {
    vf.validate();
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    out << vector_file_to_json(vf).dump(2) << '\n';
    if (!out) {
        throw Error("cannot write " + path.string());
    }
}

VectorFile read_vector_file(const fs::path& path) {
    return vector_file_from_json(parse_json_file(path));
}

ConceptSpec concept_spec_from_json(const nlohmann::json& j,
                                   const std::function<std::optional<TokenId>(const std::string&)>& resolve) {
    auto spec = with_format_errors("concept spec", [&] {
        ConceptSpec s;
        s.name_a = j.value("name_a", std::string("A"));
        s.name_b = j.value("name_b", std::string("B"));
        auto read = [&](const nlohmann::json& arr, std::vector<TokenId>& out) {
            for (const auto& t : arr) {
                if (t.is_number_integer()) {
                    out.push_back(t.get<TokenId>());
                    continue;
                }
                const auto text = t.get<std::string>();
                if (!resolve) {
                    throw FormatError("concept spec: token string '" + text + "' needs a tokenizer to resolve");
                }
                const auto id = resolve(text);
                if (!id) {
                    throw FormatError("concept spec: unresolvable token '" + text + "'");
                }
                out.push_back(*id);
            }
        };
        read(j.at("tokens_a"), s.tokens_a);
        read(j.at("tokens_b"), s.tokens_b);
        return s;
    });
    spec.validate();
    return spec;
}

}  // namespace steerkit

#include <doctest.h>

#include <cstring>
#include <fstream>
#include <map>
#include <random>

#include "steerkit/errors.hpp"
#include "steerkit/traces.hpp"
#include "support.hpp"

using namespace steerkit;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& s) {
    // Recreate rather than truncate: truncation is slow on some filesystems.
    fs::remove(p);
    std::ofstream out(p, std::ios::binary);
    out << s;
}

void put_f32_le(std::string& buf, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

}  // namespace

TEST_CASE("write then read reproduces the trace") {
    const auto t = testsupport::random_trace(12, 5, 3, 1);
    const auto dir = testsupport::temp_dir("roundtrip");
    write_trace(t, dir);
    const auto back = read_trace(dir);
    CHECK(back.records() == t.records());
    CHECK(back.layers() == t.layers());
    CHECK(back.manifest().model_id == "random");
    CHECK(back.manifest().concept_spec.tokens_a == t.manifest().concept_spec.tokens_a);
    CHECK(back.activation(4, 1).size() == 5);
    fs::remove_all(dir);
}

TEST_CASE("writing is byte-deterministic") {
    const auto t = testsupport::random_trace(7, 3, 2, 9);
    const auto a = testsupport::temp_dir("det_a");
    const auto b = testsupport::temp_dir("det_b");
    write_trace(t, a);
    write_trace(t, b);
    for (const char* f : {"manifest.json", "prompts.jsonl", "layer_0.bin", "layer_1.bin"}) {
        CHECK(slurp(a / f) == slurp(b / f));
    }
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("a hand-written exporter-style trace is readable") {
    // Written the way an external producer would: JSON by hand, floats packed
    // little-endian without going through the library writer.
    const auto dir = testsupport::temp_dir("exporter");
    spit(dir / "manifest.json", R"({
  "schema_version": 1,
  "model_id": "tiny-lm",
  "d_model": 2,
  "n_layers": 2,
  "n_prompts": 3,
  "dtype": "float32-le",
  "concept_spec": {
    "name_a": "female", "name_b": "male",
    "tokens_a": [{"id": 10, "text": " she"}, {"id": 11, "text": "She"}],
    "tokens_b": [{"id": 20, "text": " he"}]
  },
  "metadata": {"read_position": "final prompt token after output prefix"}
})");
    spit(dir / "prompts.jsonl",
         "{\"id\": 100, \"text\": \"Write a story\", \"token_count\": 4, \"p_a\": 0.5, \"p_b\": 0.25, \"disparity\": 0.25, \"split\": \"train\"}\n"
         "{\"id\": 101, \"token_count\": 6, \"p_a\": 0.0, \"p_b\": 0.5, \"disparity\": -0.5, \"split\": \"validation\"}\n"
         "{\"id\": 102, \"token_count\": 2, \"p_a\": 0.125, \"p_b\": 0.125, \"disparity\": 0.0, \"split\": \"train\"}\n");
    for (int l = 0; l < 2; ++l) {
        std::string buf;
        for (int i = 0; i < 6; ++i) put_f32_le(buf, static_cast<float>(l * 10 + i) + 0.5f);
        spit(dir / ("layer_" + std::to_string(l) + ".bin"), buf);
    }
    const auto t = read_trace(dir);
    CHECK(t.manifest().concept_spec.name_a == "female");
    CHECK(t.manifest().token_strings_a == std::vector<std::string>{" she", "She"});
    CHECK(t.records().size() == 3);
    CHECK(!t.record(101).text.has_value());
    CHECK(t.record(101).split == Split::validation);
    CHECK(t.activation(101, 1)[0] == 12.5f);
    CHECK(t.activation(102, 0)[1] == 5.5f);
    CHECK(t.manifest().metadata.at("read_position") == "final prompt token after output prefix");
    CHECK(t.records_in(Split::train).size() == 2);
    fs::remove_all(dir);
}

TEST_CASE("truncated layer file names the layer and sizes") {
    const auto t = testsupport::random_trace(4, 3, 2, 2);
    const auto dir = testsupport::temp_dir("trunc");
    write_trace(t, dir);
    auto bytes = slurp(dir / "layer_1.bin");
    bytes.resize(bytes.size() - 4);
    spit(dir / "layer_1.bin", bytes);
    try {
        read_trace(dir);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("layer 1") != std::string::npos);
        CHECK(msg.find("44") != std::string::npos);
        CHECK(msg.find("48") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("structural problems are format errors") {
    const auto t = testsupport::random_trace(4, 3, 2, 3);
    const auto dir = testsupport::temp_dir("broken");
    SUBCASE("missing directory") {
        CHECK_THROWS_AS(read_trace(dir / "nope"), FormatError);
    }
    SUBCASE("missing layer") {
        write_trace(t, dir);
        fs::remove(dir / "layer_0.bin");
        CHECK_THROWS_AS(read_trace(dir), FormatError);
    }
    SUBCASE("bad manifest json") {
        write_trace(t, dir);
        spit(dir / "manifest.json", "{ not json");
        CHECK_THROWS_AS(read_trace(dir), FormatError);
    }
    SUBCASE("disparity inconsistent with probabilities") {
        write_trace(t, dir);
        auto text = slurp(dir / "prompts.jsonl");
        const auto pos = text.find("\"disparity\":");
        text.insert(pos + 12, "9");
        spit(dir / "prompts.jsonl", text);
        CHECK_THROWS_AS(read_trace(dir), FormatError);
    }
    SUBCASE("prompt count mismatch") {
        write_trace(t, dir);
        auto text = slurp(dir / "prompts.jsonl");
        text = text.substr(0, text.rfind('\n', text.size() - 2) + 1);
        spit(dir / "prompts.jsonl", text);
        CHECK_THROWS_AS(read_trace(dir), FormatError);
    }
    fs::remove_all(dir);
}

TEST_CASE("fuzzed corruption never escapes as anything but a library error") {
    const auto t = testsupport::random_trace(6, 4, 2, 4);
    const auto base = testsupport::temp_dir("fuzz_base");
    write_trace(t, base);
    std::mt19937_64 gen(99);
    const std::vector<std::string> files{"manifest.json", "prompts.jsonl", "layer_0.bin"};
    std::map<std::string, std::string> pristine;
    for (const auto& f : files) pristine[f] = slurp(base / f);
    const auto dir = testsupport::temp_dir("fuzz");
    fs::copy_file(base / "layer_1.bin", dir / "layer_1.bin");
    int rejected = 0;
    for (int trial = 0; trial < 300; ++trial) {
        for (const auto& [f, bytes] : pristine) spit(dir / f, bytes);
        const auto& victim = files[gen() % files.size()];
        auto bytes = pristine[victim];
        const int edits = 1 + static_cast<int>(gen() % 4);
        for (int e = 0; e < edits && !bytes.empty(); ++e) {
            const auto pos = gen() % bytes.size();
            switch (gen() % 3) {
                case 0: bytes[pos] = static_cast<char>(gen() & 0xff); break;
                case 1: bytes.erase(pos, 1); break;
                default: bytes.resize(pos); break;
            }
        }
        spit(dir / victim, bytes);
        try {
            const auto back = read_trace(dir);
            CHECK(back.records().size() == 6);
        } catch (const Error&) {
            ++rejected;
        }
    }
    fs::remove_all(dir);
    CHECK(rejected > 0);
    fs::remove_all(base);
}

TEST_CASE("trace construction enforces invariants") {
    const auto t = testsupport::random_trace(4, 3, 2, 5);
    auto recs = t.records();
    recs[1].id = recs[0].id;
    CHECK_THROWS_AS(Trace(t.manifest(), recs, t.layers()), ValidationError);
    auto layers = t.layers();
    layers[0].values[2] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(Trace(t.manifest(), t.records(), layers), ValidationError);
    layers = t.layers();
    layers.pop_back();
    CHECK_THROWS_AS(Trace(t.manifest(), t.records(), layers), ValidationError);
    CHECK_THROWS(t.row_of(12345));
}

TEST_CASE("vector file round trip and validation") {
    VectorFile vf;
    vf.method = Method::md;
    vf.layer = 3;
    vf.direction = {0.6, 0.0, -0.8};
    vf.scale = 1.7;
    vf.rmse = 0.01;
    vf.pearson_r = 0.93;
    vf.manifest_ref = "toy-default";
    const auto dir = testsupport::temp_dir("vec");
    write_vector_file(vf, dir / "v.json");
    const auto back = read_vector_file(dir / "v.json");
    CHECK(back.method == Method::md);
    CHECK(back.layer == 3);
    CHECK(back.direction == vf.direction);
    CHECK(back.scale == 1.7);
    CHECK(back.pearson_r == 0.93);
    CHECK(back.manifest_ref == "toy-default");
    const auto j = nlohmann::json::parse(slurp(dir / "v.json"));
    CHECK(j.at("metrics").at("rmse") == 0.01);

    vf.direction = {1.0, 1.0};
    CHECK_THROWS_AS(write_vector_file(vf, dir / "bad.json"), ValidationError);
    vf.direction = {1.0, 0.0};
    vf.scale = 0.0;
    CHECK_THROWS_AS(vf.validate(), ValidationError);
    spit(dir / "junk.json", "[1,2");
    CHECK_THROWS_AS(read_vector_file(dir / "junk.json"), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("concept spec documents accept strings or ids") {
    const auto j = nlohmann::json::parse(R"({"name_a": "f", "name_b": "m", "tokens_a": ["she", 7], "tokens_b": ["he"]})");
    const auto spec = concept_spec_from_json(j, [](const std::string& s) -> std::optional<TokenId> {
        if (s == "she") return 3;
        if (s == "he") return 4;
        return std::nullopt;
    });
    CHECK(spec.tokens_a == std::vector<TokenId>{3, 7});
    CHECK(spec.tokens_b == std::vector<TokenId>{4});
    const auto bad = nlohmann::json::parse(R"({"tokens_a": ["zzz"], "tokens_b": [1]})");
    CHECK_THROWS(concept_spec_from_json(bad, [](const std::string&) { return std::optional<TokenId>{}; }));
}

#include <doctest.h>

#include <cmath>
#include <numeric>

#include "steerkit/errors.hpp"
#include "steerkit/scoring.hpp"
#include "steerkit/toymodel.hpp"
#include "support.hpp"

using namespace steerkit;
using namespace steerkit::toy;

namespace {

ToyModel clean_model() {
    const auto [cfg, plant] = preset("clean");
    return ToyModel::build(cfg, plant);
}

std::vector<TokenId> prompt_with(const ToyModel& m, std::optional<TokenId> signal) {
    std::vector<TokenId> p{m.filler_tokens()[0], m.filler_tokens()[1]};
    if (signal) p.push_back(*signal);
    p.push_back(m.filler_tokens()[2]);
    p.push_back(m.query_token());
    return p;
}

TokenId signal_at(const ToyModel& m, double level) {
    for (const auto& s : m.signal_tokens()) {
        if (std::abs(s.level - level) < 1e-12) return s.token;
    }
    FAIL("no signal token at level " << level);
    return -1;
}

}  // namespace

TEST_CASE("identical config builds identical models") {
    const auto m1 = clean_model();
    const auto m2 = clean_model();
    const auto p = prompt_with(m1, signal_at(m1, 0.4));
    CHECK(m1.forward(p).distribution == m2.forward(p).distribution);
    const auto d1 = m1.planted_direction();
    const auto d2 = m2.planted_direction();
    CHECK(std::equal(d1.begin(), d1.end(), d2.begin()));
}

TEST_CASE("forward returns a probability distribution") {
    const auto m = clean_model();
    const auto dist = m.forward(prompt_with(m, std::nullopt)).distribution;
    REQUIRE(dist.size() == m.config().vocab_size);
    CHECK(std::accumulate(dist.begin(), dist.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    for (double p : dist) CHECK(p >= 0.0);
}

TEST_CASE("planted direction is unit norm") {
    const auto m = clean_model();
    CHECK(testsupport::oracle_norm(m.planted_direction()) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("the planted direction appears from the plant layer on") {
    const auto m = clean_model();
    const auto d = m.planted_direction();
    std::vector<Hook> hooks;
    for (std::size_t l = 0; l < m.config().n_layers; ++l) hooks.push_back(Hook::capture(l));
    const auto pos = m.forward(prompt_with(m, signal_at(m, 0.8)), hooks);
    const auto neg = m.forward(prompt_with(m, signal_at(m, -0.8)), hooks);
    for (std::size_t l = 0; l < m.config().n_layers; ++l) {
        const double cp = testsupport::oracle_dot(pos.captures[l].row(0), d);
        const double cn = testsupport::oracle_dot(neg.captures[l].row(0), d);
        CAPTURE(l);
        if (l < m.plant().plant_layer) {
            CHECK(std::abs(cp) < 1e-9);
            CHECK(std::abs(cn) < 1e-9);
        } else {
            CHECK(cp > 0.3);
            CHECK(cn < -0.3);
        }
    }
}

TEST_CASE("disparity is monotone in the signal level and zero at level zero") {
    const auto m = clean_model();
    const auto spec = m.concept_spec();
    double prev = -2.0;
    for (double level : m.plant().signal_levels) {
        const double s = disparity_score(m.forward(prompt_with(m, signal_at(m, level))).distribution, spec);
        CHECK(s > prev);
        prev = s;
        if (level == 0.0) CHECK(std::abs(s) < 1e-12);
    }
    const double none = disparity_score(m.forward(prompt_with(m, std::nullopt)).distribution, spec);
    CHECK(std::abs(none) < 1e-12);
}

TEST_CASE("edit hooks run before captures at the same layer") {
    const auto m = clean_model();
    const std::size_t layer = 3;
    std::vector<Hook> hooks{Hook::capture(layer),
                            Hook::editor(layer, PositionScope::all_tokens, [](std::span<double> h) {
                                for (auto& x : h) x = 1.0;
                            })};
    const auto r = m.forward(prompt_with(m, std::nullopt), hooks);
    REQUIRE(r.captures[0].rows == 1);
    for (double x : r.captures[0].row(0)) CHECK(x == 1.0);
    CHECK(r.captures[1].rows == 0);
}

TEST_CASE("all-token capture returns one row per position") {
    const auto m = clean_model();
    const auto p = prompt_with(m, std::nullopt);
    const Hook h = Hook::capture(1, PositionScope::all_tokens);
    const auto r = m.forward(p, std::span<const Hook>(&h, 1));
    CHECK(r.captures[0].rows == p.size());
    CHECK(r.captures[0].cols == m.config().d_model);
}

TEST_CASE("tokenizer round trip") {
    const auto m = clean_model();
    const auto p = prompt_with(m, signal_at(m, -0.2));
    CHECK(m.tokenize(m.detokenize(p)) == p);
    CHECK(m.token_string(m.query_token()) == "<q>");
    CHECK(m.token_id("a0") == m.plant().concept_a_tokens[0]);
    CHECK_THROWS_AS(m.tokenize("nonsense-token"), ValidationError);
}

TEST_CASE("generation is deterministic and respects the length cap") {
    const auto m = clean_model();
    const auto p = prompt_with(m, signal_at(m, 0.8));
    GenerationOptions g;
    g.max_new_tokens = 3;
    const auto a = generate(m, p, g);
    CHECK(a.size() == 3);
    CHECK(a == generate(m, p, g));
    // Greedy first token follows the planted concept.
    const auto& as = m.plant().concept_a_tokens;
    CHECK(std::find(as.begin(), as.end(), a[0]) != as.end());
    g.temperature = 1.0;
    g.seed = 5;
    CHECK(generate(m, p, g) == generate(m, p, g));
    g.max_new_tokens = 100;
    CHECK(generate(m, p, g).size() == m.config().max_seq_len - p.size());
}

TEST_CASE("synthesised prompts end with the query token") {
    const auto m = clean_model();
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const auto sig = signal_at(m, 0.6);
        const auto p = synth_prompt(m, sig, rng);
        CHECK(p.back() == m.query_token());
        CHECK(p.size() >= kMinFiller + 2);
        CHECK(p.size() <= kMaxFiller + 2);
        CHECK(std::count(p.begin(), p.end(), sig) == 1);
    }
}

TEST_CASE("config and plant survive JSON") {
    const auto [cfg, plant] = preset("default");
    nlohmann::json j{{"config", cfg}, {"plant", plant}};
    const auto j2 = nlohmann::json::parse(j.dump());
    CHECK(j2.at("config").get<ModelConfig>() == cfg);
    CHECK(j2.at("plant").get<PlantSpec>() == plant);
}

TEST_CASE("invalid configurations are rejected") {
    auto [cfg, plant] = preset("default");
    SUBCASE("heads must divide the width") {
        cfg.n_heads = 5;
        CHECK_THROWS_AS(ToyModel::build(cfg, plant), ValidationError);
    }
    SUBCASE("overlapping concept sets") {
        plant.concept_b_tokens[0] = plant.concept_a_tokens[0];
        CHECK_THROWS_AS(ToyModel::build(cfg, plant), ValidationError);
    }
    SUBCASE("levels outside [-1, 1]") {
        plant.signal_levels.push_back(1.5);
        CHECK_THROWS_AS(ToyModel::build(cfg, plant), ValidationError);
    }
    SUBCASE("plant layer beyond the stack") {
        plant.plant_layer = cfg.n_layers;
        CHECK_THROWS_AS(ToyModel::build(cfg, plant), ValidationError);
    }
    SUBCASE("sequence longer than the context") {
        const auto m = ToyModel::build(cfg, plant);
        std::vector<TokenId> p(cfg.max_seq_len + 1, m.filler_tokens()[0]);
        CHECK_THROWS(m.forward(p));
    }
    CHECK_THROWS_AS(preset("nope"), ValidationError);
}

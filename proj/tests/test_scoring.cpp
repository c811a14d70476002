#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "steerkit/errors.hpp"
#include "steerkit/scoring.hpp"

using namespace steerkit;

namespace {

PromptRecord rec(PromptId id, double s) {
    PromptRecord r;
    r.id = id;
    r.p_a = s > 0 ? s : 0.0;
    r.p_b = s < 0 ? -s : 0.0;
    r.disparity = r.p_a - r.p_b;
    return r;
}

}  // namespace

TEST_CASE("concept probability sums the token set") {
    const std::vector<double> dist{0.1, 0.2, 0.3, 0.4};
    const std::vector<TokenId> a{0, 2}, b{3};
    CHECK(concept_probability(dist, a) == doctest::Approx(0.4));
    const ConceptSpec spec{"A", "B", a, b};
    CHECK(disparity_score(dist, spec) == doctest::Approx(0.0));
    CHECK(disparity_score(dist, spec.swapped()) == doctest::Approx(0.0));
    CHECK_THROWS(concept_probability(dist, std::vector<TokenId>{7}));
    CHECK_THROWS(concept_probability(std::vector<double>{0.5, 0.4}, a));
}

TEST_CASE("disparity is antisymmetric under swapping concepts") {
    const std::vector<double> dist{0.05, 0.6, 0.1, 0.25};
    const ConceptSpec spec{"A", "B", {1}, {2, 3}};
    CHECK(disparity_score(dist, spec) == doctest::Approx(0.25));
    CHECK(disparity_score(dist, spec.swapped()) == doctest::Approx(-0.25));
}

TEST_CASE("partition boundary cases") {
    const std::vector<PromptRecord> recs{rec(1, 0.05), rec(2, -0.05), rec(3, 0.0500001), rec(4, -0.2), rec(5, 0.0)};
    const auto p = partition(recs, 0.05);
    CHECK(p.ids_a == std::vector<PromptId>{3});
    CHECK(p.ids_b == std::vector<PromptId>{4});
    CHECK(p.ids_o == std::vector<PromptId>{1, 2, 5});
    CHECK_THROWS(partition(recs, -0.1));
}

TEST_CASE("partition is exhaustive and exclusive (1000 random cases)") {
    std::mt19937_64 gen(17);
    std::uniform_real_distribution<double> u(-1.0, 1.0), du(0.0, 0.5);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<PromptRecord> recs;
        const int n = 1 + static_cast<int>(gen() % 40);
        for (int i = 0; i < n; ++i) recs.push_back(rec(i * 7 + trial, u(gen)));
        const double delta = du(gen);
        const auto p = partition(recs, delta);
        REQUIRE(p.size() == recs.size());
        std::set<PromptId> all;
        for (auto id : p.ids_a) all.insert(id);
        for (auto id : p.ids_b) all.insert(id);
        for (auto id : p.ids_o) all.insert(id);
        CHECK(all.size() == recs.size());
        for (const auto& r : recs) {
            const auto& bucket = r.disparity > delta ? p.ids_a : (r.disparity < -delta ? p.ids_b : p.ids_o);
            CHECK(std::binary_search(bucket.begin(), bucket.end(), r.id));
        }
        CHECK(std::is_sorted(p.ids_a.begin(), p.ids_a.end()));
    }
}

TEST_CASE("neutral subsampling caps at the smaller concept set") {
    std::vector<PromptRecord> recs;
    for (int i = 0; i < 3; ++i) recs.push_back(rec(i, 0.5));
    for (int i = 3; i < 8; ++i) recs.push_back(rec(i, -0.5));
    for (int i = 8; i < 30; ++i) recs.push_back(rec(i, 0.0));
    const auto p = partition(recs);
    const auto s = subsample_neutral(p, {}, 1);
    CHECK(s.ids_o.size() == 3);
    CHECK(std::is_sorted(s.ids_o.begin(), s.ids_o.end()));
    for (auto id : s.ids_o) CHECK(std::binary_search(p.ids_o.begin(), p.ids_o.end(), id));
    CHECK(subsample_neutral(p, {}, 1).ids_o == s.ids_o);
    CHECK(s.ids_a == p.ids_a);
    const auto f = subsample_neutral(p, {NeutralCapRule::Kind::fixed, 100}, 1);
    CHECK(f.ids_o == p.ids_o);
}

TEST_CASE("disparity bins") {
    CHECK(disparity_bin(-1.0, 20) == 0);
    CHECK(disparity_bin(1.0, 20) == 19);
    CHECK(disparity_bin(0.0, 20) == 10);
    CHECK(disparity_bin(-0.0001, 20) == 9);
    CHECK(disparity_bin(0.95, 20) == 19);
    CHECK(disparity_bin(0.8999, 20) == 18);
    CHECK(disparity_bin(0.9, 20) == 19);
}

TEST_CASE("inverse-square sampling favours sparse bins") {
    // 90 prompts in one bin, 10 in another: per-prompt weights 1/8100 vs 1/100,
    // so the sparse bin holds 10/100 / (10/100 + 90/8100) = 0.9 of the mass.
    std::vector<PromptRecord> recs;
    for (int i = 0; i < 90; ++i) recs.push_back(rec(i, 0.01));
    for (int i = 90; i < 100; ++i) recs.push_back(rec(i, 0.81));
    int sparse = 0;
    const int trials = 4000;
    for (int t = 0; t < trials; ++t) {
        const auto ids = inverse_square_bin_sampling(recs, 20, 1, t);
        REQUIRE(ids.size() == 1);
        sparse += ids[0] >= 90;
    }
    CHECK(std::abs(sparse / double(trials) - 0.9) < 0.03);

    const auto many = inverse_square_bin_sampling(recs, 20, 50, 3);
    CHECK(std::set<PromptId>(many.begin(), many.end()).size() == 50);
    CHECK(inverse_square_bin_sampling(recs, 20, 50, 3) == many);
    CHECK_THROWS(inverse_square_bin_sampling(recs, 20, 101, 3));
}

TEST_CASE("prompt record validation") {
    auto r = rec(1, 0.3);
    CHECK_NOTHROW(r.validate());
    r.disparity = 0.2;
    CHECK_THROWS_AS(r.validate(), ValidationError);
    r = rec(1, 0.3);
    r.p_b = 0.8;
    r.disparity = r.p_a - r.p_b;
    CHECK_THROWS_AS(r.validate(), ValidationError);
    r = rec(1, 0.3);
    r.p_a = std::nan("");
    CHECK_THROWS_AS(r.validate(), ValidationError);
}

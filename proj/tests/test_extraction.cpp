#include <doctest.h>

#include <cmath>
#include <random>

#include "steerkit/errors.hpp"
#include "steerkit/extraction.hpp"
#include "support.hpp"

using namespace steerkit;

namespace {

using Vec = std::vector<double>;

Vec mean_rows(const Trace& t, const std::vector<PromptId>& ids, std::size_t layer) {
    Vec m(t.d_model(), 0.0);
    for (auto id : ids) {
        const auto r = t.activation(id, layer);
        for (std::size_t k = 0; k < m.size(); ++k) m[k] += r[k];
    }
    for (auto& x : m) x /= ids.size();
    return m;
}

Vec unit(Vec v) {
    const double n = testsupport::oracle_norm(v);
    for (auto& x : v) x /= n;
    return v;
}

/// sum s (h - mu_o) / sum s over one side.
Vec oracle_side(const Trace& t, const std::vector<PromptId>& ids, const Vec& mu_o, std::size_t layer) {
    Vec num(t.d_model(), 0.0);
    double den = 0;
    for (auto id : ids) {
        const double s = t.record(id).disparity;
        const auto r = t.activation(id, layer);
        for (std::size_t k = 0; k < num.size(); ++k) num[k] += s * (r[k] - mu_o[k]);
        den += s;
    }
    for (auto& x : num) x /= den;
    return num;
}

Vec oracle_wmd(const Trace& t, const PartitionedDataset& p, std::size_t layer) {
    const auto mu_o = mean_rows(t, p.ids_o, layer);
    const auto a = unit(oracle_side(t, p.ids_a, mu_o, layer));
    const auto b = unit(oracle_side(t, p.ids_b, mu_o, layer));
    Vec v(a.size());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = a[k] - b[k];
    return v;
}

Vec oracle_md(const Trace& t, const PartitionedDataset& p, std::size_t layer) {
    const auto a = mean_rows(t, p.ids_a, layer);
    const auto b = mean_rows(t, p.ids_b, layer);
    Vec v(a.size());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = a[k] - b[k];
    return v;
}

void check_close(const Vec& a, const Vec& b, double tol) {
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::abs(a[k] - b[k]) <= tol * (1 + std::abs(b[k])));
}

Trace tiny_trace(const std::vector<double>& scores, const std::vector<Vec>& acts) {
    std::vector<PromptRecord> recs;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        PromptRecord r;
        r.id = static_cast<PromptId>(i);
        r.p_a = scores[i] > 0 ? scores[i] : 0.0;
        r.p_b = scores[i] < 0 ? -scores[i] : 0.0;
        r.disparity = r.p_a - r.p_b;
        recs.push_back(r);
    }
    LayerBlock b{0, acts.size(), acts[0].size(), {}};
    for (const auto& a : acts) {
        for (double x : a) b.values.push_back(static_cast<float>(x));
    }
    TraceManifest m;
    m.model_id = "tiny";
    m.d_model = acts[0].size();
    m.n_layers = 1;
    m.concept_spec.tokens_a = {0};
    m.concept_spec.tokens_b = {1};
    m.n_prompts = scores.size();
    return Trace(m, recs, {b});
}

}  // namespace

TEST_CASE("WMD on a hand-computed example") {
    // A: s=0.5 at (2,0), s=0.25 at (0,2)   -> (sum s h)/(sum s) = (4/3, 2/3)
    // B: s=-0.5 at (-2,0)                   -> (-2, 0)
    // neutral at (0,0).
    const auto t = tiny_trace({0.5, 0.25, -0.5, 0.0}, {{2, 0}, {0, 2}, {-2, 0}, {0, 0}});
    const auto p = partition(t.records());
    const auto c = wmd_candidate(t, p, 0);
    const double n = std::sqrt(16.0 / 9 + 4.0 / 9);
    check_close(c.direction, {4.0 / 3 / n + 1.0, 2.0 / 3 / n}, 1e-12);
    CHECK(!c.degenerate);
    REQUIRE(c.neutral_mean_used.has_value());
    check_close(*c.neutral_mean_used, {0, 0}, 0);
    const auto md = md_candidate(t, p, 0);
    check_close(md.direction, {3, 1}, 1e-12);
}

TEST_CASE("extractors match the brute-force oracle on random traces") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto t = testsupport::random_trace(60, 7, 3, seed);
        const auto p = partition(t.records(), 0.1);
        for (std::size_t l = 0; l < 3; ++l) {
            check_close(wmd_candidate(t, p, l).direction, oracle_wmd(t, p, l), 1e-10);
            check_close(md_candidate(t, p, l).direction, oracle_md(t, p, l), 1e-10);
        }
    }
}

TEST_CASE("WMD is invariant to positive scaling of scores (1000 cases)") {
    std::mt19937_64 gen(21);
    std::uniform_real_distribution<double> cdist(0.05, 1.0);
    int checked = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto t = testsupport::random_trace(16 + trial % 16, 4, 1, 1000 + trial);
        const double c = cdist(gen);
        const auto scaled = testsupport::transformed(t, c, {});
        // Scaling the threshold with the scores keeps the partition fixed.
        const auto p1 = partition(t.records(), 0.1);
        const auto p2 = partition(scaled.records(), 0.1 * c);
        if (p1.ids_a != p2.ids_a || p1.ids_b != p2.ids_b) continue;
        if (p1.ids_o.empty() || p1.ids_a.empty() || p1.ids_b.empty()) continue;
        check_close(wmd_candidate(scaled, p2, 0).direction, wmd_candidate(t, p1, 0).direction, 1e-9);
        ++checked;
    }
    CHECK(checked > 900);
}

TEST_CASE("both extractors are invariant to translating all activations (1000 cases)") {
    std::mt19937_64 gen(22);
    std::normal_distribution<double> nd(0.0, 2.0);
    int checked = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto t = testsupport::random_trace(20, 4, 1, 5000 + trial);
        const Vec shift{nd(gen), nd(gen), nd(gen), nd(gen)};
        const auto moved = testsupport::transformed(t, 1.0, shift);
        const auto p = partition(t.records(), 0.2);
        if (p.ids_o.empty() || p.ids_a.empty() || p.ids_b.empty()) continue;
        // Float storage of shifted activations limits agreement to ~1e-6.
        check_close(md_candidate(moved, p, 0).direction, md_candidate(t, p, 0).direction, 1e-5);
        check_close(wmd_candidate(moved, p, 0).direction, wmd_candidate(t, p, 0).direction, 1e-5);
        ++checked;
    }
    CHECK(checked > 900);
}

TEST_CASE("WMD needs a neutral partition") {
    const auto t = tiny_trace({0.5, -0.5}, {{1, 0}, {0, 1}});
    const auto p = partition(t.records());
    CHECK_THROWS_AS(wmd_candidate(t, p, 0), DegenerateError);
    CHECK_THROWS_AS(neutral_mean(t, p, 0), DegenerateError);
    CHECK_NOTHROW(md_candidate(t, p, 0));
}

TEST_CASE("empty concept side is degenerate") {
    const auto t = tiny_trace({0.5, 0.0}, {{1, 0}, {0, 1}});
    const auto p = partition(t.records());
    CHECK_THROWS_AS(wmd_candidate(t, p, 0), DegenerateError);
    CHECK_THROWS_AS(md_candidate(t, p, 0), DegenerateError);
}

TEST_CASE("weighted concept vector rejects mixed signs and zero mass") {
    const auto t = tiny_trace({0.5, -0.5, 0.0}, {{1, 0}, {0, 1}, {0, 0}});
    const std::vector<PromptId> ids{0, 1};
    const Vec neutral{0, 0};
    CHECK_THROWS_AS(weighted_concept_vector(t, ids, std::vector<double>{0.5, -0.5}, neutral, 0), ValidationError);
    CHECK_THROWS_AS(weighted_concept_vector(t, ids, std::vector<double>{1e-12, 1e-12}, neutral, 0), DegenerateError);
    CHECK_THROWS_AS(weighted_concept_vector(t, ids, std::vector<double>{0.0, 0.0}, neutral, 0), ValidationError);
}

TEST_CASE("parallel directions produce a flagged degenerate candidate") {
    // A and B sides both point along +x relative to the neutral mean.
    const auto t = tiny_trace({0.5, -0.5, 0.0}, {{2, 0}, {1, 0}, {0, 0}});
    const auto c = wmd_candidate(t, partition(t.records()), 0);
    CHECK(c.degenerate);
}

TEST_CASE("zero-norm side vector is an error") {
    const auto t = tiny_trace({0.5, -0.5, 0.0}, {{0, 0}, {1, 0}, {0, 0}});
    CHECK_THROWS_AS(wmd_candidate(t, partition(t.records()), 0), DegenerateError);
}

TEST_CASE("all-layer extraction is ordered and deterministic") {
    const auto t = testsupport::random_trace(40, 5, 4, 8);
    const auto p = partition(t.records());
    const auto a = extract_all_layers(t, p, Method::wmd);
    const auto b = extract_all_layers(t, p, Method::wmd);
    REQUIRE(a.size() == 4);
    for (std::size_t l = 0; l < 4; ++l) {
        CHECK(a[l].layer == l);
        CHECK(a[l].direction == b[l].direction);
        CHECK(a[l].method == Method::wmd);
    }
}

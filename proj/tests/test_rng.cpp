#include <doctest.h>

#include <cmath>
#include <set>

#include "steerkit/rng.hpp"

using steerkit::Rng;

TEST_CASE("same seed, same stream") {
    Rng a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const double x = a.normal();
        CHECK(x == b.normal());
        differs |= x != c.normal();
    }
    CHECK(differs);
}

TEST_CASE("uniform and below stay in range") {
    Rng r(1);
    for (int i = 0; i < 10000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const double o = r.uniform_open();
        CHECK(o > 0.0);
        CHECK(o <= 1.0);
        CHECK(r.below(7) < 7u);
    }
}

TEST_CASE("normal moments") {
    Rng r(5);
    const int n = 200000;
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        s += x;
        s2 += x * x;
    }
    CHECK(std::abs(s / n) < 0.01);
    CHECK(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("student t is symmetric with heavier tails") {
    Rng r(9);
    int big = 0, neg = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double t = r.student_t(3.0);
        big += std::abs(t) > 4.0;
        neg += t < 0;
    }
    // P(|T_3| > 4) is about 0.028; a normal would give 6e-5.
    CHECK(big > n / 100);
    CHECK(std::abs(neg - n / 2) < n / 50);
}

TEST_CASE("derive_seed separates tags") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t t = 0; t < 1000; ++t) seen.insert(steerkit::derive_seed(7, t));
    CHECK(seen.size() == 1000);
    CHECK(steerkit::derive_seed(7, 3) == steerkit::derive_seed(7, 3));
}

TEST_CASE("weighted sampling without replacement") {
    Rng r(3);
    const std::vector<double> w{1.0, 1.0, 8.0, 0.0};
    for (int i = 0; i < 20000; ++i) {
        const auto pick = steerkit::weighted_sample_without_replacement(w, 2, r);
        REQUIRE(pick.size() == 2);
        CHECK(pick[0] != pick[1]);
        for (auto p : pick) CHECK(p != 3u);
    }
    CHECK_THROWS(steerkit::weighted_sample_without_replacement(w, 5, r));
}

TEST_CASE("heavier weights are drawn more often") {
    Rng r(4);
    const std::vector<double> w{1.0, 4.0};
    int count1 = 0;
    const int n = 40000;
    for (int i = 0; i < n; ++i) {
        count1 += steerkit::weighted_sample_without_replacement(w, 1, r)[0] == 1;
    }
    CHECK(std::abs(count1 / double(n) - 0.8) < 0.01);
}

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <set>
#include <vector>

#include "beamvista/rng.hpp"

using beamvista::derive_seed;
using beamvista::Rng;

TEST_CASE("same seed gives the same stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("derived seeds separate streams") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t id = 0; id < 1000; ++id) seen.insert(derive_seed(7, {id}));
    CHECK(seen.size() == 1000);
    CHECK(derive_seed(7, {1, 2}) != derive_seed(7, {2, 1}));
    CHECK(derive_seed(7, {1}) == derive_seed(7, {1}));
}

TEST_CASE("uniform stays in [0, 1) and has the right mean") {
    Rng r(1);
    double s = 0;
    for (int i = 0; i < 100000; ++i) {
        const double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        s += u;
    }
    CHECK(s / 100000 == Catch::Approx(0.5).margin(0.005));
}

TEST_CASE("below is bounded and covers its range") {
    Rng r(3);
    std::vector<int> hist(7, 0);
    for (int i = 0; i < 70000; ++i) {
        const auto v = r.below(7);
        REQUIRE(v < 7);
        ++hist[v];
    }
    for (int h : hist) CHECK(h == Catch::Approx(10000).margin(500));
}

TEST_CASE("normal has zero mean and unit variance") {
    Rng r(5);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        s += z;
        s2 += z * z;
    }
    CHECK(s / n == Catch::Approx(0.0).margin(0.01));
    CHECK(s2 / n == Catch::Approx(1.0).margin(0.015));
}

TEST_CASE("shuffle is a permutation and seed dependent") {
    std::vector<int> a(50);
    std::iota(a.begin(), a.end(), 0);
    std::vector<int> b(a);
    Rng r1(9), r2(10);
    r1.shuffle(std::span<int>(a));
    r2.shuffle(std::span<int>(b));
    CHECK(a != b);
    std::sort(a.begin(), a.end());
    for (int i = 0; i < 50; ++i) CHECK(a[i] == i);
}

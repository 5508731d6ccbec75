#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gaitlab/rng.hpp"

using gaitlab::Rng;
using gaitlab::sub_seed;

TEST_CASE("identical seeds give identical streams", "[rng]") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("uniform stays in [0,1) and fills the range", "[rng]") {
    Rng r(7);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double v = r.uniform();
        REQUIRE(v >= 0.0);
        REQUIRE(v < 1.0);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    REQUIRE(lo < 0.01);
    REQUIRE(hi > 0.99);
}

TEST_CASE("below produces every value in range", "[rng]") {
    Rng r(3);
    std::array<int, 5> counts{};
    for (int i = 0; i < 5000; ++i) counts[r.below(5)]++;
    for (const int c : counts) REQUIRE(c > 800);
}

TEST_CASE("normal draws have plausible first two moments", "[rng]") {
    Rng r(123);
    const int n = 50000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = r.normal();
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    REQUIRE(std::fabs(mean) < 0.02);
    REQUIRE(std::fabs(var - 1.0) < 0.03);
}

TEST_CASE("shuffle is a deterministic permutation", "[rng]") {
    std::vector<int> v1 = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::vector<int> v2 = v1;
    Rng a(99), b(99);
    a.shuffle(v1);
    b.shuffle(v2);
    REQUIRE(v1 == v2);
    std::vector<int> sorted = v1;
    std::sort(sorted.begin(), sorted.end());
    REQUIRE(sorted == std::vector<int>({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
}

TEST_CASE("sub_seed separates named streams and ignores call order", "[rng]") {
    const auto s1 = sub_seed(42, "fold/0");
    const auto s2 = sub_seed(42, "fold/1");
    const auto s3 = sub_seed(43, "fold/0");
    REQUIRE(s1 != s2);
    REQUIRE(s1 != s3);
    REQUIRE(sub_seed(42, "fold/0") == s1); // pure function of (seed, tag)
}

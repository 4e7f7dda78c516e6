#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "dlab/rng.hpp"

using namespace dlab;

TEST_CASE("same seed reproduces the same stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds diverge") {
    Rng a(1), b(2);
    int same = 0;
    for (int i = 0; i < 64; ++i) same += (a.next_u64() == b.next_u64());
    CHECK(same == 0);
}

TEST_CASE("state is a resumable (key, counter) pair") {
    Rng a(7);
    for (int i = 0; i < 5; ++i) a.next_u64();
    Rng resumed(a.key(), a.counter());
    Rng ref = a;
    for (int i = 0; i < 20; ++i) CHECK(resumed.next_u64() == ref.next_u64());
}

TEST_CASE("substreams are independent of parent draw order") {
    Rng parent(123);
    Rng s1 = parent.substream("alpha");
    parent.next_u64();
    parent.next_u64();
    Rng s2 = parent.substream("alpha");
    CHECK(s1.key() == s2.key());
    CHECK(s1.next_u64() == s2.next_u64());

    Rng other = parent.substream("beta");
    CHECK(other.key() != s1.key());
    CHECK(parent.substream(0).key() != parent.substream(1).key());
}

TEST_CASE("u01 stays in the half-open unit interval") {
    Rng rng(5);
    for (int i = 0; i < 10000; ++i) {
        double v = rng.u01();
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("uniform_int covers its range without bias artifacts") {
    Rng rng(9);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70000; ++i) ++counts[rng.uniform_int(7)];
    for (int c : counts) {
        CHECK(c > 9000);
        CHECK(c < 11000);
    }
}

TEST_CASE("normal draws have the right first two moments") {
    Rng rng(11);
    const int n = 40000;
    double mean = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        double z = rng.normal();
        mean += z;
        sq += z * z;
    }
    mean /= n;
    double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("sample_without_replacement has distinct in-range values") {
    Rng rng(13);
    std::vector<int> got = rng.sample_without_replacement(50, 20);
    REQUIRE(got.size() == 20);
    std::set<int> seen(got.begin(), got.end());
    CHECK(seen.size() == 20);
    for (int v : got) {
        CHECK(v >= 0);
        CHECK(v < 50);
    }
    std::vector<int> all = rng.sample_without_replacement(10, 10);
    std::sort(all.begin(), all.end());
    for (int i = 0; i < 10; ++i) CHECK(all[i] == i);
}

TEST_CASE("shuffle is a permutation and reproducible") {
    Rng a(21), b(21);
    std::vector<int> va(32), vb(32);
    for (int i = 0; i < 32; ++i) va[i] = vb[i] = i;
    a.shuffle(va);
    b.shuffle(vb);
    CHECK(va == vb);
    std::vector<int> sorted = va;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 32; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("uniform respects bounds") {
    Rng rng(31);
    for (int i = 0; i < 1000; ++i) {
        float v = rng.uniform(-2.0f, 3.0f);
        CHECK(v >= -2.0f);
        CHECK(v < 3.0f);
    }
}

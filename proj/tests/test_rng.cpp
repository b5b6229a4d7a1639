#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "evade/rng.hpp"

using namespace evade;

TEST_CASE("same (seed, stream) gives identical sequences") {
  Rng a(123, 7), b(123, 7);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.normal() == b.normal());
  }
}

TEST_CASE("distinct seeds and distinct streams give distinct sequences") {
  Rng a(1, 0), b(2, 0), c(1, 1);
  int same_ab = 0, same_ac = 0;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    if (x == b.next_u64()) ++same_ab;
    Rng a2(1, 0);
    if (x == c.next_u64()) ++same_ac;
  }
  CHECK(same_ab == 0);
  CHECK(same_ac == 0);
}

TEST_CASE("split children are independent of parent and of each other") {
  Rng parent(9, 3);
  Rng c1 = parent.split(0), c2 = parent.split(1), c1b = parent.split(0);
  CHECK(c1.next_u64() != c2.next_u64());
  CHECK(Rng(9, 3).split(0).next_u64() == c1b.next_u64());
  // drawing from the parent does not disturb children
  parent.next_u64();
  CHECK(parent.split(1).next_u64() == Rng(9, 3).split(1).next_u64());
}

TEST_CASE("uniform lies strictly inside (0,1) with mean ~1/2") {
  Rng r(2024);
  const int n = 100000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    CHECK(u > 0.0);
    CHECK(u < 1.0);
    sum += u;
    sum2 += u * u;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::abs(mean - 0.5) < 0.02);
  CHECK(std::abs(var - 1.0 / 12.0) < 0.02);
}

TEST_CASE("normal moments over 1e5 draws") {
  Rng r(7);
  const int n = 100000;
  double sum = 0, sum2 = 0, sum3 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    sum += x;
    sum2 += x * x;
    sum3 += x * x * x;
  }
  CHECK(std::abs(sum / n) < 0.02);
  CHECK(std::abs(sum2 / n - 1.0) < 0.02);
  CHECK(std::abs(sum3 / n) < 0.05);  // skewness ~ 0
}

TEST_CASE("uniform_int covers [0,n) roughly uniformly") {
  Rng r(5);
  int counts[10] = {0};
  for (int i = 0; i < 50000; ++i) counts[r.uniform_int(10)]++;
  for (int k = 0; k < 10; ++k) {
    CHECK(counts[k] > 4500);
    CHECK(counts[k] < 5500);
  }
}

TEST_CASE("no short cycles in 1e5 draws") {
  Rng r(0);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 100000; ++i) seen.insert(r.next_u64());
  CHECK(seen.size() == 100000);
}

TEST_CASE("serialize round-trips mid-stream, including the Box-Muller cache") {
  Rng r(42, 11);
  for (int i = 0; i < 17; ++i) r.next_u64();
  r.normal();  // leaves a cached second draw
  const auto blob = r.serialize();
  CHECK(blob.size() == Rng::serialized_size());
  Rng q = Rng::deserialize(blob.data(), blob.size());
  for (int i = 0; i < 100; ++i) CHECK(r.normal() == q.normal());
  for (int i = 0; i < 100; ++i) CHECK(r.next_u64() == q.next_u64());
}

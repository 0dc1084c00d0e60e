#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>

#include "selfseg/common.hpp"
#include "selfseg/evaluation.hpp"

using namespace selfseg;

namespace {

ConfusionMatrix random_cm(int k, int c, std::mt19937_64& rng, int64_t hi = 50) {
  ConfusionMatrix cm;
  cm.counts.setZero(k, c);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < c; ++j) cm.counts(i, j) = int64_t(uniform(rng) * double(hi));
  return cm;
}

}  // namespace

TEST_CASE("confusion: perfect, ignored, scalar-loop oracle") {
  LabelMap gt(4, 4), pred(4, 4);
  for (int i = 0; i < 16; ++i) gt.v[i] = pred.v[i] = uint8_t(i % 3);
  auto cm = confusion(pred, gt, 3, 3);
  CHECK(cm.counts.diagonal().sum() == 16);
  CHECK(cm.total() == 16);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) CHECK(cm.counts(i, j) == 0);

  LabelMap all_ignore(4, 4, kIgnoreLabel);
  auto z = confusion(pred, all_ignore, 3, 3);
  CHECK(z.total() == 0);

  auto rng = make_rng(5);
  LabelMap p16(16, 16), g16(16, 16);
  for (int i = 0; i < 256; ++i) {
    p16.v[i] = uint8_t(uniform_int(rng, 0, 4));
    g16.v[i] = uint8_t(uniform_int(rng, 0, 3));
    if (bernoulli(rng, 0.1)) g16.v[i] = kIgnoreLabel;
  }
  auto c16 = confusion(p16, g16, 5, 4);
  // independent per-pixel counting loop
  for (int k = 0; k < 5; ++k)
    for (int c = 0; c < 4; ++c) {
      int64_t n = 0;
      for (int i = 0; i < 256; ++i)
        if (p16.v[i] == k && g16.v[i] == c) ++n;
      CHECK(c16.counts(k, c) == n);
    }

  LabelMap bad(16, 16, 9);
  CHECK_THROWS(confusion(bad, g16, 5, 4));
}

TEST_CASE("hungarian: small hand cases") {
  ConfusionMatrix diag;
  diag.counts.setZero(3, 3);
  diag.counts << 10, 1, 0, 2, 9, 1, 0, 0, 7;
  CHECK(hungarian_match(diag) == std::vector<int>{0, 1, 2});

  ConfusionMatrix two;
  two.counts.setZero(2, 2);
  two.counts << 5, 1, 2, 9;
  auto m = hungarian_match(two);
  CHECK(m == std::vector<int>{0, 1});
  CHECK(matched_count(two, m) == 14);

  ConfusionMatrix empty;
  empty.counts.resize(0, 0);
  CHECK_THROWS(hungarian_match(empty));
}

TEST_CASE("hungarian equals exhaustive search on random matrices") {
  auto rng = make_rng(17);
  for (int k = 2; k <= 6; ++k)
    for (int rep = 0; rep < 100; ++rep) {
      auto cm = random_cm(k, k, rng);
      CHECK(matched_count(cm, hungarian_match(cm)) ==
            matched_count(cm, brute_force_match(cm)));
    }
  // rectangular: K > C and K < C
  for (int rep = 0; rep < 50; ++rep) {
    auto wide = random_cm(5, 3, rng);
    auto m = hungarian_match(wide);
    CHECK(std::count_if(m.begin(), m.end(), [](int v) { return v >= 0; }) == 3);
    CHECK(matched_count(wide, m) == matched_count(wide, brute_force_match(wide)));
    auto tall = random_cm(3, 5, rng);
    auto mt = hungarian_match(tall);
    CHECK(matched_count(tall, mt) == matched_count(tall, brute_force_match(tall)));
  }
}

TEST_CASE("hungarian invariances") {
  auto rng = make_rng(23);
  auto cm = random_cm(5, 5, rng);
  int64_t base = matched_count(cm, hungarian_match(cm));

  // row permutation leaves the optimum unchanged
  ConfusionMatrix perm;
  perm.counts.setZero(5, 5);
  std::vector<int> order{3, 0, 4, 1, 2};
  for (int i = 0; i < 5; ++i) perm.counts.row(i) = cm.counts.row(order[i]);
  CHECK(matched_count(perm, hungarian_match(perm)) == base);

  // scaling all counts scales the optimum but not the mapping
  ConfusionMatrix scaled;
  scaled.counts = cm.counts * 7;
  CHECK(hungarian_match(scaled) == hungarian_match(cm));
}

TEST_CASE("metrics: perfect, degenerate, partitions") {
  ConfusionMatrix perfect;
  perfect.counts.setZero(3, 3);
  perfect.counts.diagonal() << 40, 30, 30;
  auto mapping = hungarian_match(perfect);
  auto all = metrics(perfect, mapping, {}, "all");
  CHECK(all.accuracy == doctest::Approx(1.0));
  CHECK(all.miou == doctest::Approx(1.0));

  // one cluster predicted everywhere over two equal gt classes
  ConfusionMatrix degen;
  degen.counts.setZero(2, 2);
  degen.counts << 50, 50, 0, 0;
  auto dm = hungarian_match(degen);
  auto dr = metrics(degen, dm, {}, "all");
  CHECK(dr.accuracy == doctest::Approx(0.5));
  CHECK(dr.miou == doctest::Approx(0.25));

  // partition class sets are disjoint and union to all
  std::vector<int> things{2}, stuff{0, 1};
  auto rng = make_rng(3);
  auto cm = random_cm(3, 3, rng, 100);
  auto m = hungarian_match(cm);
  auto rt = metrics(cm, m, things, "things");
  auto rs = metrics(cm, m, stuff, "stuff");
  auto ra = metrics(cm, m, {}, "all");
  CHECK(rt.pixels + rs.pixels == ra.pixels);
}

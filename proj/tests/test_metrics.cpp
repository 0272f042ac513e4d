#include <vector>

#include "doctest.h"
#include "fpott/error.hpp"
#include "fpott/metrics.hpp"
#include "fpott/rng.hpp"

using namespace fpott;

namespace {

std::string error_name(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.name();
  }
  return "";
}

}  // namespace

TEST_CASE("confusion examples") {
  const std::vector<std::size_t> x{0, 1, 2};
  const auto cm = confusion(x, x, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(cm.at(i, j) == (i == j ? 1u : 0u));
  }
  const std::vector<std::size_t> t{0}, p{1};
  const auto one = confusion(t, p, 3);
  CHECK(one.at(0, 1) == 1);
  CHECK(one.total() == 1);
}

TEST_CASE("confusion errors") {
  const std::vector<std::size_t> a{0, 1}, b{0}, c{0, 3}, empty;
  CHECK(error_name([&] { confusion(a, b, 3); }) == "LengthMismatch");
  CHECK(error_name([&] { confusion(empty, empty, 3); }) == "LengthMismatch");
  CHECK(error_name([&] { confusion(a, c, 3); }) == "LabelOutOfRange");
  CHECK(error_name([&] { report(ConfusionMatrix{3, std::vector<std::size_t>(9, 0)}); }) ==
        "EmptyMatrix");
}

TEST_CASE("confusion counts match class frequencies") {
  Rng rng(4);
  std::vector<std::size_t> t(1000), p(1000);
  std::vector<std::size_t> freq(3, 0);
  for (std::size_t i = 0; i < 1000; ++i) {
    t[i] = rng.index(3);
    p[i] = rng.index(3);
    ++freq[t[i]];
  }
  const auto cm = confusion(t, p, 3);
  CHECK(cm.total() == 1000);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(cm.at(c, 0) + cm.at(c, 1) + cm.at(c, 2) == freq[c]);
  }
}

TEST_CASE("report on perfect and all-wrong predictions") {
  const std::vector<std::size_t> x{0, 1, 2, 2};
  const auto r = report(confusion(x, x, 3));
  CHECK(r.precision_macro == 1.0);
  CHECK(r.recall_macro == 1.0);
  CHECK(r.f1_macro == 1.0);
  CHECK(r.accuracy == 1.0);

  const std::vector<std::size_t> t{0, 1}, p{1, 0};
  const auto w = report(confusion(t, p, 2));
  CHECK(w.accuracy == 0.0);
  CHECK(w.precision_macro == 0.0);
  CHECK(w.recall_macro == 0.0);
  CHECK(w.f1_macro == 0.0);
}

TEST_CASE("report on a worked 3-class matrix") {
  // [[5,1,0],[2,3,1],[0,0,8]]: column sums 7,4,9; row sums 6,6,8.
  ConfusionMatrix cm{3, {5, 1, 0, 2, 3, 1, 0, 0, 8}};
  const auto r = report(cm);
  const double p[3] = {5.0 / 7.0, 3.0 / 4.0, 8.0 / 9.0};
  const double rc[3] = {5.0 / 6.0, 3.0 / 6.0, 1.0};
  double f = 0.0;
  for (int i = 0; i < 3; ++i) f += 2 * p[i] * rc[i] / (p[i] + rc[i]);
  CHECK(r.precision_macro == doctest::Approx(0.7843915343915344).epsilon(1e-14));
  CHECK(r.recall_macro == doctest::Approx(7.0 / 9.0).epsilon(1e-14));
  CHECK(r.f1_macro == doctest::Approx(f / 3.0).epsilon(1e-14));
  CHECK(r.f1_macro == doctest::Approx(0.7701357466063348).epsilon(1e-14));
  CHECK(r.accuracy == 0.8);
  CHECK(r.per_class[2].support == 8);
}

TEST_CASE("metrics are invariant under consistent relabeling") {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 200;
    std::vector<std::size_t> t(n), p(n), tp(n), pp(n);
    const std::size_t perm[3] = {2, 0, 1};
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = rng.index(3);
      p[i] = rng.bernoulli(0.6) ? t[i] : rng.index(3);
      tp[i] = perm[t[i]];
      pp[i] = perm[p[i]];
    }
    const auto a = report(confusion(t, p, 3));
    const auto b = report(confusion(tp, pp, 3));
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.precision_macro == doctest::Approx(b.precision_macro).epsilon(1e-15));
    CHECK(a.recall_macro == doctest::Approx(b.recall_macro).epsilon(1e-15));
    CHECK(a.f1_macro == doctest::Approx(b.f1_macro).epsilon(1e-15));
  }
}

TEST_CASE("CSV row format") {
  MetricsReport r;
  r.precision_macro = 0.5;
  r.recall_macro = 1.0 / 3.0;
  r.f1_macro = 0.0;
  r.accuracy = 0.99865;
  CHECK(metrics_csv_row("edge", "ngsim", r) == "edge,ngsim,0.5000,0.3333,0.0000,0.9987");
  CHECK(std::string(kMetricsCsvHeader) == "model,dataset,precision,recall,f1,accuracy");
}

#include <random>

#include "doctest.h"
#include "oracle_metrics.hpp"
#include "terracover/metrics.hpp"

using namespace terra;

namespace {

LabelSet set_of(std::initializer_list<int> indices) {
  LabelSet s;
  s.indices = indices;
  return s;
}

MultiLabelBatch batch_of(std::vector<LabelSet> truth, std::vector<LabelSet> pred,
                         int num_labels) {
  return MultiLabelBatch{std::move(truth), std::move(pred), num_labels};
}

// Random batch plus its boolean-matrix mirror for the oracle.
struct BatchAndMirror {
  MultiLabelBatch batch;
  oracle::BoolMatrix truth;
  oracle::BoolMatrix pred;
};

BatchAndMirror random_batch(std::mt19937& rng, int max_n = 200, int max_labels = 10) {
  const int n = 1 + static_cast<int>(rng() % static_cast<unsigned>(max_n));
  const int k = 1 + static_cast<int>(rng() % static_cast<unsigned>(max_labels));
  BatchAndMirror out;
  out.batch.num_labels = k;
  out.truth.assign(n, std::vector<bool>(k, false));
  out.pred.assign(n, std::vector<bool>(k, false));
  for (int i = 0; i < n; ++i) {
    LabelSet y, z;
    for (int c = 0; c < k; ++c) {
      if (rng() % 3 == 0) {
        y.indices.insert(c);
        out.truth[i][c] = true;
      }
      if (rng() % 3 == 0) {
        z.indices.insert(c);
        out.pred[i][c] = true;
      }
    }
    out.batch.truth.push_back(std::move(y));
    out.batch.predicted.push_back(std::move(z));
  }
  return out;
}

}  // namespace

TEST_CASE("cardinality and density basics") {
  auto b = batch_of({set_of({0}), set_of({0, 1})}, {set_of({}), set_of({})}, 5);
  CHECK(cardinality(b) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(density(b) == doctest::Approx(0.3).epsilon(1e-15));

  auto singletons = batch_of({set_of({1}), set_of({2}), set_of({0})},
                             {set_of({}), set_of({}), set_of({})}, 3);
  CHECK(cardinality(singletons) == 1.0);

  auto one = batch_of({set_of({0})}, {set_of({0})}, 1);
  CHECK(density(one) == 1.0);

  CHECK_THROWS_AS(cardinality(batch_of({}, {}, 3)), DataError);
}

TEST_CASE("density times label count equals cardinality") {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    auto [batch, truth, pred] = random_batch(rng);
    CHECK(density(batch) * batch.num_labels ==
          doctest::Approx(cardinality(batch)).epsilon(1e-14));
  }
}

TEST_CASE("exact match breakdown") {
  auto all_exact = batch_of({set_of({0, 1}), set_of({2})},
                            {set_of({0, 1}), set_of({2})}, 3);
  auto r = exact_match_ratio(all_exact);
  CHECK(r.exact == 1.0);
  CHECK(r.partial == 0.0);
  CHECK(r.incorrect == 0.0);

  auto partial = exact_match_ratio(batch_of({set_of({0, 1})}, {set_of({0})}, 2));
  CHECK(partial.exact == 0.0);
  CHECK(partial.partial == 1.0);
  CHECK(partial.incorrect == 0.0);

  auto disjoint = exact_match_ratio(batch_of({set_of({0})}, {set_of({1})}, 2));
  CHECK(disjoint.exact == 0.0);
  CHECK(disjoint.partial == 0.0);
  CHECK(disjoint.incorrect == 1.0);
}

TEST_CASE("per-class precision/recall/f1") {
  // Class 0 in every truth and every prediction.
  auto perfect = batch_of({set_of({0}), set_of({0}), set_of({0})},
                          {set_of({0}), set_of({0}), set_of({0})}, 2);
  auto prf = per_class_prf(perfect);
  CHECK(prf[0].precision == 1.0);
  CHECK(prf[0].recall == 1.0);
  CHECK(prf[0].f1 == 1.0);
  CHECK(prf[0].support == 3);

  // Never predicted, present twice: 0/0 -> 0 convention for precision.
  auto missed = batch_of({set_of({0}), set_of({0})}, {set_of({}), set_of({})}, 1);
  prf = per_class_prf(missed);
  CHECK(prf[0].precision == 0.0);
  CHECK(prf[0].recall == 0.0);
  CHECK(prf[0].f1 == 0.0);

  // Hand-counted: TP=1, FP=1, FN=1 -> P=R=F1=0.5.
  auto mixed = batch_of({set_of({0}), set_of({0}), set_of({})},
                        {set_of({0}), set_of({}), set_of({0})}, 1);
  prf = per_class_prf(mixed);
  CHECK(prf[0].precision == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(prf[0].recall == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(prf[0].f1 == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(prf[0].support == 2);
}

TEST_CASE("overall F1 modes") {
  auto exact = batch_of({set_of({0, 1}), set_of({1})}, {set_of({0, 1}), set_of({1})}, 2);
  CHECK(overall_f1(exact, F1Mode::kSampleAveraged) == 1.0);
  CHECK(overall_f1(exact, F1Mode::kMicro) == 1.0);

  // Single sample {a,b} vs {a}: P=1, R=0.5 -> F1 = 2/3.
  auto single = batch_of({set_of({0, 1})}, {set_of({0})}, 2);
  CHECK(overall_f1(single, F1Mode::kSampleAveraged) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("batch metrics match the brute-force oracle") {
  std::mt19937 rng(42);
  for (int trial = 0; trial < 300; ++trial) {
    auto [batch, truth, pred] = random_batch(rng);

    CHECK(cardinality(batch) == doctest::Approx(oracle::cardinality(truth)).epsilon(1e-12));
    CHECK(density(batch) == doctest::Approx(oracle::density(truth)).epsilon(1e-12));

    const auto expected = oracle::breakdown(truth, pred);
    const auto actual = exact_match_ratio(batch);
    CHECK(actual.exact == doctest::Approx(expected.exact).epsilon(1e-12));
    CHECK(actual.partial == doctest::Approx(expected.partial).epsilon(1e-12));
    CHECK(actual.incorrect == doctest::Approx(expected.incorrect).epsilon(1e-12));
    CHECK((actual.exact + actual.incorrect) + actual.partial == 1.0);

    const auto expected_prf = oracle::per_class(truth, pred);
    const auto actual_prf = per_class_prf(batch);
    for (int c = 0; c < batch.num_labels; ++c) {
      CHECK(actual_prf[c].precision ==
            doctest::Approx(expected_prf[c].precision).epsilon(1e-12));
      CHECK(actual_prf[c].recall ==
            doctest::Approx(expected_prf[c].recall).epsilon(1e-12));
      CHECK(actual_prf[c].f1 == doctest::Approx(expected_prf[c].f1).epsilon(1e-12));
    }

    CHECK(overall_f1(batch, F1Mode::kSampleAveraged) ==
          doctest::Approx(oracle::f1_sample_averaged(truth, pred)).epsilon(1e-12));
    CHECK(overall_f1(batch, F1Mode::kMicro) ==
          doctest::Approx(oracle::f1_micro(truth, pred)).epsilon(1e-12));
    CHECK(overall_f1(batch, F1Mode::kMacro) ==
          doctest::Approx(oracle::f1_macro(truth, pred)).epsilon(1e-12));
  }
}

TEST_CASE("batch metrics are invariant under sample reordering") {
  std::mt19937 rng(11);
  auto [batch, truth, pred] = random_batch(rng, 50, 8);

  MultiLabelBatch reversed = batch;
  std::reverse(reversed.truth.begin(), reversed.truth.end());
  std::reverse(reversed.predicted.begin(), reversed.predicted.end());

  CHECK(cardinality(batch) == cardinality(reversed));
  CHECK(overall_f1(batch, F1Mode::kSampleAveraged) ==
        doctest::Approx(overall_f1(reversed, F1Mode::kSampleAveraged)).epsilon(1e-12));
  CHECK(exact_match_ratio(batch).exact == exact_match_ratio(reversed).exact);
}

TEST_CASE("pixel accuracy") {
  MaskGrid truth = MaskGrid::filled(2, 2, 1);
  MaskGrid pred = truth;
  CHECK(pixel_accuracy(truth, pred) == 1.0);

  pred.at(0, 1) = 0;
  CHECK(pixel_accuracy(truth, pred) == 0.75);

  // Nodata pixels are ignored even when they differ.
  truth.at(1, 1) = kNodata;
  pred.at(1, 1) = 2;
  CHECK(pixel_accuracy(truth, pred) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  MaskGrid all_nodata = MaskGrid::filled(2, 2, kNodata);
  CHECK_THROWS_AS(pixel_accuracy(all_nodata, all_nodata), DataError);
  MaskGrid small = MaskGrid::filled(1, 2, 0);
  CHECK_THROWS_AS(pixel_accuracy(truth, small), DataError);
}

TEST_CASE("jaccard per class") {
  MaskGrid truth = MaskGrid::filled(2, 4, 0);
  truth.at(0, 2) = truth.at(0, 3) = truth.at(1, 2) = truth.at(1, 3) = 1;
  MaskGrid pred = MaskGrid::filled(2, 4, 0);  // everything class 0

  auto iou = jaccard_per_class(truth, pred, 3);
  CHECK(iou[0].present);
  CHECK(iou[0].iou == doctest::Approx(0.5).epsilon(1e-15));  // TP=4, FP=4
  CHECK(iou[1].present);
  CHECK(iou[1].iou == 0.0);
  CHECK_FALSE(iou[2].present);  // absent from both, excluded from means

  auto self = jaccard_per_class(truth, truth, 3);
  CHECK(self[0].iou == 1.0);
  CHECK(self[1].iou == 1.0);
  CHECK(mean_iou(self) == 1.0);
}

TEST_CASE("confusion matrix counts and normalization") {
  MaskGrid truth = MaskGrid::filled(2, 2, 0);
  MaskGrid pred = MaskGrid::filled(2, 2, 0);
  pred.at(0, 0) = 1;
  pred.at(0, 1) = 1;

  auto matrix = confusion(truth, pred, 2);
  CHECK(matrix.count(0, 0) == 2);
  CHECK(matrix.count(0, 1) == 2);
  CHECK(matrix.count(1, 0) == 0);

  auto normalized = matrix.row_normalized();
  CHECK(normalized(0, 0) == doctest::Approx(0.5));
  CHECK(normalized(0, 1) == doctest::Approx(0.5));
  CHECK(normalized.row(1).sum() == 0.0);  // empty row stays zero

  auto diagonal = confusion(truth, truth, 2);
  CHECK(diagonal.count(0, 0) == 4);
  CHECK(diagonal.diagonal_total() == diagonal.total());
}

TEST_CASE("confusion diagonal over total equals pixel accuracy") {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = 1 + static_cast<int>(rng() % 32);
    const int w = 1 + static_cast<int>(rng() % 32);
    const int k = 2 + static_cast<int>(rng() % 6);
    MaskGrid truth = MaskGrid::filled(h, w, 0);
    MaskGrid pred = MaskGrid::filled(h, w, 0);
    for (auto& v : truth.values) {
      v = rng() % 11 == 0 ? kNodata : static_cast<std::uint8_t>(rng() % k);
    }
    for (auto& v : pred.values) v = static_cast<std::uint8_t>(rng() % k);
    bool any_valid = false;
    for (auto v : truth.values) any_valid |= v != kNodata;
    if (!any_valid) continue;

    auto matrix = confusion(truth, pred, k);
    CHECK(static_cast<double>(matrix.diagonal_total()) /
              static_cast<double>(matrix.total()) ==
          doctest::Approx(pixel_accuracy(truth, pred)).epsilon(1e-12));

    auto normalized = matrix.row_normalized();
    for (int r = 0; r < k; ++r) {
      const double row_sum = normalized.row(r).sum();
      if (matrix.counts().row(r).sum() > 0) {
        CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("pearson correlation") {
  const double xs[] = {1, 2, 3};
  const double up[] = {2, 4, 6};
  const double down[] = {6, 4, 2};
  CHECK(pearson(xs, up) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pearson(xs, down) == doctest::Approx(-1.0).epsilon(1e-15));

  // Hand-computed: cov=4, var_x=var_y=5 -> r = 4/5.
  const double a[] = {1, 2, 3, 4};
  const double b[] = {1, 3, 2, 4};
  CHECK(pearson(a, b) == doctest::Approx(0.8).epsilon(1e-15));

  const double constant[] = {2, 2, 2};
  CHECK_THROWS_AS(pearson(xs, constant), DataError);
  const double two[] = {1, 2};
  CHECK_THROWS_AS(pearson(xs, two), DataError);
}

TEST_CASE("class report aggregates the suite") {
  auto batch = batch_of({set_of({0, 1}), set_of({1})}, {set_of({0}), set_of({1})}, 3);
  auto report = make_class_report(batch);
  CHECK(report.num_samples == 2);
  CHECK(report.num_labels == 3);
  CHECK(report.match.exact == doctest::Approx(0.5));
  CHECK(report.per_class.size() == 3);
  CHECK(report.f1_sample_averaged ==
        doctest::Approx((2.0 / 3.0 + 1.0) / 2).epsilon(1e-15));
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "gauda/ensemble.hpp"
#include "gauda/metrics.hpp"
#include "gauda/sampling.hpp"

using namespace gauda;

namespace {
Tensor random_probs(RngStream& rng, std::size_t rows, std::size_t k) { return softmax_rows(scale(gaussian(rng, {rows, k}), 2.0)); }
}  // namespace

TEST(Ensemble, MeanOfTwoOneHotsIsHalfHalf) {
  PosteriorSet ps{{Tensor::matrix({{1.0, 0.0}}), Tensor::matrix({{0.0, 1.0}})}};
  EXPECT_EQ(mean_prediction(ps), Tensor::matrix({{0.5, 0.5}}));
}

TEST(Ensemble, SingleMemberMeanIsIdentity) {
  RngStream rng(1);
  const Tensor p = random_probs(rng, 3, 4);
  EXPECT_EQ(mean_prediction(PosteriorSet{{p}}), p);
}

TEST(Ensemble, TwoMemberSinglePixelVarianceIsQuarter) {
  // Member probabilities for the argmax class are 1 and 0 (tie broken to class 0).
  PosteriorSet ps{{Tensor::matrix({{1.0, 0.0}}), Tensor::matrix({{0.0, 1.0}})}};
  const auto ue = class_uncertainty(ps);
  ASSERT_TRUE(ue[0].has_value());
  EXPECT_DOUBLE_EQ(*ue[0], 0.25);
  EXPECT_FALSE(ue[1].has_value());
}

TEST(Ensemble, IdenticalMembersHaveZeroUncertainty) {
  RngStream rng(2);
  const Tensor p = random_probs(rng, 20, 3);
  for (const auto& u : class_uncertainty(PosteriorSet{{p, p, p}}))
    if (u) {
      EXPECT_EQ(*u, 0.0);
    }
}

TEST(Ensemble, PermutationInvariance) {
  RngStream rng(3);
  PosteriorSet a{{random_probs(rng, 30, 3), random_probs(rng, 30, 3), random_probs(rng, 30, 3)}};
  PosteriorSet b{{a.predictions[2], a.predictions[0], a.predictions[1]}};
  const auto ua = class_uncertainty(a), ub = class_uncertainty(b);
  for (std::size_t c = 0; c < 3; ++c) {
    ASSERT_EQ(ua[c].has_value(), ub[c].has_value());
    if (ua[c]) {
      EXPECT_NEAR(*ua[c], *ub[c], 1e-15);
    }
  }
}

TEST(Ensemble, FreshMembersDisagreeAndAreFlaggedUntrained) {
  EnsembleConfig cfg;
  cfg.members = 3;
  cfg.hidden = {10};
  EnsembleModel ens(cfg, RngStream(4));
  RngStream rng(5);
  const auto ps = ens.predict_posterior(gaussian(rng, {5, 2}));
  EXPECT_TRUE(ps.untrained);
  EXPECT_NE(ps.predictions[0], ps.predictions[1]);
  for (std::size_t r = 0; r < ps.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 2; ++c) s += ps.predictions[0](r, c);
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Ensemble, TrainingLearnsLinearRuleAndCheckpoints) {
  EnsembleConfig cfg;
  cfg.members = 2;
  cfg.hidden = {16};
  cfg.adam = AdamConfig::adam(1e-2);
  EnsembleModel ens(cfg, RngStream(6));
  RngStream rng(7);
  for (int step = 0; step < 300; ++step) {
    const Tensor x = gaussian(rng, {32, 2});
    std::vector<int> y(32);
    for (std::size_t i = 0; i < 32; ++i) y[i] = x(i, 0) > 0.0;
    for (std::size_t m = 0; m < 2; ++m) ens.train_step(m, x, y, rng);
  }
  const Tensor xt = gaussian(rng, {200, 2});
  const Tensor mf = mean_prediction(ens.predict_posterior(xt));
  int ok = 0;
  for (std::size_t i = 0; i < 200; ++i) ok += static_cast<int>(argmax(mf.row_span(i))) == (xt(i, 0) > 0.0);
  EXPECT_GT(ok, 185);
  const auto dir = std::filesystem::temp_directory_path() / "gauda_test_ens";
  std::filesystem::remove_all(dir);
  ens.save(dir, 6);
  const auto back = EnsembleModel::load(dir);
  EXPECT_FALSE(back.predict_posterior(xt).untrained);
  EXPECT_EQ(mean_prediction(back.predict_posterior(xt)), mf);
}

TEST(Sampling, FrequencyWeightsFormula) {
  const std::vector<std::size_t> h{1, 4};
  const auto w = freq_weights(h);
  EXPECT_DOUBLE_EQ(w.weights[0], 1.0);
  EXPECT_DOUBLE_EQ(w.weights[1], 0.5);
  const std::vector<std::size_t> h4{4, 16};
  const auto w4 = freq_weights(h4);
  EXPECT_DOUBLE_EQ(w4.weights[0], 0.5);
  EXPECT_EQ(w4.normalized(), w.normalized());
}

TEST(Sampling, ZeroCountClassExcludedWithWarning) {
  std::string seen;
  auto old = set_warning_sink([&](const std::string& m) { seen = m; });
  const std::vector<std::size_t> h{0, 9};
  const auto w = freq_weights(h);
  set_warning_sink(old);
  EXPECT_EQ(w.weights[0], 0.0);
  EXPECT_NE(seen.find("class 0"), std::string::npos);
}

TEST(Sampling, ScoreUpdateMatchesFormula) {
  const std::vector<std::optional<double>> s{1.0, 0.0};
  const auto w = score_adaptive_update(uniform_weights(2), s);
  EXPECT_NEAR(w.weights[0], 0.05 / 1.1, 1e-12);
  EXPECT_NEAR(w.weights[1], 1.05 / 1.1, 1e-12);
  EXPECT_NEAR(w.weights[0], 0.0455, 1e-4);
  const std::vector<std::optional<double>> eq{0.3, 0.3, 0.3};
  for (double v : score_adaptive_update(uniform_weights(3), eq).weights) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Sampling, ScoreUpdateMonotone) {
  RngStream rng(8);
  for (int i = 0; i < 200; ++i) {
    std::vector<std::optional<double>> s{rng.uniform(), rng.uniform(), rng.uniform()};
    const double before = score_adaptive_update(uniform_weights(3), s).weights[1];
    s[1] = *s[1] * rng.uniform();
    EXPECT_GE(score_adaptive_update(uniform_weights(3), s).weights[1], before - 1e-15);
  }
}

TEST(Sampling, UncertaintyUpdateMatchesFormula) {
  const std::vector<std::optional<double>> ue{0.2, 0.0};
  const auto w = uncertainty_adaptive_update(uniform_weights(2), ue);
  EXPECT_NEAR(w.weights[0], 0.25 / 0.3, 1e-12);
  EXPECT_NEAR(w.weights[1], 0.05 / 0.3, 1e-12);
  const std::vector<std::optional<double>> zero{0.0, 0.0, 0.0};
  for (double v : uncertainty_adaptive_update(uniform_weights(3), zero).weights) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Sampling, AbsentClassTakesMaximumUncertainty) {
  const std::vector<std::optional<double>> ue{0.1, std::nullopt, 0.2};
  const auto w = uncertainty_adaptive_update(uniform_weights(3), ue);
  EXPECT_DOUBLE_EQ(w.weights[1], w.weights[2]);
}

TEST(Sampling, UniformDrawsWithinThreeSigma) {
  std::vector<std::vector<int>> presence(10, std::vector<int>{0});
  RngStream rng(9);
  const auto ids = draw_batch(presence, uniform_weights(1), 100000, rng);
  std::vector<int> counts(10, 0);
  for (auto i : ids) ++counts[i];
  const double sd = std::sqrt(100000 * 0.1 * 0.9);
  for (int c : counts) EXPECT_NEAR(c, 10000.0, 3.0 * sd);
}

TEST(Sampling, ChiSquareAgreesWithPerSampleWeights) {
  std::vector<std::vector<int>> presence{{0}, {1}, {0, 1}, {2}, {0, 2}};
  ClassWeights cw{{1.0, 2.0, 5.0}, WeightSource::uniform, 0};
  BatchSampler sampler(presence, cw);
  RngStream rng(10);
  std::vector<double> counts(5, 0.0);
  for (auto i : sampler.draw(100000, rng)) counts[i] += 1.0;
  double chi2 = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    const double e = 100000.0 * sampler.probability(i);
    chi2 += (counts[i] - e) * (counts[i] - e) / e;
  }
  EXPECT_LT(chi2, 13.28);  // χ²(4) at α = 0.01
  // Mean of normalised class weights over the presence set.
  EXPECT_NEAR(sampler.probability(2) / sampler.probability(0), (0.125 + 0.25) / 2.0 / 0.125, 1e-12);
}

TEST(Sampling, SingleWeightedSampleFillsBatch) {
  std::vector<std::vector<int>> presence{{0}, {1}, {0}};
  ClassWeights cw{{0.0, 1.0}, WeightSource::uniform, 0};
  RngStream rng(11);
  for (auto i : draw_batch(presence, cw, 50, rng)) EXPECT_EQ(i, 1u);
  RngStream a(3), b(3);
  EXPECT_EQ(draw_batch(presence, uniform_weights(2), 20, a), draw_batch(presence, uniform_weights(2), 20, b));
  EXPECT_THROW(draw_batch({}, uniform_weights(2), 1, a), std::invalid_argument);
}

TEST(Metrics, ShiftedSquareIoU) {
  std::vector<int> a(16, 0), b(16, 0);
  for (int y : {1, 2})
    for (int x : {1, 2}) {
      a[y * 4 + x] = 1;
      b[y * 4 + x + 1] = 1;
    }
  const auto iou = iou_per_label(a, b, 2);
  EXPECT_NEAR(*iou[1], 2.0 / 6.0, 1e-15);
}

TEST(Metrics, PerfectAndDisjoint) {
  const std::vector<int> a{0, 1, 1, 2}, b{2, 2, 2, 0};
  for (const auto& v : iou_per_label(a, a, 4)) {
    if (v) {
      EXPECT_EQ(*v, 1.0);
    }
  }
  EXPECT_FALSE(iou_per_label(a, a, 4)[3].has_value());
  EXPECT_EQ(*iou_per_label(a, b, 3)[1], 0.0);
  EXPECT_THROW(iou_per_label(a, std::vector<int>{0}, 3), std::invalid_argument);
}

TEST(Metrics, DiceIouIdentityFuzz) {
  RngStream rng(12);
  for (int t = 0; t < 500; ++t) {
    std::vector<int> a(30), b(30);
    for (auto& v : a) v = static_cast<int>(rng.uniform_index(3));
    for (auto& v : b) v = static_cast<int>(rng.uniform_index(3));
    const auto iou = iou_per_label(a, b, 3), dice = dice_per_label(a, b, 3);
    for (std::size_t c = 0; c < 3; ++c)
      if (iou[c]) {
        EXPECT_NEAR(*dice[c], 2.0 * *iou[c] / (1.0 + *iou[c]), 1e-9);
      }
  }
}

namespace {
// Exhaustive threshold sweep: every distinct score value as a cut.
double brute_ap(const std::vector<double>& s, const std::vector<bool>& pos) {
  std::vector<double> th(s);
  std::sort(th.begin(), th.end(), std::greater<>());
  th.erase(std::unique(th.begin(), th.end()), th.end());
  double npos = 0;
  for (bool p : pos) npos += p;
  double area = 0.0, pr = 0.0, pp = 1.0;
  for (double t : th) {
    double tp = 0, n = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= t) {
        ++n;
        tp += pos[i];
      }
    const double r = tp / npos, p = tp / n;
    area += (r - pr) * (p + pp) / 2.0;
    pr = r;
    pp = p;
  }
  return area;
}
}  // namespace

TEST(Metrics, AveragePrecisionMatchesBruteForce) {
  RngStream rng(13);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 5 + rng.uniform_index(40);
    std::vector<double> s(n);
    std::vector<bool> pos(n);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::round(rng.uniform() * 10.0) / 10.0;  // forces ties
      pos[i] = rng.bernoulli(0.3);
      any = any || pos[i];
    }
    if (!any) pos[0] = true;
    auto flags = std::make_unique<bool[]>(n);
    std::copy(pos.begin(), pos.end(), flags.get());
    EXPECT_NEAR(*average_precision(s, std::span<const bool>(flags.get(), n)), brute_ap(s, pos), 1e-9);
  }
}

TEST(Metrics, PerfectAveragePrecision) {
  const Tensor probs = Tensor::matrix({{0.9, 0.1}, {0.2, 0.8}, {0.7, 0.3}});
  const std::vector<int> truth{0, 1, 0};
  for (const auto& v : ap_per_label(probs, truth)) EXPECT_DOUBLE_EQ(*v, 1.0);
}

TEST(Metrics, AggregateModes) {
  const std::vector<LabelScores> one{{0.7}};
  EXPECT_EQ(aggregate(one, Aggregate::label_mean), 0.7);
  EXPECT_EQ(aggregate(one, Aggregate::sample_mean), 0.7);
  EXPECT_EQ(aggregate(one, Aggregate::sample_median), 0.7);
  const std::vector<LabelScores> ex{{0.2, 0.4, std::nullopt}};
  EXPECT_NEAR(aggregate(ex, Aggregate::label_mean), 0.3, 1e-15);
  const std::vector<LabelScores> med{{0.1}, {0.9}, {0.5}};
  EXPECT_EQ(aggregate(med, Aggregate::sample_median), 0.5);
  const std::vector<LabelScores> none{{std::nullopt}};
  EXPECT_THROW(aggregate(none, Aggregate::label_mean), std::invalid_argument);
}

TEST(Metrics, CohensD) {
  const std::vector<double> a{2, 4, 6}, b{1, 3, 5}, z{0, 0, 0, 0}, o{1, 1, 1, 1};
  EXPECT_NEAR(*cohens_d(a, b), 0.5, 1e-15);
  EXPECT_EQ(*cohens_d(a, a), 0.0);
  EXPECT_FALSE(cohens_d(z, o).has_value());
}

TEST(Metrics, MmdTinyCaseMatchesExpansion) {
  const Tensor x = Tensor::matrix({{0.1, 0.2}, {0.3, -0.1}, {1.0, 0.5}});
  const Tensor y = Tensor::matrix({{-0.2, 0.4}, {0.0, 0.0}, {0.6, 0.9}});
  auto k = [](const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    const double d = (a(i, 0) * b(j, 0) + a(i, 1) * b(j, 1)) / 2.0 + 1.0;
    return d * d * d;
  };
  double xx = 0, yy = 0, xy = 0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      if (i != j) xx += k(x, i, x, j), yy += k(y, i, y, j);
      xy += k(x, i, y, j);
    }
  EXPECT_NEAR(mmd_unbiased(x, y), xx / 6 + yy / 6 - 2 * xy / 9, 1e-12);
  EXPECT_NEAR(mmd_unbiased(x, y), mmd_unbiased(y, x), 1e-12);
  EXPECT_THROW(mmd_unbiased(x, Tensor({3, 3})), std::invalid_argument);
}

TEST(Metrics, MmdSeparatesShiftedGaussians) {
  RngStream rng(14);
  const Tensor x = gaussian(rng, {300, 4});
  Tensor y = gaussian(rng, {300, 4});
  for (auto& v : y.data()) v += 3.0;
  const auto e = kernel_mmd(x, y, RngStream(15));
  EXPECT_GT(e.value, 5.0 * e.std);
}

TEST(Metrics, CsvRoundTripAndFormat) {
  RunMetrics m;
  m.add(200, "val", "GAUDA", "iou", std::size_t{3}, 0.1);
  m.add(-1, "test", "none", "iou", "ALL", 1.0 / 3.0);
  const auto path = std::filesystem::temp_directory_path() / "gauda_metrics.csv";
  m.write_csv(path);
  const auto back = RunMetrics::read_csv(path);
  EXPECT_EQ(back.to_csv(), m.to_csv());
  EXPECT_EQ(*back.find("test", "iou", "ALL"), 1.0 / 3.0);
  EXPECT_NE(m.to_csv().find("0.10000000000000001"), std::string::npos);
}

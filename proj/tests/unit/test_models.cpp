#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "gauda/autoencoder.hpp"
#include "gauda/data.hpp"
#include "gauda/diffusion.hpp"
#include "gauda/grad_check.hpp"
#include "gauda/metrics.hpp"
#include "gauda/nn.hpp"

using namespace gauda;

namespace {
std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("gauda_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}
}  // namespace

TEST(Mlp, PredictMatchesTapeForwardInEval) {
  RngStream rng(1);
  MlpModel m({{3, 8, 2}, 0.5}, rng);
  const Tensor x = gaussian(rng, {4, 3});
  Tape t;
  auto b = m.bind(t);
  Var y = m.forward(t, b, t.constant(x), Mode::eval);
  EXPECT_LT(max_abs_diff(t.value(y), m.predict(x)), 1e-12);
}

TEST(Mlp, DropoutIsInvertedAndSeeded) {
  RngStream init(2);
  MlpModel m({{2, 200, 1}, 0.5}, init);
  const Tensor x = Tensor::matrix({{1.0, -1.0}});
  auto run = [&](std::uint64_t seed) {
    RngStream r(seed);
    Tape t;
    auto b = m.bind(t);
    return t.value(m.forward(t, b, t.constant(x), Mode::train, &r));
  };
  EXPECT_EQ(run(5), run(5));
  EXPECT_NE(run(5), run(6));
}

TEST(Mlp, LossGradCheck) {
  RngStream rng(3);
  MlpModel m({{3, 6, 4}, 0.0}, rng);
  const Tensor target = one_hot(std::vector<int>{0, 3}, 4);
  auto f = tape_function([&](Tape& t, Var x) {
    auto b = m.bind(t);
    return t.cross_entropy(m.forward(t, b, x, Mode::eval), target);
  });
  EXPECT_LT(grad_check(f, gaussian(rng, {2, 3}), 1e-5), 1e-5);
}

TEST(Mlp, SaveLoadRoundTrip) {
  RngStream rng(4);
  MlpModel m({{3, 5, 2}, 0.1}, rng);
  const auto dir = scratch("mlp");
  std::filesystem::create_directories(dir);
  m.save(dir / "m");
  const MlpModel back = MlpModel::load(dir / "m");
  EXPECT_EQ(back.parameters(), m.parameters());
  EXPECT_EQ(back.config().dropout_p, 0.1);
  EXPECT_THROW(MlpModel::load(dir / "missing"), MissingArtifactError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<Tensor> p{Tensor::row({1.0, -1.0})};
  AdamState st(AdamConfig::adam(0.1), p);
  adam_step(st, p, {Tensor::row({3.0, -0.5})});
  EXPECT_NEAR(p[0][0], 0.9, 1e-7);
  EXPECT_NEAR(p[0][1], -0.9, 1e-7);
}

TEST(Adam, DecoupledDecayShrinksWithZeroGradient) {
  std::vector<Tensor> p{Tensor::row({2.0})};
  AdamState st(AdamConfig::adamw(0.1, 0.5), p);
  adam_step(st, p, {Tensor::row({0.0})});
  EXPECT_NEAR(p[0][0], 2.0 - 0.1 * 0.5 * 2.0, 1e-12);
}

TEST(Adam, NonFiniteGradientLeavesStateUntouched) {
  std::vector<Tensor> p{Tensor::row({1.0})};
  AdamState st(AdamConfig::adam(), p);
  EXPECT_THROW(adam_step(st, p, {Tensor::row({NAN})}), NumericError);
  EXPECT_EQ(p[0][0], 1.0);
  EXPECT_EQ(st.step, 0u);
}

TEST(Adam, ConvergesOnQuadratic) {
  std::vector<Tensor> p{Tensor::row({5.0, -3.0})};
  AdamState st(AdamConfig::adam(0.05), p);
  for (int i = 0; i < 2000; ++i) adam_step(st, p, {scale(p[0], 2.0)});
  EXPECT_LT(std::abs(p[0][0]), 1e-2);
  EXPECT_LT(std::abs(p[0][1]), 1e-2);
}

TEST(Schedule, AlphaBarIsCumulativeProduct) {
  const auto s = make_linear_schedule(50, 1e-4, 0.05);
  double prod = 1.0;
  for (std::size_t t = 1; t <= 50; ++t) {
    prod *= 1.0 - s.beta_at(t);
    EXPECT_NEAR(s.alpha_bar_at(t), prod, 1e-12);
  }
  EXPECT_THROW(s.beta_at(0), std::out_of_range);
  EXPECT_THROW(make_linear_schedule(10, 0.1, 1.5), std::invalid_argument);
}

TEST(Schedule, ForwardNoiseInvertsExactly) {
  RngStream rng(7);
  const auto s = make_linear_schedule(100, 1e-4, 0.02);
  const Tensor z0 = gaussian(rng, {3, 4}), eps = gaussian(rng, {3, 4});
  const Tensor zt = forward_noise(z0, 40, eps, s);
  EXPECT_LT(max_abs_diff(invert_forward_noise(zt, 40, eps, s), z0), 1e-12);
}

TEST(Cfg, CombineIdentities) {
  const Tensor a = Tensor::row({1.0, 2.0}), b = Tensor::row({0.0, 1.0});
  EXPECT_EQ(cfg_combine(a, a, 3.0), a);
  EXPECT_EQ(cfg_combine(a, b, 0.0), a);
  EXPECT_EQ(cfg_combine(a, b, 1.0), Tensor::row({2.0, 3.0}));
}

TEST(Denoiser, LossGradCheckOverLatents) {
  RngStream rng(8);
  DenoiserConfig cfg;
  cfg.latent_dim = 4;
  cfg.num_classes = 3;
  cfg.hidden = {16};
  ConditionalDenoiser den(cfg, rng);
  const auto sched = make_linear_schedule(20, 1e-4, 0.05);
  const std::vector<std::size_t> t{3, 17};
  const std::vector<int> cls{1, kUnconditional};
  const Tensor eps = gaussian(rng, {2, 4});
  auto f = tape_function([&](Tape& tape, Var zt) {
    auto b = den.bind(tape);
    return tape.mse(den.forward(tape, b, zt, t, cls), eps);
  });
  EXPECT_LT(grad_check(f, gaussian(rng, {2, 4}), 1e-5), 1e-5);
}

TEST(Denoiser, BatchedPredictMatchesTape) {
  RngStream rng(9);
  DenoiserConfig cfg;
  cfg.latent_dim = 4;
  cfg.num_classes = 2;
  cfg.hidden = {8};
  ConditionalDenoiser den(cfg, rng);
  const Tensor z = gaussian(rng, {3, 4});
  const std::vector<std::size_t> t(3, 5);
  const std::vector<int> cls(3, 1);
  Tape tape;
  auto b = den.bind(tape);
  Var y = den.forward(tape, b, tape.constant(z), t, cls);
  EXPECT_LT(max_abs_diff(tape.value(y), den(z, 5, 1)), 1e-12);
  EXPECT_THROW(den(z, 5, 2), std::invalid_argument);
}

TEST(Sampler, OmegaZeroEqualsConditional) {
  RngStream rng(10);
  DenoiserConfig cfg;
  cfg.latent_dim = 3;
  cfg.num_classes = 2;
  cfg.hidden = {8};
  ConditionalDenoiser den(cfg, rng);
  const auto s = make_linear_schedule(10, 1e-4, 0.05);
  RngStream a(77), b(77);
  const Tensor x0 = reverse_sample(den, s, 3, 1, 0.0, a, 5);
  const Tensor x1 = reverse_sample(den, s, 3, 1, 0.0, b, 5);
  EXPECT_EQ(x0, x1);
  RngStream c(77);
  EXPECT_NE(reverse_sample(den, s, 3, 1, 2.0, c, 5), x0);
}

TEST(Sampler, NonFiniteStateReportsStep) {
  const auto s = make_linear_schedule(10, 1e-4, 0.05);
  auto bad = [](const Tensor& x, std::size_t t, int) { return t == 4 ? Tensor(x.shape(), NAN) : Tensor(x.shape()); };
  RngStream rng(1);
  try {
    reverse_sample(bad, s, 2, 0, 0.0, rng, 1);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 4"), std::string::npos);
  }
}

TEST(Denoiser, TrainingReducesLoss) {
  RngStream rng(11);
  DenoiserConfig cfg;
  cfg.latent_dim = 2;
  cfg.num_classes = 2;
  cfg.hidden = {32};
  ConditionalDenoiser den(cfg, rng);
  Tensor lat({200, 2});
  std::vector<std::vector<int>> sets(200);
  for (std::size_t i = 0; i < 200; ++i) {
    const int c = static_cast<int>(i % 2);
    lat(i, 0) = c ? 1.5 : -1.5;
    lat(i, 1) = 0.1 * rng.normal();
    sets[i] = {c};
  }
  const auto sched = make_linear_schedule(50, 1e-4, 0.05);
  DiffusionTrainConfig tc;
  tc.steps = 400;
  tc.batch = 64;
  auto curve = train_denoiser(den, lat, sets, sched, tc, rng);
  const double early = mean_of(std::span(curve).first(50)), late = mean_of(std::span(curve).last(50));
  EXPECT_LT(late, 0.8 * early);
}

TEST(Denoiser, GuidedSamplesLandOnConditionedComponent) {
  RngStream rng(13);
  DenoiserConfig cfg;
  cfg.latent_dim = 2;
  cfg.num_classes = 2;
  cfg.hidden = {64, 64};
  ConditionalDenoiser den(cfg, rng);
  const double sigma = 0.3, centre[2] = {-2.0, 2.0};
  Tensor lat({400, 2});
  std::vector<std::vector<int>> sets(400);
  for (std::size_t i = 0; i < 400; ++i) {
    const int c = static_cast<int>(i % 2);
    lat(i, 0) = centre[c] + sigma * rng.normal();
    lat(i, 1) = sigma * rng.normal();
    sets[i] = {c};
  }
  const auto sched = make_linear_schedule(100, 1e-4, 0.1);
  DiffusionTrainConfig tc;
  tc.steps = 8000;
  tc.batch = 64;
  train_denoiser(den, lat, sets, sched, tc, rng);
  for (int c = 0; c < 2; ++c) {
    const Tensor z = sample_latents(den, sched, c, 3.0, rng, 200).latents;
    std::size_t inside = 0;
    for (std::size_t i = 0; i < z.rows(); ++i) inside += std::hypot(z(i, 0) - centre[c], z(i, 1)) < 3.0 * sigma;
    EXPECT_GE(static_cast<double>(inside) / static_cast<double>(z.rows()), 0.95) << "class " << c;
  }
}

TEST(Data, Toy2DSplitAndSeparability) {
  Toy2DSpec spec;
  spec.noise_sigma = 0.0;
  RngStream rng(12);
  const auto d = gen_toy2d(spec, rng);
  EXPECT_EQ(d.labels.size(), 1100u);
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    const double r = std::hypot(d.points(i, 0), d.points(i, 1));
    EXPECT_EQ(d.labels[i], r > spec.threshold ? 1 : 0);
  }
  EXPECT_EQ(d.split.train.size(), 990u);
  EXPECT_EQ(d.split.val.size(), 55u);
  EXPECT_EQ(d.split.test.size(), 55u);
}

TEST(Data, SplitOfHundredIsNinetyFiveFive) {
  std::vector<int> strata(100, 0);
  RngStream rng(1);
  const auto s = split_90_5_5(strata, rng);
  EXPECT_EQ(s.train.size(), 90u);
  EXPECT_EQ(s.val.size(), 5u);
  EXPECT_EQ(s.test.size(), 5u);
}

TEST(Data, ShapesMasksAreOneHotAndAligned) {
  ShapesSegSpec spec;
  spec.noise_sigma = 0.0;
  spec.count = 300;
  RngStream rng(13);
  const auto d = gen_shapes_seg(spec, rng);
  for (const auto& s : d.samples) {
    s.validate();
    const auto lab = s.labels();
    for (std::size_t p = 0; p < lab.size(); ++p)
      EXPECT_DOUBLE_EQ(s.image[p], spec.classes[static_cast<std::size_t>(lab[p])].intensity);
  }
}

TEST(Data, RareClassRateWithinBinomialBand) {
  ShapesSegSpec spec;
  spec.count = 2000;
  spec.classes[3].occurrence = 0.05;
  RngStream rng(14);
  const auto d = gen_shapes_seg(spec, rng);
  std::size_t n = 0;
  for (const auto& s : d.samples) n += contains(s.presence, 3);
  EXPECT_NEAR(static_cast<double>(n), 100.0, 3.0 * std::sqrt(2000 * 0.05 * 0.95));
}

TEST(Data, SameSeedIsBitIdentical) {
  ShapesSegSpec spec;
  spec.count = 50;
  RngStream a(15), b(15);
  const auto d1 = gen_shapes_seg(spec, a), d2 = gen_shapes_seg(spec, b);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(d1.samples[i].image, d2.samples[i].image);
    EXPECT_EQ(d1.samples[i].mask, d2.samples[i].mask);
  }
}

TEST(Data, DumpLoadRoundTrip) {
  ShapesSegSpec spec;
  spec.count = 40;
  RngStream rng(16);
  const auto d = gen_shapes_seg(spec, rng);
  const auto dir = scratch("dataset");
  std::filesystem::create_directories(dir);
  dump_dataset(d, dir / "shapes", 16);
  const auto back = load_dataset(dir / "shapes");
  ASSERT_EQ(back.samples.size(), 40u);
  EXPECT_EQ(back.samples[7].mask, d.samples[7].mask);
  EXPECT_EQ(back.split.test, d.split.test);
}

TEST(Data, OversizedShapeRejected) {
  ShapesSegSpec spec;
  spec.height = 2;
  spec.width = 2;
  RngStream rng(1);
  EXPECT_THROW(gen_shapes_seg(spec, rng), std::invalid_argument);
}

TEST(Vq, NearestEntryLowestIndexOnTies) {
  Codebook book{Tensor::matrix({{0.0, 0.0}, {1.0, 1.0}, {1.0, 1.0}}), 0.25};
  const auto q = quantize(Tensor::matrix({{0.9, 1.2, 0.1, -0.1}}), book);
  ASSERT_EQ(q.indices.size(), 2u);
  EXPECT_EQ(q.indices[0], 1u);
  EXPECT_EQ(q.indices[1], 0u);
  EXPECT_EQ(q.zq, Tensor::matrix({{1.0, 1.0, 0.0, 0.0}}));
  EXPECT_THROW(quantize(Tensor::matrix({{1.0}}), Codebook{}), std::invalid_argument);
}

TEST(Vq, CommitmentScalesCodebookTerm) {
  Codebook book{Tensor::matrix({{0.0, 0.0}}), 0.25};
  const auto q = quantize(Tensor::matrix({{3.0, 4.0}}), book);
  EXPECT_DOUBLE_EQ(q.codebook_loss, 12.5);
  EXPECT_DOUBLE_EQ(q.commitment_loss, 0.25 * 12.5);
}

TEST(Autoencoder, RejectsNonCompressingLatent) {
  RngStream rng(1);
  AutoencoderConfig cfg;
  cfg.latent_dim = 200;
  EXPECT_THROW(PairedAutoencoder(PairGeometry{}, cfg, rng), std::invalid_argument);
}

TEST(Autoencoder, BranchLossesGradCheck) {
  RngStream rng(17);
  AutoencoderConfig cfg;
  cfg.latent_dim = 4;
  cfg.hidden = 8;
  cfg.code_dim = 2;
  cfg.codebook_size = 5;
  PairGeometry geo{1, 3, 2, 2};
  PairedAutoencoder ae(geo, cfg, rng);
  const Tensor x = uniform_tensor(rng, {3, 4});
  auto f = tape_function([&](Tape& t, Var xin) {
    auto eb = ae.image_encoder().bind(t);
    auto db = ae.image_decoder().bind(t);
    return t.mse(ae.image_decoder().forward(t, db, ae.image_encoder().forward(t, eb, xin, Mode::eval), Mode::eval), x);
  });
  EXPECT_LT(grad_check(f, x, 1e-5), 1e-5);
}

TEST(Autoencoder, LearnsShapesAndRoundTripsToDisk) {
  ShapesSegSpec spec;
  spec.count = 600;
  RngStream rng(18);
  const auto d = gen_shapes_seg(spec, rng);
  AutoencoderConfig cfg;
  cfg.steps = 600;
  RngStream init(19);
  PairedAutoencoder ae(PairGeometry{1, 4, 8, 8}, cfg, init);
  const auto rep = train_autoencoders(ae, d.samples, rng);
  EXPECT_GT(rep.mask_pixel_accuracy, 0.8);
  EXPECT_LT(rep.mask_curve.back(), rep.mask_curve.front());
  const auto dir = scratch("ae");
  ae.save(dir);
  const auto back = PairedAutoencoder::load(dir);
  const auto lat = ae.encode_pair(d.samples[0]);
  const auto a = ae.decode_pair(lat), b = back.decode_pair(back.encode_pair(d.samples[0]));
  EXPECT_EQ(a.mask, b.mask);
  a.validate();
}

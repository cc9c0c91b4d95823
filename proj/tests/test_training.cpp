#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <map>

#include <aidn/synth.hpp>
#include <aidn/training.hpp>

using namespace aidn;

namespace {

Hyper tiny_hyper() { return Hyper{4, 1, 2, 3, 8}; }

std::vector<ImageU8> tiny_dataset(int n, int size, std::uint32_t seed) {
  std::vector<ImageU8> out;
  for (int i = 0; i < n; ++i) out.push_back(synth_texture(size, size, seed + std::uint32_t(i)));
  return out;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

// --- losses -----------------------------------------------------------------

TEST(Losses, GuidanceMse) {
  std::mt19937 rng(1);
  const TensorF a = random_tensor<float>({6, 5, 3}, rng, 0.0, 1.0);
  EXPECT_EQ(guidance_loss(a, a), 0.0);

  TensorF b = a;
  for (auto& v : b.data) v += 0.1f;
  EXPECT_NEAR(guidance_loss(a, b), 0.01, 1e-7);
  EXPECT_GE(guidance_loss(random_tensor<float>({4, 4, 3}, rng), random_tensor<float>({4, 4, 3}, rng)), 0.0);
  EXPECT_THROW(guidance_loss(a, TensorF({5, 5, 3})), ShapeError);
}

TEST(Losses, InvertibilityMae) {
  std::mt19937 rng(2);
  const TensorF a = random_tensor<float>({6, 5, 3}, rng, 0.0, 1.0);
  EXPECT_EQ(invertibility_loss(a, a), 0.0);
  TensorF b = a;
  for (auto& v : b.data) v += 0.1f;
  EXPECT_NEAR(invertibility_loss(a, b), 0.1, 1e-6);
  const TensorF c = random_tensor<float>({6, 5, 3}, rng);
  EXPECT_DOUBLE_EQ(invertibility_loss(a, c), invertibility_loss(c, a));
}

TEST(Losses, TotalComposition) {
  EXPECT_NEAR(total_loss(0.01, 0.1, 1.0), 0.11, 1e-12);
  EXPECT_DOUBLE_EQ(total_loss(0.42, 0.1, 0.0), 0.1);
  EXPECT_DOUBLE_EQ(total_loss(0.0, 0.0, 3.7), 0.0);
}

// --- scale sampling -----------------------------------------------------------

TEST(SampleScale, ProbabilitiesMatchDirectSummation) {
  const auto grid = default_scale_grid();
  ASSERT_EQ(grid.size(), 30u);
  // independent summation of s^2 over the grid
  double total = 0.0;
  for (double s : grid) total += s * s;
  EXPECT_NEAR(total, 217.55, 1e-9);

  const auto p = scale_probabilities(grid);
  EXPECT_NEAR(p.back(), 16.0 / 217.55, 1e-12);   // P(4.0) ~ 0.073546
  EXPECT_NEAR(p.front(), 1.21 / 217.55, 1e-12);  // P(1.1) ~ 0.005562
  double sum = 0.0;
  for (double x : p) sum += x;
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(SampleScale, EmpiricalFrequenciesAndChiSquare) {
  const auto grid = default_scale_grid();
  const auto p = scale_probabilities(grid);
  std::mt19937 rng(4242);
  const int n = 200000;
  std::map<double, int> counts;
  for (double s : grid) counts[s] = 0;
  for (int i = 0; i < n; ++i) counts.at(sample_scale(rng, grid))++;

  double chi2 = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double freq = double(counts.at(grid[i])) / n;
    EXPECT_NEAR(freq, p[i], 0.005) << "s=" << grid[i];
    const double expected = p[i] * n;
    chi2 += (counts.at(grid[i]) - expected) * (counts.at(grid[i]) - expected) / expected;
  }
  // chi-square critical value, 29 dof, significance 0.001
  EXPECT_LT(chi2, 58.3012);
}

TEST(SampleScale, DeterministicUnderSeed) {
  const auto grid = default_scale_grid();
  std::mt19937 a(7), b(7);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_scale(a, grid), sample_scale(b, grid));
}

// --- train step ------------------------------------------------------------------

TEST(TrainStep, DeterministicTrajectories) {
  TrainConfig cfg;
  cfg.steps = 10;
  cfg.batch = 2;
  cfg.patch = 16;
  cfg.scale_grid = {1.5, 2.0};
  cfg.seed = 99;
  cfg.checkpoint_every = 0;
  const auto images = tiny_dataset(4, 24, 5);

  const auto r1 = run_training(images, cfg, tiny_hyper());
  const auto r2 = run_training(images, cfg, tiny_hyper());
  const auto b1 = serialize_checkpoint(r1.model);
  const auto b2 = serialize_checkpoint(r2.model);
  ASSERT_EQ(b1.size(), b2.size());
  EXPECT_TRUE(b1 == b2);
  for (std::size_t i = 0; i < r1.history.size(); ++i)
    EXPECT_EQ(r1.history[i].total, r2.history[i].total);
}

TEST(TrainStep, SingleStepDecreasesLossOnSameBatch) {
  const auto images = tiny_dataset(6, 24, 11);
  int improved = 0;
  for (std::uint32_t seed = 0; seed < 10; ++seed) {
    TrainConfig cfg;
    cfg.lr = 1e-4;
    cfg.patch = 16;
    cfg.scale_grid = {2.0};
    std::mt19937 rng(seed + 1);
    ModelState<float> model = init_random<float>(tiny_hyper(), rng);
    // generic state: every path active (at exact zero init the quantizer's
    // lattice flips are the only effect the encoder update has on L_I)
    visit_params(model, [&rng](const std::string&, TensorF& t) {
      for (auto& v : t.data) v += float(rand_uniform(rng, -0.05, 0.05));
    });
    OptimState opt = make_optim_state(model);
    std::vector<TensorF> batch;
    for (int b = 0; b < 4; ++b)
      batch.push_back(extract_patches(images[size_t(b)], 16, 1, rng, false)[0]);
    const auto first = train_step(batch, 2.0, model, opt, cfg);
    const auto second = train_step(batch, 2.0, model, opt, cfg);
    if (second.total < first.total) ++improved;
  }
  EXPECT_GE(improved, 8);
}

TEST(TrainStep, ZeroLambdaMakesGuidanceGradientInert) {
  // identical updates for wildly different guidance targets when lambda = 0
  std::mt19937 rng(31);
  ModelState<float> m = init_random<float>(tiny_hyper(), rng);
  visit_params(m, [&rng](const std::string&, TensorF& t) {
    for (auto& v : t.data) v += float(rand_uniform(rng, -0.05, 0.05));
  });
  const TensorF hr = random_tensor<float>({16, 16, 3}, rng, 0.1, 0.9);

  auto grads_with_target = [&](float target_fill, double* lg_out) {
    Tape<float> tape;
    TapeEngine<float> eng(tape, m);
    const Var hrv = tape.leaf(hr);
    auto enc = encode_full(eng, hrv, 16, 16, 2.0, m, QuantizerConfig{0.5}, QuantMode::Hard);
    const TensorF ref = TensorF::full({enc.dims.out_h, enc.dims.out_w, 3}, target_fill);
    const Var lg = ag::mse_to_const(tape, enc.pre_quant, ref);
    const Var dec = decode_full(eng, enc.lr, enc.dims.out_h, enc.dims.out_w, enc.spec, m);
    const Var li = ag::mae_to_const(tape, dec, hr);
    const Var total = ag::weighted_sum(tape, 0.0f, lg, li);
    tape.backward(total);
    *lg_out = tape.val(lg)[0];
    std::vector<TensorF> gs;
    for (const Var v : eng.ordered) gs.push_back(tape.grad(v));
    return gs;
  };

  double lg_a = 0, lg_b = 0;
  const auto ga = grads_with_target(0.0f, &lg_a);
  const auto gb = grads_with_target(0.9f, &lg_b);
  EXPECT_NE(lg_a, lg_b);  // the loss is still reported
  for (std::size_t i = 0; i < ga.size(); ++i)
    for (std::size_t j = 0; j < ga[i].size(); ++j) ASSERT_EQ(ga[i][j], gb[i][j]);
}

TEST(TrainStep, NonFiniteLossAborts) {
  ModelState<float> m = ModelState<float>::zeros(tiny_hyper());
  for (auto& v : m.encoder.extractor.head_w.data) v = 1e30f;
  for (auto& v : m.encoder.tail_w.data) v = 1e30f;
  OptimState opt = make_optim_state(m);
  TrainConfig cfg;
  cfg.patch = 16;
  std::mt19937 rng(1);
  std::vector<TensorF> batch{random_tensor<float>({16, 16, 3}, rng, 0.0, 1.0)};
  EXPECT_THROW(train_step(batch, 2.0, m, opt, cfg), TrainingDiverged);
}

TEST(Training, MovingAverageOfLossDecreases) {
  TrainConfig cfg;
  cfg.steps = 300;
  cfg.batch = 4;
  cfg.patch = 24;
  cfg.scale_grid = {1.5, 2.0, 2.5, 3.0};
  cfg.lr = 3e-4;
  cfg.seed = 7;
  cfg.checkpoint_every = 0;
  const auto images = tiny_dataset(16, 24, 21);
  const auto result = run_training(images, cfg, Hyper{8, 1, 4, 3, 16});

  auto moving_avg = [&](int end_step) {
    double acc = 0.0;
    for (int i = end_step - 50; i < end_step; ++i) acc += result.history[size_t(i)].total;
    return acc / 50.0;
  };
  EXPECT_LT(moving_avg(300), moving_avg(50 + 50));
}

// --- checkpointing ----------------------------------------------------------------

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937 rng(41);
  ModelState<float> m = init_random<float>(tiny_hyper(), rng);
  visit_params(m, [&rng](const std::string&, TensorF& t) {
    for (auto& v : t.data) v = float(rand_uniform(rng, -2.0, 2.0));
  });
  OptimState opt = make_optim_state(m);
  opt.step = 123;
  for (auto& t : opt.m)
    for (auto& v : t.data) v = float(rand_uniform(rng, -1.0, 1.0));

  const std::string path = temp_path("aidn_ckpt_test.aidn");
  save_checkpoint(path, m, &opt);
  const auto loaded = load_checkpoint(path);

  EXPECT_TRUE(loaded.model.hyper == m.hyper);
  const auto a = serialize_checkpoint(m, &opt);
  const auto b = serialize_checkpoint(loaded.model, &*loaded.opt);
  EXPECT_TRUE(a == b);
  ASSERT_TRUE(loaded.opt.has_value());
  EXPECT_EQ(loaded.opt->step, 123);
  std::filesystem::remove(path);
}

TEST(Checkpoint, SerializationIsByteStable) {
  std::mt19937 rng(42);
  const ModelState<float> m = init_random<float>(tiny_hyper(), rng);
  EXPECT_TRUE(serialize_checkpoint(m) == serialize_checkpoint(m));
}

TEST(Checkpoint, HeaderLayout) {
  const ModelState<float> m = ModelState<float>::zeros(tiny_hyper());
  const auto bytes = serialize_checkpoint(m);
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(bytes[0], 'A');
  EXPECT_EQ(bytes[1], 'I');
  EXPECT_EQ(bytes[2], 'D');
  EXPECT_EQ(bytes[3], 'N');
  EXPECT_EQ(bytes[4], 1u);  // version, little-endian u32
  EXPECT_EQ(bytes[5], 0u);
}

TEST(Checkpoint, CorruptPayloadByteFailsChecksum) {
  std::mt19937 rng(43);
  const ModelState<float> m = init_random<float>(tiny_hyper(), rng);
  auto bytes = serialize_checkpoint(m);
  bytes[bytes.size() / 2] ^= 0x40;
  EXPECT_THROW(parse_checkpoint(bytes), ChecksumError);
}

TEST(Checkpoint, UnknownVersionRejected) {
  const ModelState<float> m = ModelState<float>::zeros(tiny_hyper());
  auto bytes = serialize_checkpoint(m);
  bytes[4] = 9;  // bump version; CRC no longer matters, version is checked first
  EXPECT_THROW(parse_checkpoint(bytes), VersionError);
}

TEST(Checkpoint, BadMagicRejected) {
  std::vector<std::uint8_t> bytes{'N', 'O', 'P', 'E', 1, 0, 0, 0};
  EXPECT_THROW(parse_checkpoint(bytes), BadMagicError);
}

TEST(Checkpoint, TruncationDetected) {
  const ModelState<float> m = ModelState<float>::zeros(tiny_hyper());
  auto bytes = serialize_checkpoint(m);
  bytes.resize(bytes.size() / 2);
  EXPECT_THROW(parse_checkpoint(bytes), CheckpointError);
}

// --- config file --------------------------------------------------------------------

TEST(Config, ParsesKeysAndComments) {
  const std::string text =
      "# training setup\n"
      "lambda = 0.5\n"
      "patch=32\n"
      "batch = 4   # inline comment\n"
      "steps = 100\n"
      "lr = 2e-4\n"
      "scale_grid = 1.5, 2.0, 3.0\n"
      "channels = 8\n"
      "augment = off\n"
      "\n"
      "seed = 42\n";
  const auto cfg = parse_config_text(text);
  EXPECT_DOUBLE_EQ(cfg.train.lambda, 0.5);
  EXPECT_EQ(cfg.train.patch, 32);
  EXPECT_EQ(cfg.train.batch, 4);
  EXPECT_EQ(cfg.train.steps, 100);
  EXPECT_DOUBLE_EQ(cfg.train.lr, 2e-4);
  ASSERT_EQ(cfg.train.scale_grid.size(), 3u);
  EXPECT_DOUBLE_EQ(cfg.train.scale_grid[1], 2.0);
  EXPECT_EQ(cfg.hyper.channels, 8);
  EXPECT_FALSE(cfg.train.augment);
  EXPECT_EQ(cfg.train.seed, 42u);
}

TEST(Config, UnknownKeyRejected) {
  EXPECT_THROW(parse_config_text("velocity = 9\n"), ConfigError);
}

TEST(Config, BadValuesRejected) {
  EXPECT_THROW(parse_config_text("lr = fast\n"), ConfigError);
  EXPECT_THROW(parse_config_text("patch 32\n"), ConfigError);
  EXPECT_THROW(parse_config_text("lambda = -1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("scale_grid = 0.5, 2.0\n"), ConfigError);  // outside (1, 4]
}

#include <gtest/gtest.h>

#include <map>

#include <aidn/model.hpp>
#include <aidn/selftest.hpp>

#include "support/oracles.hpp"

using namespace aidn;

// --- soft round -----------------------------------------------------------------

TEST(SoftRound, FixedPointsAtIntegers) {
  for (int n = -3; n <= 3; ++n) EXPECT_NEAR(soft_round(double(n), 0.5), double(n), 1e-12);
}

TEST(SoftRound, SpecValue) {
  EXPECT_NEAR(soft_round(0.25, 0.5), 0.1704225285, 1e-7);
}

TEST(SoftRound, DerivativeSpecValues) {
  EXPECT_NEAR(soft_round_derivative(0.0, 0.5), 0.5, 1e-12);
  EXPECT_NEAR(soft_round_derivative(0.5, 0.5), 1.5, 1e-12);
}

// --- quantizer ---------------------------------------------------------------------

TEST(Quantize, HalfRoundsAwayFromZero) {
  const TensorF x({1}, {0.5f});
  const TensorF q = quantize(x, 0.5);
  EXPECT_FLOAT_EQ(q[0], 128.0f / 255.0f);
}

TEST(Quantize, IdempotentOnLattice) {
  TensorF x({256});
  for (int i = 0; i < 256; ++i) x[size_t(i)] = float(i) / 255.0f;
  const TensorF q = quantize(x, 0.5);
  for (int i = 0; i < 256; ++i) EXPECT_EQ(q[size_t(i)], x[size_t(i)]) << i;
}

TEST(Quantize, ClampsOutOfRange) {
  const TensorF x({2}, {-0.3f, 1.7f});
  const TensorF q = quantize(x, 0.5);
  EXPECT_EQ(q[0], 0.0f);
  EXPECT_EQ(q[1], 1.0f);
}

TEST(Quantize, SurrogateGradientAtLatticePoints) {
  // cos(2 pi n) = 1, so the gate passes alpha-scaled slope 1 - alpha
  const TensorF x({3}, {0.0f, 128.0f / 255.0f, 1.0f});
  TensorF gx({3});
  const TensorF gout({3}, {1.0f, 1.0f, 1.0f});
  quantize_backward(x, 0.5, gout, gx);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(gx[size_t(i)], 0.5f, 1e-4f);
}

TEST(Quantize, SurrogateGradientZeroOutsideRange) {
  const TensorF x({2}, {-0.2f, 1.2f});
  TensorF gx({2});
  quantize_backward(x, 0.5, TensorF({2}, {1.0f, 1.0f}), gx);
  EXPECT_EQ(gx[0], 0.0f);
  EXPECT_EQ(gx[1], 0.0f);
}

TEST(Quantize, SoftModeMatchesSoftRound) {
  const TensorF x({1}, {0.3f});
  const TensorF q = quantize(x, 0.5, QuantMode::Soft);
  EXPECT_NEAR(q[0], soft_round(255.0 * 0.3, 0.5) / 255.0, 1e-7);
}

// --- lr dims --------------------------------------------------------------------------

TEST(LrDims, SpecExamples) {
  const auto a = lr_dims(96, 96, 2.0);
  EXPECT_EQ(a.out_h, 48);
  EXPECT_EQ(a.out_w, 48);
  EXPECT_DOUBLE_EQ(a.rate_x, 0.5);
  EXPECT_DOUBLE_EQ(a.rate_y, 0.5);

  const auto b = lr_dims(100, 100, 1.6);
  EXPECT_EQ(b.out_h, 62);  // floor of 62.5
  EXPECT_EQ(b.out_w, 62);
  EXPECT_DOUBLE_EQ(b.rate_x, 0.62);

  const auto c = lr_dims(1920, 1080, 1.2);
  EXPECT_EQ(c.out_h, 1600);  // meets the 1600 px platform cap
  EXPECT_EQ(c.out_w, 900);
}

TEST(LrDims, ErrorsOnBadInput) {
  EXPECT_THROW(lr_dims(96, 96, 1.0), Error);   // scale must exceed 1
  EXPECT_THROW(lr_dims(96, 96, 4.5), Error);   // beyond supported range
  EXPECT_THROW(lr_dims(6, 96, 2.0), Error);    // input too small
  EXPECT_THROW(lr_dims(12, 12, 4.0), Error);   // degenerate 3 px output
}

// --- feature extractor ------------------------------------------------------------------

namespace {

Hyper tiny_hyper() { return Hyper{4, 2, 4, 3, 8}; }

// straight-loop reference for one modulated residual block chain
TensorD naive_extract(const TensorF& img, double s, const ExtractorParams<float>& p) {
  TensorD h = oracle::conv2d(img, p.head_w, p.head_b);
  const int C = p.head_w.shape[3];
  for (const auto& b : p.blocks) {
    TensorF hf(h.shape);
    for (std::size_t i = 0; i < h.size(); ++i) hf[i] = float(h[i]);
    TensorD a = oracle::conv2d(hf, b.conv1_w, b.conv1_b);
    for (auto& v : a.data) v = std::max(0.0, v);
    TensorF af(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) af[i] = float(a[i]);
    const TensorD c2 = oracle::conv2d(af, b.conv2_w, b.conv2_b);
    std::vector<double> gb(size_t(2 * C));
    for (int i = 0; i < 2 * C; ++i)
      gb[size_t(i)] = double(b.mod_b[size_t(i)]) + double(b.mod_w.at(i, 0)) * s;
    for (int y = 0; y < h.shape[0]; ++y)
      for (int x = 0; x < h.shape[1]; ++x)
        for (int c = 0; c < C; ++c)
          h.at(y, x, c) += gb[size_t(c)] * c2.at(y, x, c) + gb[size_t(C + c)];
  }
  return h;
}

}  // namespace

TEST(ExtractFeatures, ZeroParamsGiveZeroFeatures) {
  const auto m = ModelState<float>::zeros(tiny_hyper());
  std::mt19937 rng(20);
  const TensorF img = random_tensor<float>({8, 8, 3}, rng, 0.0, 1.0);
  PureEngine<float> eng;
  const TensorF f = extract_features(eng, img, 2.0, m.encoder.extractor);
  EXPECT_EQ(f.shape, (Shape{8, 8, 4}));
  for (float v : f.data) EXPECT_EQ(v, 0.0f);
}

TEST(ExtractFeatures, ScaleAwareness) {
  std::mt19937 rng(21);
  const auto m = init_random<float>(tiny_hyper(), rng);
  ModelState<float> m2 = m;
  // give the modulation some random scale response
  for (auto& b : m2.encoder.extractor.blocks)
    for (auto& v : b.mod_w.data) v = float(rand_uniform(rng, -0.3, 0.3));
  const TensorF img = random_tensor<float>({8, 8, 3}, rng, 0.0, 1.0);
  PureEngine<float> eng;
  const TensorF fa = extract_features(eng, img, 1.5, m2.encoder.extractor);
  const TensorF fb = extract_features(eng, img, 3.5, m2.encoder.extractor);
  float max_diff = 0.0f;
  for (std::size_t i = 0; i < fa.size(); ++i) max_diff = std::max(max_diff, std::abs(fa[i] - fb[i]));
  EXPECT_GT(max_diff, 0.0f);
}

TEST(ExtractFeatures, MatchesNaiveOracle) {
  std::mt19937 rng(22);
  auto m = init_random<float>(tiny_hyper(), rng);
  for (auto& b : m.encoder.extractor.blocks) {
    for (auto& v : b.mod_w.data) v = float(rand_uniform(rng, -0.2, 0.2));
    for (auto& v : b.conv1_b.data) v = float(rand_uniform(rng, -0.1, 0.1));
    for (auto& v : b.conv2_b.data) v = float(rand_uniform(rng, -0.1, 0.1));
  }
  const TensorF img = random_tensor<float>({8, 8, 3}, rng, 0.0, 1.0);
  PureEngine<float> eng;
  const TensorF got = extract_features(eng, img, 2.5, m.encoder.extractor);
  const TensorD want = naive_extract(img, 2.5, m.encoder.extractor);
  for (std::size_t i = 0; i < got.size(); ++i)
    EXPECT_NEAR(got[i], want[i], 1e-5 * std::max(1.0, std::abs(want[i])));
}

// --- encode / decode ---------------------------------------------------------------------

TEST(Encode, ZeroInitEqualsQuantizedBicubic) {
  const auto m = ModelState<float>::zeros(tiny_hyper());
  std::mt19937 rng(23);
  const TensorF hr = random_tensor<float>({24, 20, 3}, rng, 0.0, 1.0);
  const auto enc = encode(hr, 2.0, m);
  const TensorF want = quantize(bicubic_resize(hr, 12, 10), 0.5, QuantMode::Hard);
  ASSERT_EQ(enc.lr.shape, want.shape);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_EQ(enc.lr[i], want[i]);
  EXPECT_EQ(enc.spec.orig_w, 20);
  EXPECT_EQ(enc.spec.orig_h, 24);
  EXPECT_DOUBLE_EQ(enc.spec.nominal_s, 2.0);
}

TEST(Encode, OutputOnEightBitLattice) {
  std::mt19937 rng(24);
  const auto m = init_random<float>(tiny_hyper(), rng);
  const TensorF hr = random_tensor<float>({16, 16, 3}, rng, 0.0, 1.0);
  const auto enc = encode(hr, 1.7, m);
  for (float v : enc.lr.data) {
    const float scaled = v * 255.0f;
    EXPECT_NEAR(scaled, std::round(scaled), 1e-4f);
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Encode, DimsFollowLrDims) {
  std::mt19937 rng(25);
  const auto m = ModelState<float>::zeros(tiny_hyper());
  for (int i = 0; i < 20; ++i) {
    const int H = 16 + rand_index(rng, 48);
    const int W = 16 + rand_index(rng, 48);
    const double s = rand_uniform(rng, 1.05, 4.0);
    const auto d = lr_dims(H, W, s);
    const TensorF hr = random_tensor<float>({H, W, 3}, rng, 0.0, 1.0);
    const auto enc = encode(hr, s, m);
    ASSERT_EQ(enc.lr.shape, (Shape{d.out_h, d.out_w, 3}));
  }
}

TEST(Decode, ZeroInitEqualsBicubicUpscale) {
  const auto m = ModelState<float>::zeros(tiny_hyper());
  std::mt19937 rng(26);
  const TensorF lr = quantize(random_tensor<float>({10, 12, 3}, rng, 0.0, 1.0), 0.5);
  const ScaleSpec spec{2.0, 25, 21, 1};
  const TensorF out = decode(lr, spec, m);
  const TensorF want = bicubic_resize(lr, 21, 25);
  ASSERT_EQ(out.shape, want.shape);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_EQ(out[i], want[i]);
}

TEST(Decode, ShapeContractAcrossScaleGrid) {
  const auto m = ModelState<float>::zeros(Hyper{4, 1, 2, 3, 8});
  std::mt19937 rng(27);
  for (int k = 11; k <= 40; ++k) {
    const double s = k / 10.0;
    const int H = 32 + rand_index(rng, 169);
    const int W = 32 + rand_index(rng, 169);
    const TensorF hr = random_tensor<float>({H, W, 3}, rng, 0.0, 1.0);
    const auto enc = encode(hr, s, m);
    const TensorF rec = decode(enc.lr, enc.spec, m);
    ASSERT_EQ(rec.shape, hr.shape) << "s=" << s << " H=" << H << " W=" << W;
  }
}

TEST(Decode, ErrorsOnMissingOrInvalidSpec) {
  const auto m = ModelState<float>::zeros(tiny_hyper());
  const TensorF lr({10, 10, 3});
  EXPECT_THROW(decode(lr, ScaleSpec{0.5, 20, 20, 1}, m), Error);  // scale out of range
  EXPECT_THROW(decode(lr, ScaleSpec{2.0, 5, 20, 1}, m), Error);   // orig smaller than LR
}

TEST(Model, ZeroInitRoundTripMatchesBicubicBaseline) {
  const auto m = ModelState<float>::zeros(tiny_hyper());
  std::mt19937 rng(28);
  for (double s : {1.6, 2.0, 3.5}) {
    const TensorF hr = random_tensor<float>({40, 40, 3}, rng, 0.0, 1.0);
    const auto enc = encode(hr, s, m);
    const TensorF rec = clamp01(decode(enc.lr, enc.spec, m));

    const auto d = lr_dims(40, 40, s);
    const TensorF lr_ref = quantize(bicubic_resize(hr, d.out_h, d.out_w), 0.5);
    const TensorF up_ref = clamp01(bicubic_resize(lr_ref, 40, 40));
    const double got = oracle::psnr(rec, hr);
    const double want = oracle::psnr(up_ref, hr);
    EXPECT_NEAR(got, want, 1e-6) << "s=" << s;
  }
}

TEST(Model, EndToEndGradientsNonZeroForEveryParameterGroup) {
  Hyper hyper{4, 1, 2, 3, 8};
  std::mt19937 rng(29);
  ModelState<float> m = init_random<float>(hyper, rng);
  visit_params(m, [&rng](const std::string&, TensorF& t) {
    for (auto& v : t.data) v += float(rand_uniform(rng, -0.05, 0.05));
  });
  const TensorF hr = random_tensor<float>({16, 16, 3}, rng, 0.1, 0.9);

  Tape<float> tape;
  TapeEngine<float> eng(tape, m);
  const Var hrv = tape.leaf(hr);
  auto enc = encode_full(eng, hrv, 16, 16, 2.0, m, QuantizerConfig{0.5}, QuantMode::Soft);
  const TensorF ref = bicubic_resize(hr, enc.dims.out_h, enc.dims.out_w);
  const Var lg = ag::mse_to_const(tape, enc.pre_quant, ref);
  const Var dec = decode_full(eng, enc.lr, enc.dims.out_h, enc.dims.out_w, enc.spec, m);
  const Var li = ag::mae_to_const(tape, dec, hr);
  const Var total = ag::weighted_sum(tape, 1.0f, lg, li);
  tape.backward(total);

  std::vector<std::string> names;
  visit_params(m, [&names](const std::string& n, TensorF&) { names.push_back(n); });
  auto group_of = [](const std::string& n) {
    const auto dot = n.find('.');
    const std::string side = n.substr(0, dot);
    if (n.find(".extractor.") != std::string::npos) return side + ".extractor";
    if (n.find(".crm.") != std::string::npos) return side + ".crm";
    return side + ".tail";
  };
  std::map<std::string, double> group_norm;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const TensorF& g = tape.grad(eng.ordered[i]);
    double norm = 0.0;
    for (float v : g.data) norm += double(v) * v;
    group_norm[group_of(names[i])] += norm;
  }
  ASSERT_EQ(group_norm.size(), 6u);
  for (const auto& [group, norm] : group_norm) EXPECT_GT(norm, 0.0) << group;
}

TEST(Model, EndToEndGradcheck) {
  const auto rep = aidn::detail::check_end_to_end(1e-4, 1e-2);
  EXPECT_TRUE(rep.pass) << rep.str();
}

TEST(Model, CliGradcheckSuitePasses) {
  for (const auto& r : gradcheck_suite()) EXPECT_TRUE(r.report.pass) << r.name << ": " << r.report.str();
}

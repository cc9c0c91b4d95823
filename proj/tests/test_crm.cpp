#include <gtest/gtest.h>

#include <cmath>

#include <aidn/crm.hpp>
#include <aidn/selftest.hpp>

using namespace aidn;

namespace {

// Fully independent per-pixel reference of the conditional resample, written
// straight from the definition in double precision: own projection, own
// bilinear lookup, own FC/softmax/tanh loops.
double ref_bilinear(const TensorF& f, double x, double y, int c) {
  const int H = f.shape[0], W = f.shape[1];
  const double xc = std::clamp(x, 0.0, double(W - 1));
  const double yc = std::clamp(y, 0.0, double(H - 1));
  const int x0 = std::min(int(std::floor(xc)), W - 2 < 0 ? 0 : W - 2);
  const int y0 = std::min(int(std::floor(yc)), H - 2 < 0 ? 0 : H - 2);
  const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
  const double fx = xc - x0, fy = yc - y0;
  return (1 - fy) * ((1 - fx) * f.at(y0, x0, c) + fx * f.at(y0, x1, c)) +
         fy * ((1 - fx) * f.at(y1, x0, c) + fx * f.at(y1, x1, c));
}

TensorD naive_crm_resample(const TensorF& F, double s, double rate_x, double rate_y, int outH,
                           int outW, const CrmParams<float>& p) {
  const int C = F.shape[2], hidden = p.hidden(), nE = p.n_experts(), k = p.kernel_size();
  const int r = k / 2;
  TensorD out({outH, outW, C});
  for (int oy = 0; oy < outH; ++oy) {
    const double uy = (oy + 0.5) / rate_y;
    const double iy = uy - 0.5;
    const double ry = iy - std::floor(uy);
    for (int ox = 0; ox < outW; ++ox) {
      const double ux = (ox + 0.5) / rate_x;
      const double ix = ux - 0.5;
      const double rx = ix - std::floor(ux);

      std::vector<double> v(static_cast<size_t>(C) + 3);
      v[0] = s;
      v[1] = rx;
      v[2] = ry;
      for (int c = 0; c < C; ++c) v[size_t(3 + c)] = ref_bilinear(F, ix, iy, c);

      std::vector<double> h1(static_cast<size_t>(hidden)), h2(static_cast<size_t>(hidden));
      for (int i = 0; i < hidden; ++i) {
        double acc = p.fc1_b[size_t(i)];
        for (int j = 0; j < C + 3; ++j) acc += double(p.fc1_w.at(i, j)) * v[size_t(j)];
        h1[size_t(i)] = std::max(0.0, acc);
      }
      for (int i = 0; i < hidden; ++i) {
        double acc = p.fc2_b[size_t(i)];
        for (int j = 0; j < hidden; ++j) acc += double(p.fc2_w.at(i, j)) * h1[size_t(j)];
        h2[size_t(i)] = std::max(0.0, acc);
      }
      double off[2];
      for (int i = 0; i < 2; ++i) {
        double acc = p.offset_b[size_t(i)];
        for (int j = 0; j < hidden; ++j) acc += double(p.offset_w.at(i, j)) * h2[size_t(j)];
        off[i] = std::tanh(acc);
      }
      std::vector<double> rout(static_cast<size_t>(nE));
      double mx = -1e300;
      for (int i = 0; i < nE; ++i) {
        double acc = p.routing_b[size_t(i)];
        for (int j = 0; j < hidden; ++j) acc += double(p.routing_w.at(i, j)) * h2[size_t(j)];
        rout[size_t(i)] = acc;
        mx = std::max(mx, acc);
      }
      double norm = 0;
      for (double& x : rout) {
        x = std::exp(x - mx);
        norm += x;
      }
      for (double& x : rout) x /= norm;

      for (int c = 0; c < C; ++c) {
        double acc = ref_bilinear(F, ix + off[0], iy + off[1], c);
        for (int tu = 0; tu < k; ++tu)
          for (int tv = 0; tv < k; ++tv) {
            double kern = 0;
            for (int e = 0; e < nE; ++e)
              kern += rout[size_t(e)] *
                      double(p.experts.data[((size_t(e) * k + tu) * k + tv) * C + c]);
            acc += kern * ref_bilinear(F, ix + off[0] + (tv - r), iy + off[1] + (tu - r), c);
          }
        out.at(oy, ox, c) = acc;
      }
    }
  }
  return out;
}

CrmParams<float> random_params(int C, int hidden, int nE, int k, std::mt19937& rng) {
  CrmParams<float> p = CrmParams<float>::zeros(C, hidden, nE, k);
  for (TensorF* t : {&p.fc1_w, &p.fc1_b, &p.fc2_w, &p.fc2_b, &p.offset_w, &p.offset_b,
                     &p.routing_w, &p.routing_b, &p.experts})
    for (auto& v : t->data) v = float(rand_uniform(rng, -0.5, 0.5));
  return p;
}

}  // namespace

// --- coordinate projection -----------------------------------------------------

TEST(ProjectCoordinate, SpecValues) {
  EXPECT_NEAR(project_coordinate(0, 2.0), -0.25, 1e-12);
  for (int k = 0; k < 7; ++k) EXPECT_NEAR(project_coordinate(k, 1.0), double(k), 1e-12);
  EXPECT_NEAR(project_coordinate(3, 1.5), 1.8333333333, 1e-9);
}

TEST(RelativeOffset, SpecValues) {
  EXPECT_NEAR(relative_offset(0, 2.0), -0.25, 1e-12);
  for (int k = 0; k < 7; ++k) EXPECT_NEAR(relative_offset(k, 1.0), 0.0, 1e-12);
  EXPECT_NEAR(relative_offset(3, 1.5), -1.0 / 6.0, 1e-12);
}

TEST(RelativeOffset, AlwaysInHalfOpenUnitIntervalAroundZero) {
  std::mt19937 rng(100);
  for (int i = 0; i < 100000; ++i) {
    const int sigma = rand_index(rng, 1 << 20);
    const double rate = rand_uniform(rng, 1e-3, 10.0);
    const double r = relative_offset(sigma, rate);
    ASSERT_GE(r, -0.5);
    ASSERT_LT(r, 0.5);
  }
}

// --- conditioning ----------------------------------------------------------------

TEST(CrmCondition, ZeroInitGivesZeroOffsetUniformWeights) {
  const auto p = CrmParams<float>::zeros(8, 64, 8, 3);
  std::mt19937 rng(5);
  const TensorF center = random_tensor<float>({8}, rng);
  const auto out = crm_condition(2.5f, 0.1f, -0.3f, center, p);
  EXPECT_EQ(out.delta[0], 0.0f);
  EXPECT_EQ(out.delta[1], 0.0f);
  for (int i = 0; i < 8; ++i) EXPECT_FLOAT_EQ(out.weights[size_t(i)], 1.0f / 8.0f);
}

TEST(CrmCondition, RangeContract) {
  std::mt19937 rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const auto p = random_params(6, 32, 8, 3, rng);
    const TensorF center = random_tensor<float>({6}, rng, -2.0, 2.0);
    const auto out = crm_condition(float(rand_uniform(rng, 1.0, 4.0)),
                                   float(rand_uniform(rng, -0.5, 0.5)),
                                   float(rand_uniform(rng, -0.5, 0.5)), center, p);
    float sum = 0.0f;
    for (std::size_t i = 0; i < out.weights.size(); ++i) {
      EXPECT_GE(out.weights[i], 0.0f);
      sum += out.weights[i];
    }
    EXPECT_NEAR(sum, 1.0f, 1e-6f);
    EXPECT_LT(std::abs(out.delta[0]), 1.0f);
    EXPECT_LT(std::abs(out.delta[1]), 1.0f);
  }
}

TEST(CrmCondition, Deterministic) {
  std::mt19937 rng(7);
  const auto p = random_params(4, 16, 8, 3, rng);
  const TensorF center = random_tensor<float>({4}, rng);
  const auto a = crm_condition(1.7f, 0.2f, 0.2f, center, p);
  const auto b = crm_condition(1.7f, 0.2f, 0.2f, center, p);
  EXPECT_EQ(a.delta[0], b.delta[0]);
  EXPECT_EQ(a.delta[1], b.delta[1]);
  for (std::size_t i = 0; i < a.weights.size(); ++i) EXPECT_EQ(a.weights[i], b.weights[i]);
}

// --- expert mixing ------------------------------------------------------------------

TEST(MixExperts, OneHotSelectsExpert) {
  std::mt19937 rng(8);
  const TensorF experts = random_tensor<float>({4, 3, 3, 2}, rng);
  TensorF w({4});
  w[2] = 1.0f;
  const TensorF k = mix_experts(w, experts);
  for (int u = 0; u < 3; ++u)
    for (int v = 0; v < 3; ++v)
      for (int c = 0; c < 2; ++c)
        EXPECT_EQ(k.at(u, v, c), experts.data[((size_t(2) * 3 + u) * 3 + v) * 2 + c]);
}

TEST(MixExperts, ZeroWeightsGiveZeroKernel) {
  std::mt19937 rng(9);
  const TensorF experts = random_tensor<float>({4, 3, 3, 2}, rng);
  const TensorF k = mix_experts(TensorF({4}), experts);
  for (float v : k.data) EXPECT_EQ(v, 0.0f);
}

TEST(MixExperts, ConvexCombinationOfEqualExperts) {
  std::mt19937 rng(10);
  TensorF experts({3, 3, 3, 2});
  const TensorF e0 = random_tensor<float>({3, 3, 2}, rng);
  for (int e = 0; e < 3; ++e)
    for (std::size_t j = 0; j < e0.size(); ++j) experts.data[size_t(e) * e0.size() + j] = e0[j];
  const TensorF w({3}, {0.2f, 0.5f, 0.3f});
  const TensorF k = mix_experts(w, experts);
  for (std::size_t j = 0; j < e0.size(); ++j) EXPECT_NEAR(k[j], e0[j], 1e-6f);
}

TEST(MixExperts, DimMismatchThrows) {
  EXPECT_THROW(mix_experts(TensorF({3}), TensorF({4, 3, 3, 2})), ShapeError);
}

// --- full resample -------------------------------------------------------------------

TEST(CrmResample, ZeroInitReducesToBilinearResize) {
  std::mt19937 rng(11);
  const TensorF F = random_tensor<float>({7, 5, 3}, rng);
  const auto p = CrmParams<float>::zeros(3, 16, 8, 3);
  const int outH = 11, outW = 8;
  const ResampleRate rate{2.0, double(outW) / 5, double(outH) / 7, ResampleDirection::Upscale};
  const TensorF out = crm_resample(F, rate, outH, outW, p);
  for (int oy = 0; oy < outH; ++oy)
    for (int ox = 0; ox < outW; ++ox)
      for (int c = 0; c < 3; ++c) {
        const double want = ref_bilinear(F, project_coordinate(ox, rate.rate_x),
                                         project_coordinate(oy, rate.rate_y), c);
        EXPECT_NEAR(out.at(oy, ox, c), want, 1e-6);
      }
}

TEST(CrmResample, UnitRateZeroInitIsIdentity) {
  std::mt19937 rng(12);
  const TensorF F = random_tensor<float>({6, 6, 4}, rng);
  const auto p = CrmParams<float>::zeros(4, 16, 8, 3);
  const ResampleRate rate{1.5, 1.0, 1.0, ResampleDirection::Upscale};
  const TensorF out = crm_resample(F, rate, 6, 6, p);
  for (std::size_t i = 0; i < F.size(); ++i) EXPECT_NEAR(out[i], F[i], 1e-6f);
}

TEST(CrmResample, MatchesNaivePerPixelOracle) {
  std::mt19937 rng(13);
  const TensorF F = random_tensor<float>({6, 6, 4}, rng);
  const auto p = random_params(4, 16, 8, 3, rng);
  const int outH = 10, outW = 10;  // x1.7, rounded up via exact rates
  const ResampleRate rate{1.7, double(outW) / 6, double(outH) / 6, ResampleDirection::Upscale};
  const TensorF out = crm_resample(F, rate, outH, outW, p);
  const TensorD want = naive_crm_resample(F, 1.7, rate.rate_x, rate.rate_y, outH, outW, p);
  for (std::size_t i = 0; i < out.size(); ++i)
    EXPECT_NEAR(out[i], want[i], 1e-5 * std::max(1.0, std::abs(want[i]))) << "i=" << i;
}

TEST(CrmResample, DownscaleMatchesOracleToo) {
  std::mt19937 rng(14);
  const TensorF F = random_tensor<float>({9, 8, 2}, rng);
  const auto p = random_params(2, 8, 4, 3, rng);
  const ResampleRate rate{2.3, 3.0 / 8.0, 4.0 / 9.0, ResampleDirection::Downscale};
  const TensorF out = crm_resample(F, rate, 4, 3, p);
  const TensorD want = naive_crm_resample(F, 2.3, rate.rate_x, rate.rate_y, 4, 3, p);
  for (std::size_t i = 0; i < out.size(); ++i)
    EXPECT_NEAR(out[i], want[i], 1e-5 * std::max(1.0, std::abs(want[i])));
}

TEST(CrmResample, OutputShapeExactForRandomRates) {
  std::mt19937 rng(15);
  const auto p = random_params(2, 4, 2, 3, rng);
  for (int i = 0; i < 1000; ++i) {
    const int H = 4 + rand_index(rng, 12);
    const int W = 4 + rand_index(rng, 12);
    const double rx = rand_uniform(rng, 0.26, 4.0);
    const double ry = rand_uniform(rng, 0.26, 4.0);
    const int outH = std::max(1, int(std::floor(H * ry)));
    const int outW = std::max(1, int(std::floor(W * rx)));
    const TensorF F = random_tensor<float>({H, W, 2}, rng);
    const ResampleRate rate{2.0, double(outW) / W, double(outH) / H,
                            rx < 1 ? ResampleDirection::Downscale : ResampleDirection::Upscale};
    const TensorF out = crm_resample(F, rate, outH, outW, p);
    ASSERT_EQ(out.shape, (Shape{outH, outW, 2}));
    ASSERT_TRUE(out.all_finite());
  }
}

TEST(CrmResample, RejectsBadArguments) {
  const auto p = CrmParams<float>::zeros(3, 8, 4, 3);
  const TensorF F({4, 4, 3});
  const ResampleRate rate{2.0, 0.5, 0.5, ResampleDirection::Downscale};
  EXPECT_THROW(crm_resample(F, rate, 0, 2, p), ShapeError);
  EXPECT_THROW(crm_resample(TensorF({4, 4, 2}), rate, 2, 2, p), ShapeError);
}

TEST(CrmResample, ContentSensitivityOfRoutingWeights) {
  // structured feature map: weights at a flat location vs an edge location
  // must differ for generic params
  std::mt19937 rng(16);
  const auto p = random_params(4, 32, 8, 3, rng);
  TensorF F({8, 8, 4});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 4; ++c) F.at(y, x, c) = x < 4 ? 0.1f : 0.9f + 0.05f * float(c);

  std::vector<TensorF> weights;
  for (int x = 0; x < 8; ++x) {
    const TensorF center = bilinear_sample(F, double(x), 4.0);
    weights.push_back(crm_condition(2.0f, 0.0f, 0.0f, center, p).weights);
  }
  float max_diff = 0.0f;
  for (std::size_t a = 0; a < weights.size(); ++a)
    for (std::size_t b = a + 1; b < weights.size(); ++b)
      for (int e = 0; e < 8; ++e)
        max_diff = std::max(max_diff, std::abs(weights[a][size_t(e)] - weights[b][size_t(e)]));
  EXPECT_GT(max_diff, 1e-3f);
}

TEST(CrmResample, GradientsPassFiniteDifferenceCheck) {
  const auto rep = aidn::detail::check_crm_resample(1e-4, 1e-3);
  EXPECT_TRUE(rep.pass) << rep.str();
}

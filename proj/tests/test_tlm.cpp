#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "trispace/core.hpp"
#include "trispace/tlm.hpp"
#include "trispace/trajio.hpp"

using namespace trispace;

namespace {

// Adaptive Simpson quadrature in long double. The discretized input
// coefficient equals b * integral of exp(a*s) over [0, delta]; this gives an
// implementation-independent oracle for the closed form.
long double simpson(const std::function<long double(long double)>& f, long double a,
                    long double b) {
  long double c = (a + b) / 2;
  return (b - a) / 6 * (f(a) + 4 * f(c) + f(b));
}

long double adaptive_simpson(const std::function<long double(long double)>& f, long double a,
                             long double b, long double eps, long double whole, int depth) {
  long double c = (a + b) / 2;
  long double left = simpson(f, a, c);
  long double right = simpson(f, c, b);
  if (depth <= 0 || std::abs(left + right - whole) <= 15 * eps)
    return left + right + (left + right - whole) / 15;
  return adaptive_simpson(f, a, c, eps / 2, left, depth - 1) +
         adaptive_simpson(f, c, b, eps / 2, right, depth - 1);
}

long double zoh_input_quadrature(long double a, long double delta) {
  auto f = [a](long double s) { return std::exp(a * s); };
  long double whole = simpson(f, 0.0L, delta);
  // eps scales with the integral so the refinement loop terminates for large
  // |a * delta|, where an absolute target would sit below roundoff
  long double eps = 1e-17L * std::abs(whole) + 1e-300L;
  return adaptive_simpson(f, 0.0L, delta, eps, whole, 40);
}

tlm::SsmParams constant_ssm(double delta, double b_in, double c_out) {
  tlm::SsmParams p;
  p.w_delta = Matrix(1, 1);
  p.b_delta = Matrix(1, 1);
  p.b_delta.at(0, 0) = tlm::softplus_inverse(delta);
  p.w_b = Matrix(1, 1);
  p.b_b = Matrix(1, 1);
  p.b_b.at(0, 0) = b_in;
  p.w_c = Matrix(1, 1);
  p.b_c = Matrix(1, 1);
  p.b_c.at(0, 0) = c_out;
  p.a_diag = {-1.0};
  return p;
}

}  // namespace

TEST(Zoh, HandValue) {
  auto c = tlm::discretize_zoh({-1.0}, {1.0}, std::log(2.0));
  ASSERT_EQ(c.a_bar.size(), 1u);
  EXPECT_NEAR(c.a_bar[0], 0.5, 1e-15);
  EXPECT_NEAR(c.b_bar[0], 0.5, 1e-15);
}

TEST(Zoh, SeriesLimitForTinyDeltaA) {
  double delta = 1e-12;
  auto c = tlm::discretize_zoh({1.0, -2.0}, {2.0, 3.0}, delta);
  EXPECT_NEAR(c.b_bar[0], delta * 2.0, 1e-9 * delta * 2.0);
  EXPECT_NEAR(c.b_bar[1], delta * 3.0, 1e-9 * delta * 3.0);
}

TEST(Zoh, MatchesQuadratureOracle) {
  auto rng = make_rng(99, "zoh-oracle");
  std::uniform_real_distribution<double> ua(-5.0, 5.0);
  std::uniform_real_distribution<double> ud(1e-6, 2.0);
  std::uniform_real_distribution<double> ub(-3.0, 3.0);
  for (int i = 0; i < 1000; ++i) {
    double a = ua(rng);
    if (std::abs(a) < 1e-3) a = a < 0 ? -1e-3 : 1e-3;
    double delta = ud(rng);
    double b = ub(rng);
    auto c = tlm::discretize_zoh({a}, {b}, delta);
    long double oracle = static_cast<long double>(b) * zoh_input_quadrature(a, delta);
    double denom = std::max(std::abs(static_cast<double>(oracle)), 1e-300);
    EXPECT_NEAR(c.b_bar[0] / denom, static_cast<double>(oracle) / denom, 1e-12)
        << "a=" << a << " delta=" << delta << " b=" << b;
    EXPECT_NEAR(c.a_bar[0], std::exp(delta * a), 1e-12 * std::exp(delta * a));
  }
}

TEST(Zoh, DoubleDeltaVariantScalesByDelta) {
  auto rng = make_rng(100, "zoh-ddelta");
  std::uniform_real_distribution<double> ua(-4.0, -0.1);
  std::uniform_real_distribution<double> ud(0.01, 1.5);
  for (int i = 0; i < 200; ++i) {
    double a = ua(rng), delta = ud(rng);
    auto std_c = tlm::discretize_zoh({a}, {1.0}, delta, tlm::ZohVariant::kStandard);
    auto dd_c = tlm::discretize_zoh({a}, {1.0}, delta, tlm::ZohVariant::kDoubleDelta);
    EXPECT_NEAR(dd_c.b_bar[0], delta * std_c.b_bar[0], 1e-14);
    EXPECT_DOUBLE_EQ(dd_c.a_bar[0], std_c.a_bar[0]);
  }
}

TEST(Zoh, RejectsBadInputs) {
  EXPECT_THROW(tlm::discretize_zoh({-1.0}, {1.0}, 0.0), UsageError);
  EXPECT_THROW(tlm::discretize_zoh({-1.0}, {1.0}, -0.5), UsageError);
  EXPECT_THROW(tlm::discretize_zoh({0.0}, {1.0}, 0.5), UsageError);
  EXPECT_THROW(tlm::discretize_zoh({-1.0, -2.0}, {1.0}, 0.5), UsageError);
}

TEST(Zoh, VariantStringsRoundTrip) {
  EXPECT_EQ(tlm::zoh_variant_from_string(tlm::to_string(tlm::ZohVariant::kStandard)),
            tlm::ZohVariant::kStandard);
  EXPECT_EQ(tlm::zoh_variant_from_string(tlm::to_string(tlm::ZohVariant::kDoubleDelta)),
            tlm::ZohVariant::kDoubleDelta);
  EXPECT_THROW(tlm::zoh_variant_from_string("nope"), UsageError);
}

TEST(Scan, HandValueWithConstantCoefficients) {
  // a = -1, delta = ln 2 makes a_bar = 0.5 and the input factor 0.5; with
  // B = C = 1 the recurrence halves the state and adds half the input.
  auto p = constant_ssm(std::log(2.0), 1.0, 1.0);
  Matrix x(2, 1);
  x.at(0, 0) = 1.0;
  x.at(1, 0) = 1.0;
  auto y = tlm::ssm_scan(x, p, {1, 1}, tlm::ZohVariant::kStandard);
  EXPECT_NEAR(y.at(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(y.at(1, 0), 0.75, 1e-15);
}

TEST(Scan, MaskedStepsEmitInputAndFreezeState) {
  auto p = constant_ssm(std::log(2.0), 1.0, 1.0);
  Matrix with_gap(3, 1);
  with_gap.at(0, 0) = 1.0;
  with_gap.at(1, 0) = 42.0;  // padding content must not leak into the state
  with_gap.at(2, 0) = 1.0;
  auto y_gap = tlm::ssm_scan(with_gap, p, {1, 0, 1}, tlm::ZohVariant::kStandard);

  Matrix dense(2, 1);
  dense.at(0, 0) = 1.0;
  dense.at(1, 0) = 1.0;
  auto y_dense = tlm::ssm_scan(dense, p, {1, 1}, tlm::ZohVariant::kStandard);

  EXPECT_DOUBLE_EQ(y_gap.at(1, 0), 42.0);          // pass-through
  EXPECT_DOUBLE_EQ(y_gap.at(0, 0), y_dense.at(0, 0));
  EXPECT_DOUBLE_EQ(y_gap.at(2, 0), y_dense.at(1, 0));
}

TEST(Scan, NonFiniteInputThrows) {
  auto p = constant_ssm(0.5, 1.0, 1.0);
  Matrix x(1, 1);
  x.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(tlm::ssm_scan(x, p, {1}, tlm::ZohVariant::kStandard), ComputeError);
}

TEST(Init, DeterministicPerSeed) {
  tlm::TlmConfig cfg;
  cfg.hidden = 8;
  cfg.n_state = 4;
  cfg.blocks = 1;
  auto a = tlm::init_params(cfg, 5);
  auto b = tlm::init_params(cfg, 5);
  auto c = tlm::init_params(cfg, 6);
  bool same = true, diff = false;
  tlm::for_each_tensor(a, [&](const std::string& name, const Matrix& m) {
    Matrix* mb = nullptr;
    tlm::for_each_tensor(b, [&](const std::string& n2, Matrix& m2) {
      if (n2 == name) mb = &m2;
    });
    ASSERT_NE(mb, nullptr);
    if (m.a != mb->a) same = false;
  });
  tlm::for_each_tensor(a, [&](const std::string& name, const Matrix& m) {
    Matrix* mc = nullptr;
    tlm::for_each_tensor(c, [&](const std::string& n2, Matrix& m2) {
      if (n2 == name) mc = &m2;
    });
    if (m.a != mc->a) diff = true;
  });
  EXPECT_TRUE(same);
  EXPECT_TRUE(diff);
}

TEST(Init, FixedStateMatrixAndDeltaBias) {
  tlm::TlmConfig cfg;
  cfg.hidden = 4;
  cfg.n_state = 3;
  cfg.blocks = 2;
  auto p = tlm::init_params(cfg, 1);
  for (const auto& blk : p.blocks) {
    ASSERT_EQ(blk.ssm.a_diag.size(), 3u);
    EXPECT_DOUBLE_EQ(blk.ssm.a_diag[0], -1.0);
    EXPECT_DOUBLE_EQ(blk.ssm.a_diag[1], -2.0);
    EXPECT_DOUBLE_EQ(blk.ssm.a_diag[2], -3.0);
    // zero scan input gives delta = softplus(b_delta) = 0.1
    for (std::size_t j = 0; j < cfg.hidden; ++j)
      EXPECT_NEAR(tlm::softplus(blk.ssm.b_delta.at(0, j)), 0.1, 1e-12);
  }
  // head starts as identity
  for (std::size_t r = 0; r < p.w_head.rows; ++r)
    for (std::size_t c = 0; c < p.w_head.cols; ++c)
      EXPECT_DOUBLE_EQ(p.w_head.at(r, c), r == c ? 1.0 : 0.0);
}

TEST(Forward, ZeroOutProjMakesEncoderIdentity) {
  tlm::TlmConfig cfg;
  cfg.hidden = 8;
  cfg.n_state = 4;
  cfg.blocks = 2;
  auto p = tlm::init_params(cfg, 3);
  for (auto& blk : p.blocks) {
    blk.w_out.a.assign(blk.w_out.a.size(), 0.0);
    blk.b_out.a.assign(blk.b_out.a.size(), 0.0);
  }

  Matrix x(5, trajio::kNumFeatures);
  auto rng = make_rng(8, "fwd-test");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : x.a) v = u(rng);
  std::vector<std::uint8_t> mask(5, 1);
  auto y = tlm::forward_one(p, x, mask);
  ASSERT_EQ(y.rows, x.rows);
  ASSERT_EQ(y.cols, x.cols);
  for (std::size_t i = 0; i < x.a.size(); ++i) EXPECT_NEAR(y.a[i], x.a[i], 1e-12);
}

TEST(Forward, DefaultInitDiffersFromInputAndStaysFinite) {
  tlm::TlmConfig cfg;
  cfg.hidden = 8;
  cfg.n_state = 4;
  cfg.blocks = 1;
  auto p = tlm::init_params(cfg, 3);
  Matrix x(6, trajio::kNumFeatures);
  auto rng = make_rng(9, "fwd-test2");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : x.a) v = u(rng);
  std::vector<std::uint8_t> mask(6, 1);
  auto y = tlm::forward_one(p, x, mask);
  EXPECT_TRUE(all_finite(y.a));
  double dist = 0.0;
  for (std::size_t i = 0; i < x.a.size(); ++i) dist += std::abs(y.a[i] - x.a[i]);
  EXPECT_GT(dist, 1e-6);  // out_proj starts small but not zero
}

TEST(Encode, ShapesAndMaskHandling) {
  tlm::TlmConfig cfg;
  cfg.hidden = 8;
  cfg.n_state = 4;
  cfg.blocks = 1;
  auto p = tlm::init_params(cfg, 4);

  trajio::Trajectory a;
  a.id = "a";
  for (int i = 0; i < 4; ++i)
    a.points.push_back({double(i * 10), 113.0 + 0.01 * i, 22.0, 30.0, 90.0, 0});
  trajio::Trajectory b = a;
  b.id = "b";
  b.points.resize(2);

  auto norm = trajio::fit_normalizer({a, b});
  auto tensor = trajio::pad_and_mask({a, b}, norm, 4);
  auto emb = tlm::encode(p, tensor);
  EXPECT_EQ(emb.n, 2u);
  EXPECT_EQ(emb.steps, 4u);
  EXPECT_EQ(emb.channels, trajio::kNumFeatures);
  EXPECT_TRUE(all_finite(emb.a));
}

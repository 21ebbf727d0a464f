#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oscid/afp.hpp"
#include "oscid/errors.hpp"
#include "oscid/km_estimator.hpp"
#include "support.hpp"

using namespace oscid;
using namespace oscid::testing;

namespace {

double trapezoid(const ConditionalDensity& cd) {
  double s = 0.0;
  for (std::size_t k = 0; k + 1 < cd.a_centers.size(); ++k) {
    s += 0.5 * (cd.a_centers[k + 1] - cd.a_centers[k]) * (cd.mass[k] + cd.mass[k + 1]);
  }
  return s;
}

SampleGrid lag_grid(const std::vector<double>& amplitudes, double dt, std::size_t first, std::size_t count,
                    std::size_t stride) {
  SampleGrid g;
  g.amplitudes = amplitudes;
  for (std::size_t j = 0; j < count; ++j) g.taus.push_back(dt * static_cast<double>(first + j * stride));
  return g;
}

}  // namespace

TEST(ConditionalDensity, ConstantEnvelopePersists) {
  const auto env = envelope_of(std::vector<double>(500, 2.0), 0.01);
  const auto cd = conditional_density(env, 2.0, 0.1, 8, 0.2);
  EXPECT_EQ(cd.pair_count, 490u);
  double total = 0.0;
  for (std::size_t k = 0; k < cd.mass.size(); ++k) {
    total += cd.mass[k];
    if (cd.mass[k] > 0.0) {
      EXPECT_NEAR(cd.a_centers[k], 2.0, 0.1);
    }
  }
  EXPECT_GT(total, 0.0);
  EXPECT_NEAR(trapezoid(cd), 1.0, 1e-9);
  EXPECT_NEAR(cd.moment(1), 0.0, 1e-12);
}

TEST(ConditionalDensity, NormalizedWheneverPopulated) {
  const auto env = envelope_of(ou_series(50000, 0.01, 3.0, 0.5, 1.0, 8), 0.01, 50);
  for (double a : {2.0, 2.7, 3.0, 3.9}) {
    for (double tau : {0.01, 0.3, 2.0}) {
      const auto cd = conditional_density(env, a, tau, 200, 0.05);
      ASSERT_GT(cd.pair_count, 0u);
      EXPECT_NEAR(trapezoid(cd), 1.0, 1e-9);
      for (double m : cd.mass) EXPECT_GE(m, 0.0);
    }
  }
}

TEST(ConditionalDensity, EmptyBinHasNoMass) {
  const auto env = envelope_of(ou_series(5000, 0.01, 3.0, 0.1, 1.0, 8), 0.01);
  const auto cd = conditional_density(env, 10.0, 0.1, 50, 0.05);
  EXPECT_EQ(cd.pair_count, 0u);
  for (double m : cd.mass) EXPECT_EQ(m, 0.0);
}

TEST(ConditionalDensity, OrnsteinUhlenbeckConditionalMean) {
  // Block means give an honest standard error for the overlapping pairs.
  const double mu = 3.0, sigma = 0.5, lambda = 1.0, dt = 0.01, tau = 0.5, a_i = 3.5, h = 0.05;
  const std::size_t blocks = 20, per_block = 200000;
  const auto a = ou_series(blocks * per_block, dt, mu, sigma, lambda, 21);
  std::vector<double> err(blocks);
  for (std::size_t b = 0; b < blocks; ++b) {
    std::vector<double> part(a.begin() + static_cast<std::ptrdiff_t>(b * per_block),
                             a.begin() + static_cast<std::ptrdiff_t>((b + 1) * per_block));
    // Oracle: E[a(t+tau) | a(t)] averaged over the a(t) that fall in the bin.
    const auto lag = static_cast<std::size_t>(std::llround(tau / dt));
    double src = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k + lag < part.size(); ++k) {
      if (std::abs(part[k] - a_i) <= 0.5 * h) {
        src += part[k];
        ++n;
      }
    }
    const double oracle = mu + (src / static_cast<double>(n) - mu) * std::exp(-lambda * tau);
    const auto cd = conditional_density(envelope_of(part, dt), a_i, tau, 1000, h);
    err[b] = (a_i + cd.moment(1)) - oracle;
  }
  const double mean = std::accumulate(err.begin(), err.end(), 0.0) / blocks;
  double var = 0.0;
  for (double e : err) var += (e - mean) * (e - mean);
  const double se = std::sqrt(var / (blocks - 1) / blocks);
  EXPECT_LT(std::abs(mean), 2.0 * se + 1e-4) << "mean error " << mean << " se " << se;
}

TEST(FiniteTimeKm, ConstantEnvelopeHasNoDriftOrSpread) {
  const auto env = envelope_of(std::vector<double>(1000, 2.0), 0.01);
  const SampleGrid grid{{1.9, 2.0}, {0.05, 0.1, 0.2}};
  const auto km = finite_time_km(env, grid);
  for (Eigen::Index j = 0; j < 3; ++j) {
    EXPECT_TRUE(km.missing(0, j));
    EXPECT_TRUE(std::isnan(km.d1_hat(0, j)));
    EXPECT_EQ(km.weights(0, j), 0.0);
    ASSERT_FALSE(km.missing(1, j));
    EXPECT_EQ(km.d1_hat(1, j), 0.0);
    EXPECT_EQ(km.d2_hat(1, j), 0.0);
    EXPECT_EQ(km.weights(1, j), 1.0);
  }
}

TEST(FiniteTimeKm, TooMuchMissingDataIsAnError) {
  const auto env = envelope_of(std::vector<double>(1000, 2.0), 0.01);
  const SampleGrid grid{{1.8, 1.9, 2.0}, {0.05, 0.1}};
  EXPECT_THROW(finite_time_km(env, grid), InsufficientDataError);
}

class AmplitudeSdeKm : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const auto a = amplitude_sde(kTheta, kTwoPi, 20000.0, 0.01, 10, 77);
    env_ = new EnvelopeSeries(envelope_of(a, 0.01));
    const auto amps = select_amplitude_grid(*env_, 50);
    km_ = new KmEstimates(finite_time_km(*env_, lag_grid(amps, 0.01, 5, 10, 5)));
  }
  static void TearDownTestSuite() {
    delete env_;
    delete km_;
  }
  static constexpr Theta kTheta{0.1, -0.1, 0.1};
  static inline EnvelopeSeries* env_ = nullptr;
  static inline KmEstimates* km_ = nullptr;
};

TEST_F(AmplitudeSdeKm, DiffusionAtSmallestLag) {
  const double d2 = kTheta.d / (2.0 * kTwoPi * kTwoPi);
  EXPECT_NEAR(d2, 1.2665e-3, 1e-7);
  // Conditioning on a bin of width h spreads the source point uniformly,
  // adding h^2 / 12 to the second moment.
  const double h = km_->grid.bin_width();
  const double tau = km_->grid.taus[0];
  const double expected = d2 + h * h / (24.0 * tau);
  const auto& w = km_->weights;
  const double median_weight = 1.0 / static_cast<double>(km_->grid.n_a());
  int checked = 0;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    if (w(i, 0) < median_weight) continue;
    EXPECT_NEAR(km_->d2_hat(i, 0), expected, 0.15 * d2) << "a=" << km_->grid.amplitudes[static_cast<std::size_t>(i)];
    ++checked;
  }
  EXPECT_GE(checked, 10);
}

TEST_F(AmplitudeSdeKm, DriftAtSmallestLag) {
  double num = 0.0, den = 0.0, lo = INFINITY, hi = -INFINITY;
  for (Eigen::Index i = 0; i < km_->weights.rows(); ++i) {
    const double a = km_->grid.amplitudes[static_cast<std::size_t>(i)];
    const double d1 = model_coeffs({kTheta, kTwoPi}, a).d1;
    lo = std::min(lo, d1);
    hi = std::max(hi, d1);
    if (km_->missing(i, 0)) continue;
    const double w = km_->weights(i, 0);
    num += w * std::pow(km_->d1_hat(i, 0) - d1, 2);
    den += w;
  }
  EXPECT_LE(std::sqrt(num / den), 0.15 * (hi - lo));
}

TEST_F(AmplitudeSdeKm, WeightsSumToOnePerLagAndMissingIsNaN) {
  for (Eigen::Index j = 0; j < km_->weights.cols(); ++j) {
    EXPECT_NEAR(km_->weights.col(j).sum(), 1.0, 1e-12);
    for (Eigen::Index i = 0; i < km_->weights.rows(); ++i) {
      if (km_->missing(i, j)) {
        EXPECT_TRUE(std::isnan(km_->d1_hat(i, j)));
        EXPECT_TRUE(std::isnan(km_->d2_hat(i, j)));
        EXPECT_EQ(km_->weights(i, j), 0.0);
      } else {
        EXPECT_TRUE(std::isfinite(km_->d1_hat(i, j)));
        EXPECT_TRUE(std::isfinite(km_->d2_hat(i, j)));
        EXPECT_GE(km_->weights(i, j), 0.0);
      }
    }
  }
  EXPECT_NO_THROW(validate(*km_));
}

TEST_F(AmplitudeSdeKm, AmplitudeScalingCovariance) {
  const double c = 2.0;
  EnvelopeSeries scaled = *env_;
  for (auto& a : scaled.amplitudes) a *= c;
  SampleGrid grid = km_->grid;
  for (auto& a : grid.amplitudes) a *= c;
  const auto km2 = finite_time_km(scaled, grid);
  for (Eigen::Index i = 0; i < km2.d1_hat.rows(); ++i) {
    for (Eigen::Index j = 0; j < km2.d1_hat.cols(); ++j) {
      if (km_->missing(i, j)) continue;
      EXPECT_NEAR(km2.d1_hat(i, j), c * km_->d1_hat(i, j), 1e-12 * (1.0 + std::abs(km_->d1_hat(i, j))));
      EXPECT_NEAR(km2.d2_hat(i, j), c * c * km_->d2_hat(i, j), 1e-12 * (1.0 + km_->d2_hat(i, j)));
    }
  }
}

TEST(FiniteTimeKm, DoublingRecordShrinksStandardError) {
  const Theta th{0.1, -0.1, 0.1};
  const SampleGrid grid{{1.8, 1.9, 2.0, 2.1, 2.2}, {0.1, 0.2}};
  auto spread = [&](double t_max) {
    std::vector<double> v;
    for (std::uint64_t s = 0; s < 48; ++s) {
      const auto env = envelope_of(amplitude_sde(th, kTwoPi, t_max, 0.01, 5, 100 + s), 0.01);
      v.push_back(finite_time_km(env, grid).d2_hat(2, 0));
    }
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s2 = 0.0;
    for (double x : v) s2 += (x - m) * (x - m);
    return std::sqrt(s2 / static_cast<double>(v.size() - 1));
  };
  const double ratio = spread(1000.0) / spread(2000.0);
  EXPECT_GT(ratio, 1.0);
  EXPECT_LT(ratio, 2.2);
  EXPECT_NEAR(ratio, std::sqrt(2.0), 0.6);
}

TEST(KmEstimates, ValidateRejectsInconsistentShapes) {
  KmEstimates km;
  km.grid = SampleGrid{{1.0, 2.0}, {0.1, 0.2}};
  km.d1_hat = Eigen::MatrixXd::Zero(2, 2);
  km.d2_hat = Eigen::MatrixXd::Zero(2, 3);
  km.weights = Eigen::MatrixXd::Constant(2, 2, 0.5);
  km.pair_counts = CountMatrix::Ones(2, 2);
  EXPECT_THROW(validate(km), DataError);
  km.d2_hat = Eigen::MatrixXd::Zero(2, 2);
  EXPECT_NO_THROW(validate(km));
  km.pair_counts(0, 0) = 0;
  EXPECT_THROW(validate(km), DataError);  // missing entry with nonzero weight
}

#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <random>

#include <Eigen/QR>

#include "oscid/errors.hpp"
#include "oscid/ident.hpp"
#include "oscid/pipeline.hpp"
#include "support.hpp"

using namespace oscid;
using oscid::testing::kTwoPi;

namespace {

Eigen::Vector3d vec(const Theta& t) { return {t.epsilon, t.alpha, t.d}; }

// KmEstimates equal to the model coefficients at theta, uniform weights.
KmEstimates synthetic_km(const Theta& theta, const SampleGrid& grid, const PdeConfig& cfg) {
  const auto m = model_finite_time_km({theta, kTwoPi}, grid, cfg);
  KmEstimates km;
  km.grid = grid;
  km.d1_hat = m.d1;
  km.d2_hat = m.d2;
  const auto na = static_cast<Eigen::Index>(grid.n_a());
  const auto nt = static_cast<Eigen::Index>(grid.n_tau());
  km.weights = Eigen::MatrixXd::Constant(na, nt, 1.0 / static_cast<double>(na));
  km.pair_counts = CountMatrix::Constant(na, nt, 100);
  return km;
}

const SampleGrid kSmallGrid{{0.8, 1.2, 1.6, 2.0, 2.4, 2.8}, {0.5, 1.0, 2.0, 4.0}};
constexpr Theta kStar{0.1, -0.1, 0.1};

// Affine residual M theta - y with unit weights.
struct Affine {
  Eigen::MatrixXd m;
  Eigen::VectorXd y;
  std::shared_ptr<std::atomic<std::size_t>> calls = std::make_shared<std::atomic<std::size_t>>(0);

  Residual operator()(const Theta& t) const {
    ++*calls;
    Residual r;
    r.entries = m * vec(t) - y;
    r.weights = Eigen::VectorXd::Ones(y.size());
    return r;
  }
};

Affine random_affine(Eigen::Index rows, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Affine f;
  f.m.resize(rows, 3);
  f.y.resize(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < 3; ++c) f.m(r, c) = n01(rng);
    f.y[r] = n01(rng);
  }
  return f;
}

}  // namespace

TEST(Residual, SelfConsistentAtGeneratingTheta) {
  const PdeConfig cfg;
  const auto km = synthetic_km(kStar, kSmallGrid, cfg);
  const auto r = residual(kStar, kTwoPi, km, cfg);
  ASSERT_EQ(r.entries.size(), 2 * 6 * 4);
  EXPECT_EQ(r.entries.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Residual, PerturbedEntryShiftsOnlyThatPosition) {
  const PdeConfig cfg;
  auto km = synthetic_km(kStar, kSmallGrid, cfg);
  const double delta = 1e-3;
  km.d2_hat(3, 1) += delta;
  const auto r = residual(kStar, kTwoPi, km, cfg);
  const Eigen::Index pos = 6 * 4 + 3 * 4 + 1;  // (n=2, i=3, j=1)
  for (Eigen::Index k = 0; k < r.entries.size(); ++k) {
    if (k == pos) {
      EXPECT_NEAR(r.entries[k], delta, 1e-15);
    } else {
      EXPECT_EQ(r.entries[k], 0.0) << k;
    }
  }
}

TEST(Residual, MissingEntriesAreZeroWithZeroWeight) {
  const PdeConfig cfg;
  auto km = synthetic_km(kStar, kSmallGrid, cfg);
  km.pair_counts(0, 2) = 0;
  km.d1_hat(0, 2) = km.d2_hat(0, 2) = NAN;
  km.weights(0, 2) = 0.0;
  km.weights.col(2) /= km.weights.col(2).sum();
  const auto r = residual({0.05, -0.1, 0.1}, kTwoPi, km, cfg);
  for (const Eigen::Index pos : {Eigen::Index{2}, Eigen::Index{24 + 2}}) {
    EXPECT_EQ(r.entries[pos], 0.0);
    EXPECT_EQ(r.weights[pos], 0.0);
  }
  EXPECT_TRUE(r.entries.allFinite());
}

TEST(Residual, EachCallCountsOnce) {
  const PdeConfig cfg;
  const ResidualEvaluator eval(synthetic_km(kStar, kSmallGrid, cfg), kTwoPi, cfg);
  EXPECT_EQ(eval.count(), 0u);
  const auto r1 = eval(kStar);
  const auto r2 = eval.function()({0.05, -0.1, 0.1});
  EXPECT_EQ(eval.count(), 2u);
  EXPECT_EQ(r1.token, 1u);
  EXPECT_EQ(r2.token, 2u);
  EvalCounter c{0};
  residual(kStar, kTwoPi, eval.km(), cfg, &c);
  EXPECT_EQ(c.load(), 1u);
}

TEST(Cost, ClosedForms) {
  Residual r;
  r.entries = Eigen::VectorXd::Zero(8);
  r.weights = Eigen::VectorXd::Ones(8);
  EXPECT_EQ(cost(r, 2, 2), 0.0);
  r.entries.setOnes();
  EXPECT_DOUBLE_EQ(cost(r, 2, 2), 1.0);
  EXPECT_DOUBLE_EQ(cost(r), 1.0);
  r.entries << 1, 2, 3, 4, 0, 0, 0, 0;
  r.weights << 1, 1, 0.5, 0, 1, 1, 1, 1;
  EXPECT_DOUBLE_EQ(cost(r, 2, 2), 9.5 / 8.0);
  const double base = cost(r, 2, 2);
  r.weights *= 3.0;
  EXPECT_DOUBLE_EQ(cost(r, 2, 2), 3.0 * base);
}

TEST(FdJacobian, StepRule) {
  const auto s0 = fd_steps({0.0, 0.0, 0.0});
  for (double s : s0) EXPECT_EQ(s, 1e-5);
  const auto s1 = fd_steps({0.1, -0.2, 5e-5});
  EXPECT_DOUBLE_EQ(s1[0], 0.01);
  EXPECT_DOUBLE_EQ(s1[1], 0.02);
  EXPECT_EQ(s1[2], 1e-5);
}

TEST(FdJacobian, ExactOnAffineMaps) {
  const auto f = random_affine(20, 3);
  const Theta th{0.3, -0.7, 0.2};
  const auto rho = f(th);
  *f.calls = 0;
  const auto jac = fd_jacobian(th, rho, f);
  EXPECT_EQ(f.calls->load(), 3u);
  EXPECT_LT((jac - f.m).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(FdJacobian, FailureNamesTheCoordinate) {
  const auto f = random_affine(5, 4);
  const Theta th{0.3, -0.7, 0.2};
  const ResidualFn fn = [&](const Theta& t) {
    if (t.alpha != th.alpha) throw StiffnessError(t, 0.5, "synthetic stiffness");
    return f(t);
  };
  try {
    fd_jacobian(th, f(th), fn);
    FAIL() << "expected a Jacobian error";
  } catch (const JacobianError& e) {
    EXPECT_EQ(e.coordinate(), 1);
    EXPECT_NE(std::string(e.what()).find("alpha"), std::string::npos) << e.what();
    EXPECT_EQ(e.exit_code(), ExitCode::kNumerical);
  }
}

TEST(StopCheck, Cases) {
  const LmState zero{{0, 0, 0}, 1.0, 0.0, 0, 0, 0};
  EXPECT_TRUE(stop_check(zero, zero));
  LmState far = zero;
  far.theta = {1.0, 0.0, 0.0};
  EXPECT_FALSE(stop_check(zero, far));
  LmState near = zero;
  near.theta = {5e-5, 0.0, 0.0};
  near.cost = 5e-5;
  EXPECT_TRUE(stop_check(zero, near));
  near.cost = 2e-4;
  EXPECT_FALSE(stop_check(zero, near));
}

TEST(LmSolve, StationaryStart) {
  const PdeConfig cfg;
  const auto km = synthetic_km(kStar, kSmallGrid, cfg);
  const auto rep = lm_solve(kStar, kTwoPi, km, cfg);
  EXPECT_TRUE(rep.converged) << rep.message;
  EXPECT_LE(rep.iterations, 2u);
  EXPECT_LT((vec(rep.theta_hat) - vec(kStar)).norm(), 1e-4);
}

TEST(LmSolve, AffineLeastSquaresSolution) {
  const auto f = random_affine(30, 11);
  const Eigen::Vector3d ls = f.m.colPivHouseholderQr().solve(f.y);
  StopCriteria stop;
  stop.theta_tol = 1e-12;
  stop.cost_tol = 1e-14;
  const auto rep = lm_solve({ls[0] + 0.5, ls[1] - 0.4, ls[2] + 0.3}, f, stop);
  EXPECT_TRUE(rep.converged) << rep.message;
  EXPECT_LE(rep.iterations, 25u);
  EXPECT_LT((vec(rep.theta_hat) - ls).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(LmSolve, CostNonincreasingAndAccountingExact) {
  // Nonlinear residual so that damping and backtracking both occur.
  Affine lin = random_affine(12, 5);
  std::atomic<std::size_t> calls{0};
  const ResidualFn fn = [&](const Theta& t) {
    ++calls;
    Residual r;
    const Eigen::Vector3d x = vec(t);
    r.entries = lin.m * x - lin.y;
    for (Eigen::Index k = 0; k < r.entries.size(); ++k) r.entries[k] += 3.0 * std::sin(2.0 * x[k % 3]) * x[(k + 1) % 3];
    r.weights = Eigen::VectorXd::Ones(r.entries.size());
    return r;
  };
  const auto rep = lm_solve({2.0, -1.5, 1.0}, fn);
  ASSERT_GE(rep.trajectory.size(), 2u);
  std::size_t expected = 1;
  for (std::size_t k = 1; k < rep.trajectory.size(); ++k) {
    EXPECT_LE(rep.trajectory[k].cost, rep.trajectory[k - 1].cost);
    EXPECT_GT(rep.trajectory[k].lambda, 0.0);
    expected += 3 + 2 + rep.trajectory[k].backtracks;
    EXPECT_EQ(rep.trajectory[k].residual_evals, expected);
  }
  EXPECT_EQ(rep.residual_evals, calls.load());
  EXPECT_EQ(rep.eval_costs.size(), rep.residual_evals);
  if (rep.message.rfind("stop criteria", 0) == 0) {
    EXPECT_EQ(rep.residual_evals, expected);
  }
}

TEST(LmSolve, RankDeficientJacobianDoesNotCrash) {
  // d does not enter the residual.
  const ResidualFn fn = [](const Theta& t) {
    Residual r;
    r.entries = Eigen::Vector3d(t.epsilon - 1.0, t.alpha + 2.0, t.epsilon + t.alpha);
    r.weights = Eigen::VectorXd::Ones(3);
    return r;
  };
  FitReport rep;
  ASSERT_NO_THROW(rep = lm_solve({0.5, 0.5, 0.5}, fn));
  EXPECT_FALSE(rep.converged);
  EXPECT_NE(rep.message.find("rank"), std::string::npos) << rep.message;
  EXPECT_EQ(rep.residual_evals, 4u);
}

TEST(LmSolve, PersistentFailureIsADivergenceReport) {
  // Only the start and its three difference probes can be evaluated.
  const auto f = random_affine(6, 9);
  const Theta th0{0.5, -0.5, 0.5};
  const auto st = fd_steps(th0);
  const ResidualFn fn = [&](const Theta& t) {
    const bool probe = t == th0 || t == Theta{th0.epsilon + st[0], th0.alpha, th0.d} ||
                       t == Theta{th0.epsilon, th0.alpha + st[1], th0.d} ||
                       t == Theta{th0.epsilon, th0.alpha, th0.d + st[2]};
    if (!probe) throw StiffnessError(t, 1.0, "synthetic stiffness");
    return f(t);
  };
  StopCriteria stop;
  const auto rep = lm_solve(th0, fn, stop);
  EXPECT_FALSE(rep.converged);
  EXPECT_NE(rep.message.find("diverged"), std::string::npos) << rep.message;
  EXPECT_EQ(rep.theta_hat, th0);
  EXPECT_EQ(rep.residual_evals, 1u + 3u + 2u + stop.max_backtracks);
}

TEST(LmSolve, UnevaluableStartThrows) {
  const ResidualFn fn = [](const Theta& t) -> Residual { throw StiffnessError(t, 0.0, "no"); };
  EXPECT_THROW(lm_solve({0.1, -0.1, 0.1}, fn), StiffnessError);
}

TEST(NelderMead, SphereFromOnes) {
  StopCriteria stop;
  stop.theta_tol = 1e-9;
  stop.cost_tol = 1e-14;
  stop.nm_max_iterations = 5000;
  const auto rep = nelder_mead_solve({1.0, 1.0, 1.0}, [](const Theta& t) { return vec(t).squaredNorm(); }, stop);
  EXPECT_TRUE(rep.converged) << rep.message;
  EXPECT_LT(vec(rep.theta_hat).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_EQ(rep.eval_costs.size(), rep.residual_evals);
}

TEST(NelderMead, InfiniteHalfSpaceNeverCrashes) {
  // Minimum of the quadratic lies inside the forbidden region alpha > 0.
  const CostFn fn = [](const Theta& t) {
    if (t.alpha > 0.0) throw StiffnessError(t, 0.1, "forbidden");
    return std::pow(t.epsilon - 0.2, 2) + std::pow(t.alpha - 0.05, 2) + std::pow(t.d - 0.1, 2);
  };
  FitReport rep;
  ASSERT_NO_THROW(rep = nelder_mead_solve({0.1, -1e-4, 0.1}, fn));
  EXPECT_TRUE(std::isfinite(rep.cost_min));
  EXPECT_LE(rep.theta_hat.alpha, 0.0);
  if (rep.converged) {
    EXPECT_NEAR(rep.theta_hat.epsilon, 0.2, 1e-2);
  }
}

TEST(NelderMead, IterationCapMeansNotConverged) {
  StopCriteria stop;
  stop.nm_max_iterations = 5;
  const auto rep = nelder_mead_solve({1.0, 1.0, 1.0}, [](const Theta& t) { return vec(t).squaredNorm(); }, stop);
  EXPECT_FALSE(rep.converged);
  EXPECT_EQ(rep.iterations, 5u);
}

TEST(NelderMead, AllInfiniteCosts) {
  const auto rep = nelder_mead_solve({0.1, -0.1, 0.1}, [](const Theta& t) -> double { throw StiffnessError(t, 0.0, "x"); });
  EXPECT_FALSE(rep.converged);
  EXPECT_TRUE(std::isinf(rep.cost_min));
}

TEST(Optimizers, AgreeOnZeroResidualData) {
  const PdeConfig cfg;
  const auto km = synthetic_km(kStar, kSmallGrid, cfg);
  const Theta th0{0.08, -0.085, 0.115};
  const auto lm = lm_solve(th0, kTwoPi, km, cfg);
  const auto nm = nelder_mead_solve(th0, kTwoPi, km, cfg);
  ASSERT_TRUE(lm.converged) << lm.message;
  ASSERT_TRUE(nm.converged) << nm.message;
  const double e_min = std::min(lm.cost_min, nm.cost_min);
  EXPECT_LT(std::abs(lm.cost_min - nm.cost_min), 1e-3 * (1.0 + e_min));
  EXPECT_LT((vec(lm.theta_hat) - vec(kStar)).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_LT(lm.residual_evals, nm.residual_evals);
}

TEST(Optimizers, BothConvergeFromAZeroResidualStart) {
  const PdeConfig cfg;
  const auto km = synthetic_km(kStar, kSmallGrid, cfg);
  const auto lm = lm_solve(kStar, kTwoPi, km, cfg);
  const auto nm = nelder_mead_solve(kStar, kTwoPi, km, cfg);
  EXPECT_TRUE(lm.converged);
  EXPECT_TRUE(nm.converged);
  EXPECT_LE(lm.residual_evals, 10u);
  EXPECT_EQ(nm.theta_hat, kStar);
  EXPECT_EQ(nm.cost_min, 0.0);
  // The simplex must contract from its 10% spread to the stop tolerance, so
  // its count is not minimal in the same sense; record both.
  RecordProperty("lm_evals", static_cast<int>(lm.residual_evals));
  RecordProperty("nm_evals", static_cast<int>(nm.residual_evals));
}

TEST(Optimizers, SimplexStallsWhereDampedStepsSucceed) {
  // Narrow curved valley with an unevaluable region next to it.
  auto rho = [](const Theta& t) {
    return Eigen::Vector3d(10.0 * (t.alpha - t.epsilon * t.epsilon), 1.0 - t.epsilon, t.d - 0.5);
  };
  const auto guard = [](const Theta& t) {
    if (t.alpha > 1.5) throw StiffnessError(t, 0.2, "stiff region");
  };
  const ResidualFn fn = [&](const Theta& t) {
    guard(t);
    Residual r;
    r.entries = rho(t);
    r.weights = Eigen::VectorXd::Ones(3);
    return r;
  };
  const CostFn cf = [&](const Theta& t) {
    guard(t);
    return rho(t).squaredNorm() / 3.0;
  };
  StopCriteria stop;
  stop.nm_max_iterations = 100;
  const Theta th0{-1.2, 1.0, 0.4};
  const auto lm = lm_solve(th0, fn, stop);
  const auto nm = nelder_mead_solve(th0, cf, stop);
  EXPECT_TRUE(lm.converged) << lm.message;
  EXPECT_LT((vec(lm.theta_hat) - Eigen::Vector3d(1.0, 1.0, 0.5)).norm(), 1e-2);
  EXPECT_FALSE(nm.converged);
}

TEST(Extrapolation, ExactOnExponentialFamily) {
  const Theta th{0.07, -0.12, 0.09};
  KmEstimates km;
  km.grid = {{0.6, 1.0, 1.4, 1.8, 2.2, 2.6}, {0.2, 0.4, 0.8, 1.6}};
  km.d1_hat.resize(6, 4);
  km.d2_hat.resize(6, 4);
  km.weights = Eigen::MatrixXd::Constant(6, 4, 1.0 / 6.0);
  km.pair_counts = CountMatrix::Constant(6, 4, 10);
  for (Eigen::Index i = 0; i < 6; ++i) {
    const auto dd = model_coeffs({th, kTwoPi}, km.grid.amplitudes[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < 4; ++j) {
      const double tau = km.grid.taus[static_cast<std::size_t>(j)];
      km.d1_hat(i, j) = dd.d1 * std::exp(-(0.3 + 0.1 * static_cast<double>(i)) * tau);
      km.d2_hat(i, j) = dd.d2 * std::exp(-0.2 * tau);
    }
  }
  const auto fit = extrapolation_fit(km, kTwoPi);
  EXPECT_EQ(fit.used_bins.size(), 6u);
  EXPECT_NEAR(fit.theta.epsilon, th.epsilon, 1e-10);
  EXPECT_NEAR(fit.theta.alpha, th.alpha, 1e-10);
  EXPECT_NEAR(fit.theta.d, th.d, 1e-12);
}

TEST(Extrapolation, MixedSignBinsAreExcluded) {
  KmEstimates km;
  km.grid = {{1.0, 2.0, 3.0}, {0.1, 0.2, 0.3, 0.4}};
  km.d1_hat.resize(3, 4);
  km.d2_hat = Eigen::MatrixXd::Constant(3, 4, 1e-3);
  km.weights = Eigen::MatrixXd::Constant(3, 4, 1.0 / 3.0);
  km.pair_counts = CountMatrix::Constant(3, 4, 10);
  km.d1_hat.row(0) << 0.1, 0.09, 0.08, 0.07;
  km.d1_hat.row(1) << 0.1, -0.1, 0.1, -0.1;  // two of four: excluded
  km.d1_hat.row(2) << -0.2, -0.18, -0.16, -0.14;
  const auto fit = extrapolation_fit(km, kTwoPi);
  EXPECT_EQ(fit.used_bins, (std::vector<std::size_t>{0, 2}));
  EXPECT_GT(fit.c0_drift[0], 0.0);
  EXPECT_LT(fit.c0_drift[1], 0.0);
}

TEST(Extrapolation, AllMissingIsAnInitializerError) {
  KmEstimates km;
  km.grid = {{1.0, 2.0, 3.0}, {0.1, 0.2}};
  km.d1_hat = Eigen::MatrixXd::Constant(3, 2, NAN);
  km.d2_hat = Eigen::MatrixXd::Constant(3, 2, NAN);
  km.weights = Eigen::MatrixXd::Zero(3, 2);
  km.pair_counts = CountMatrix::Zero(3, 2);
  EXPECT_THROW(extrapolation_guess(km, kTwoPi), InitializerError);
}

TEST(NoiseBalance, CosineIsAnnihilated) {
  const auto ts = oscid::testing::sampled(1000.0, 20.0, [](double t) { return 1.5 * std::cos(kTwoPi * t); });
  const auto r = noise_balance_report(ts, {0.0, 0.0, 0.1}, kTwoPi);
  EXPECT_LT(r.ratio, 1e-3);
  EXPECT_FALSE(r.ratio_infinite);
  EXPECT_NEAR(r.noise_scale, std::sqrt(0.2), 1e-15);
  EXPECT_NEAR(r.amplitude_mean, 1.5, 1e-3);
  EXPECT_LT(r.amplitude_rel_dev, 1e-3);
  EXPECT_EQ(r.lhs.size(), ts.size() - 2);
}

TEST(NoiseBalance, ZeroNoiseGivesInfiniteRatio) {
  const auto ts = oscid::testing::sampled(100.0, 10.0, [](double t) { return std::cos(kTwoPi * t); });
  const auto r = noise_balance_report(ts, {0.1, -0.1, 0.0}, kTwoPi);
  EXPECT_TRUE(r.ratio_infinite);
  EXPECT_TRUE(std::isinf(r.ratio));
}

TEST(NoiseBalance, ShortRecordRejected) {
  const auto ts = oscid::testing::sampled(100.0, 0.1, [](double t) { return std::cos(kTwoPi * t); });
  EXPECT_THROW(noise_balance_report(ts, {0.1, -0.1, 0.1}, kTwoPi), InsufficientDataError);
}

TEST(NoiseBalance, RatioFallsAsTheEnvelopeGrows) {
  // Segments drifting from noise-driven to self-sustained, observed through a
  // sensor with fixed measurement noise.
  const double eps[] = {-0.05, -0.0125, 0.025, 0.0625, 0.1};
  const double d[] = {0.02, 0.04, 0.08, 0.12, 0.16};
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n01;
  std::vector<NoiseBalance> out;
  for (int k = 0; k < 5; ++k) {
    const OscillatorModel m{{eps[k], -0.1, d[k]}, kTwoPi};
    SimConfig sc;
    sc.t_max = 200;
    sc.seed = static_cast<std::uint64_t>(11 + k);
    auto ts = simulate_vdp(m, sc);
    for (auto& v : ts.samples) v += 0.01 * n01(rng);
    out.push_back(noise_balance_report(ts, m.theta, m.omega));
  }
  for (std::size_t k = 1; k < out.size(); ++k) {
    EXPECT_LT(out[k].ratio, out[k - 1].ratio) << k;
    EXPECT_GT(out[k].amplitude_mean, out[k - 1].amplitude_mean) << k;
  }
  EXPECT_LT(out.back().amplitude_rel_dev, 0.5 * out.front().amplitude_rel_dev);
}

// One simulated record at theta*, identified by both optimizers.
class SyntheticIdentification : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    SimConfig sc;
    sc.t_max = 2000;
    sc.seed = 1;
    const auto ts = simulate_vdp({kStar, kTwoPi}, sc);
    AnalysisOptions opts;
    opts.omega = kTwoPi;
    prep_ = new Prepared(prepare(ts, opts));
    lm_ = new FitReport(run_method(Method::kProposed, *prep_, pde_, {}));
    nm_ = new FitReport(run_method(Method::kNelderMead, *prep_, pde_, {}));
  }
  static void TearDownTestSuite() {
    delete prep_;
    delete lm_;
    delete nm_;
  }
  static inline const PdeConfig pde_{};
  static inline Prepared* prep_ = nullptr;
  static inline FitReport* lm_ = nullptr;
  static inline FitReport* nm_ = nullptr;
};

TEST_F(SyntheticIdentification, ExtrapolationHasTheRightSign) {
  ASSERT_FALSE(prep_->fallback) << prep_->init_message;
  EXPECT_GT(prep_->theta0.epsilon, 0.0);
  EXPECT_LE(std::abs(prep_->theta0.epsilon - kStar.epsilon), 0.05);
}

TEST_F(SyntheticIdentification, ProposedRecoversTruth) {
  ASSERT_TRUE(lm_->converged) << lm_->message;
  EXPECT_NEAR(lm_->theta_hat.epsilon, kStar.epsilon, 0.02);
  EXPECT_NEAR(lm_->theta_hat.alpha, kStar.alpha, 0.03);
  EXPECT_NEAR(lm_->theta_hat.d, kStar.d, 0.025);
}

TEST_F(SyntheticIdentification, SimplexFindsTheSameMinimumAtHigherCost) {
  ASSERT_TRUE(nm_->converged) << nm_->message;
  ASSERT_TRUE(lm_->converged) << lm_->message;
  EXPECT_LT((vec(nm_->theta_hat) - vec(lm_->theta_hat)).cwiseAbs().maxCoeff(), 1e-3);
  const double e_min = std::min(lm_->cost_min, nm_->cost_min);
  EXPECT_LT(std::abs(lm_->cost_min - nm_->cost_min), 1e-3 * (1.0 + e_min));
  // The 2x ratio itself is audited across many records by the acceptance suite.
  EXPECT_GT(nm_->residual_evals, lm_->residual_evals);
  RecordProperty("lm_evals", static_cast<int>(lm_->residual_evals));
  RecordProperty("nm_evals", static_cast<int>(nm_->residual_evals));
}

TEST_F(SyntheticIdentification, TruthIsNearlyAsGoodAsTheOptimum) {
  const ResidualEvaluator eval(prep_->km, prep_->omega, pde_);
  const auto at_truth = eval(kStar);
  const auto at_hat = eval(lm_->theta_hat);
  const double e_truth = cost(at_truth), e_hat = cost(at_hat);
  EXPECT_LE(e_truth, 1.1 * e_hat);
  const auto rms = [](const Residual& r) {
    return std::sqrt((r.weights.array() * r.entries.array().square()).sum() / r.weights.sum());
  };
  EXPECT_LE(rms(at_truth), 2.0 * rms(at_hat));
}

TEST_F(SyntheticIdentification, TrajectoryIsMonotone) {
  for (std::size_t k = 1; k < lm_->trajectory.size(); ++k) {
    EXPECT_LE(lm_->trajectory[k].cost, lm_->trajectory[k - 1].cost);
  }
}

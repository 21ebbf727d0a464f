#include <cmath>
#include <limits>
#include <optional>
#include <sstream>

#include <Eigen/Cholesky>
#include <tbb/parallel_invoke.h>

#include "oscid/ident.hpp"

namespace oscid {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Trial {
  std::optional<Residual> res;
  double cost = kInf;
  std::string error;
};

Trial attempt(const ResidualFn& fn, const Theta& theta) {
  Trial t;
  try {
    t.res = fn(theta);
    t.cost = cost(*t.res);
    if (!std::isfinite(t.cost)) t.cost = kInf;
  } catch (const NumericalError& e) {
    t.error = e.what();
  }
  return t;
}

Eigen::Vector3d as_vector(const Theta& t) { return {t.epsilon, t.alpha, t.d}; }
Theta as_theta(const Eigen::Vector3d& v) { return {v[0], v[1], v[2]}; }

// Solves (A + lambda diag(A)) x = g after checking positive definiteness.
std::optional<Eigen::Vector3d> damped_step(const Eigen::Matrix3d& a, const Eigen::Vector3d& g, double lambda) {
  if (!(a.diagonal().array() > 0.0).all()) return std::nullopt;
  Eigen::Matrix3d m = a;
  m.diagonal() *= 1.0 + lambda;
  const Eigen::LLT<Eigen::Matrix3d> llt(m);
  if (llt.info() != Eigen::Success) return std::nullopt;
  Eigen::Vector3d x = llt.solve(g);
  if (!x.allFinite()) return std::nullopt;
  return x;
}

}  // namespace

FitReport lm_solve(const Theta& theta0, const ResidualFn& fn, const StopCriteria& stop) {
  validate(theta0);
  FitReport rep;
  rep.method = "prop";

  Residual rho = fn(theta0);
  double energy = cost(rho);
  if (!std::isfinite(energy)) throw NumericalError("initial residual is not finite");
  std::size_t evals = 1;
  rep.eval_costs.push_back(energy);

  Theta theta = theta0;
  double lambda = 1.0;
  rep.trajectory.push_back({theta, lambda, energy, 0, evals, 0});
  rep.message = "iteration cap reached";

  for (std::size_t k = 0; k < stop.max_iterations; ++k) {
    Eigen::MatrixXd jac;
    try {
      jac = fd_jacobian(theta, rho, fn);
    } catch (const JacobianError& e) {
      evals += 3;
      for (int i = 0; i < 3; ++i) rep.eval_costs.push_back(kInf);
      rep.message = e.what();
      break;
    }
    evals += 3;
    // Perturbed-point costs, for the energy-versus-evaluations record.
    for (int c = 0; c < 3; ++c) {
      const Eigen::VectorXd shifted = rho.entries + jac.col(c) * fd_steps(theta)[static_cast<std::size_t>(c)];
      rep.eval_costs.push_back((rho.weights.array() * shifted.array().square()).sum() /
                               static_cast<double>(shifted.size()));
    }

    const Eigen::MatrixXd wj = rho.weights.asDiagonal() * jac;
    const Eigen::Matrix3d a = jac.transpose() * wj;
    const Eigen::Vector3d g = wj.transpose() * rho.entries;
    const Eigen::Vector3d x = as_vector(theta);

    const auto step0 = damped_step(a, g, lambda);
    const auto step1 = damped_step(a, g, 0.5 * lambda);
    if (!step0 || !step1) {
      rep.message = "normal equations are not positive definite (rank-deficient Jacobian)";
      break;
    }

    Trial t0, t1;
    tbb::parallel_invoke([&] { t0 = attempt(fn, as_theta(x - *step0)); },
                         [&] { t1 = attempt(fn, as_theta(x - *step1)); });
    evals += 2;
    rep.eval_costs.push_back(t0.cost);
    rep.eval_costs.push_back(t1.cost);

    Theta next;
    Trial* chosen = nullptr;
    double next_lambda = lambda;
    std::size_t m_used = 0;
    if (t0.cost > energy && t1.cost > energy) {
      Trial tm;
      bool failed = !t0.error.empty() || !t1.error.empty();
      std::optional<Eigen::Vector3d> smallest;
      for (std::size_t m = 1; m <= stop.max_backtracks; ++m) {
        const double lm = std::ldexp(lambda, static_cast<int>(m));
        const auto step = damped_step(a, g, lm);
        if (!step) break;
        smallest = step;
        tm = attempt(fn, as_theta(x - *step));
        ++evals;
        rep.eval_costs.push_back(tm.cost);
        if (!tm.error.empty()) failed = true;
        if (tm.cost <= energy) {
          next = as_theta(x - *step);
          next_lambda = lm;
          m_used = m;
          break;
        }
      }
      if (m_used == 0) {
        // Every damped step raised the cost. If nothing failed and the
        // smallest step is already below the tolerance, the iterate is
        // stationary to the resolution of the difference gradient.
        std::ostringstream os;
        if (!failed && smallest && smallest->norm() / (1.0 + x.norm()) < stop.theta_tol) {
          rep.converged = true;
          os << "stationary: no descent step after " << stop.max_backtracks << " damping increases";
        } else {
          os << "diverged: no non-increasing step after " << stop.max_backtracks << " damping increases";
          if (!tm.error.empty()) os << " (last failure: " << tm.error << ")";
        }
        rep.message = os.str();
        break;
      }
      rho = std::move(*tm.res);
      energy = tm.cost;
    } else {
      if (t0.cost <= t1.cost) {
        next = as_theta(x - *step0);
        chosen = &t0;
      } else {
        next = as_theta(x - *step1);
        chosen = &t1;
        next_lambda = 0.5 * lambda;
      }
      rho = std::move(*chosen->res);
      energy = chosen->cost;
    }

    const LmState prev = rep.trajectory.back();
    theta = next;
    lambda = next_lambda;
    rep.trajectory.push_back({theta, lambda, energy, k + 1, evals, m_used});
    if (stop_check(prev, rep.trajectory.back(), stop)) {
      rep.converged = true;
      rep.message = "stop criteria met";
      break;
    }
  }

  rep.theta_hat = theta;
  rep.cost_min = energy;
  rep.iterations = rep.trajectory.back().iteration;
  rep.residual_evals = evals;
  return rep;
}

FitReport lm_solve(const Theta& theta0, double omega, const KmEstimates& km, const PdeConfig& cfg,
                   const StopCriteria& stop) {
  const ResidualEvaluator eval(km, omega, cfg);
  return lm_solve(theta0, eval.function(), stop);
}

}  // namespace oscid

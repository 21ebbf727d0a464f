#include "oscid/ident.hpp"

#include <cmath>
#include <exception>
#include <sstream>

#include <tbb/parallel_for.h>

namespace oscid {

Residual residual(const Theta& theta, double omega, const KmEstimates& km, const PdeConfig& cfg,
                  EvalCounter* counter) {
  std::uint64_t token = 0;
  if (counter) token = counter->fetch_add(1) + 1;
  validate(theta);
  const auto model = model_finite_time_km({theta, omega}, km.grid, cfg);

  const auto na = static_cast<Eigen::Index>(km.grid.n_a());
  const auto nt = static_cast<Eigen::Index>(km.grid.n_tau());
  Residual res;
  res.token = token;
  res.entries.setZero(2 * na * nt);
  res.weights.setZero(2 * na * nt);
  Eigen::Index k = 0;
  for (int n = 1; n <= 2; ++n) {
    const auto& hat = km.d_hat(n);
    const auto& mod = model.d(n);
    for (Eigen::Index i = 0; i < na; ++i) {
      for (Eigen::Index j = 0; j < nt; ++j, ++k) {
        if (km.missing(i, j)) continue;
        res.entries[k] = hat(i, j) - mod(i, j);
        res.weights[k] = km.weights(i, j);
      }
    }
  }
  return res;
}

ResidualEvaluator::ResidualEvaluator(KmEstimates km, double omega, PdeConfig cfg)
    : km_(std::move(km)), omega_(omega), cfg_(std::move(cfg)), counter_(std::make_shared<EvalCounter>(0)) {
  validate(km_);
  validate(cfg_);
}

Residual ResidualEvaluator::operator()(const Theta& theta) const {
  return residual(theta, omega_, km_, cfg_, counter_.get());
}

ResidualFn ResidualEvaluator::function() const {
  return [self = *this](const Theta& theta) { return self(theta); };
}

double cost(const Residual& res, std::size_t n_a, std::size_t n_tau) {
  const double acc = (res.weights.array() * res.entries.array().square()).sum();
  return acc / (2.0 * static_cast<double>(n_a) * static_cast<double>(n_tau));
}

double cost(const Residual& res) {
  if (res.entries.size() == 0) return 0.0;
  return (res.weights.array() * res.entries.array().square()).sum() / static_cast<double>(res.entries.size());
}

std::array<double, 3> fd_steps(const Theta& theta) {
  return {std::max(std::abs(theta.epsilon) / 10.0, 1e-5), std::max(std::abs(theta.alpha) / 10.0, 1e-5),
          std::max(std::abs(theta.d) / 10.0, 1e-5)};
}

JacobianError::JacobianError(int coordinate, const std::string& what)
    : NumericalError(what), coordinate_(coordinate) {}

const char* coordinate_name(int k) {
  switch (k) {
    case 0:
      return "epsilon";
    case 1:
      return "alpha";
    default:
      return "d";
  }
}

namespace {

Theta perturbed(const Theta& theta, int k, double delta) {
  Theta t = theta;
  (k == 0 ? t.epsilon : k == 1 ? t.alpha : t.d) += delta;
  return t;
}

}  // namespace

Eigen::MatrixXd fd_jacobian(const Theta& theta, const Residual& rho, const ResidualFn& fn) {
  const auto steps = fd_steps(theta);
  std::array<Residual, 3> shifted;
  std::array<std::exception_ptr, 3> errors;
  tbb::parallel_for(0, 3, [&](int k) {
    try {
      shifted[static_cast<std::size_t>(k)] = fn(perturbed(theta, k, steps[static_cast<std::size_t>(k)]));
    } catch (...) {
      errors[static_cast<std::size_t>(k)] = std::current_exception();
    }
  });
  for (int k = 0; k < 3; ++k) {
    if (!errors[static_cast<std::size_t>(k)]) continue;
    std::ostringstream os;
    os << "residual failed at the " << coordinate_name(k) << " perturbation";
    try {
      std::rethrow_exception(errors[static_cast<std::size_t>(k)]);
    } catch (const std::exception& e) {
      os << ": " << e.what();
    }
    throw JacobianError(k, os.str());
  }
  Eigen::MatrixXd jac(rho.entries.size(), 3);
  for (int k = 0; k < 3; ++k) {
    const auto& s = shifted[static_cast<std::size_t>(k)];
    if (s.entries.size() != rho.entries.size()) throw JacobianError(k, "residual length changed under perturbation");
    jac.col(k) = (s.entries - rho.entries) / steps[static_cast<std::size_t>(k)];
  }
  return jac;
}

Eigen::MatrixXd fd_jacobian(const Theta& theta, double omega, const KmEstimates& km, const PdeConfig& cfg,
                            EvalCounter* counter) {
  const Residual rho = residual(theta, omega, km, cfg, counter);
  return fd_jacobian(theta, rho, [&](const Theta& t) { return residual(t, omega, km, cfg, counter); });
}

bool stop_check(const LmState& prev, const LmState& next, const StopCriteria& stop) {
  const Eigen::Vector3d a(prev.theta.epsilon, prev.theta.alpha, prev.theta.d);
  const Eigen::Vector3d b(next.theta.epsilon, next.theta.alpha, next.theta.d);
  const double dtheta = (b - a).norm() / (1.0 + a.norm());
  const double dcost = std::abs(next.cost - prev.cost) / (1.0 + std::abs(prev.cost));
  return dtheta < stop.theta_tol && dcost < stop.cost_tol;
}

}  // namespace oscid

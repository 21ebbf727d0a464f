#include <cmath>
#include <sstream>

#include <Eigen/QR>

#include "oscid/ident.hpp"

namespace oscid {
namespace {

// A drift bin is kept only if this share of its usable lags has the modal sign.
constexpr double kModalShare = 0.75;

struct LineFit {
  double c0 = 0.0;
  double c1 = 0.0;
};

// Least squares for log|y| = c1 tau + c0.
LineFit fit_log_line(const std::vector<double>& tau, const std::vector<double>& y) {
  const auto n = static_cast<Eigen::Index>(tau.size());
  Eigen::MatrixXd a(n, 2);
  Eigen::VectorXd b(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    a(k, 0) = 1.0;
    a(k, 1) = tau[static_cast<std::size_t>(k)];
    b[k] = std::log(std::abs(y[static_cast<std::size_t>(k)]));
  }
  const Eigen::Vector2d c = a.colPivHouseholderQr().solve(b);
  return {c[0], c[1]};
}

}  // namespace

ExtrapolationFit extrapolation_fit(const KmEstimates& km, double omega) {
  validate(km);
  if (!(omega > 0.0)) throw DomainError("omega must be positive");
  const auto na = static_cast<Eigen::Index>(km.grid.n_a());
  const auto nt = static_cast<Eigen::Index>(km.grid.n_tau());

  ExtrapolationFit out;
  for (Eigen::Index i = 0; i < na; ++i) {
    std::vector<double> tau2, y2, tau_pos, y_pos, tau_neg, y_neg;
    for (Eigen::Index j = 0; j < nt; ++j) {
      if (km.missing(i, j)) continue;
      const double tau = km.grid.taus[static_cast<std::size_t>(j)];
      if (km.d2_hat(i, j) > 0.0) {
        tau2.push_back(tau);
        y2.push_back(km.d2_hat(i, j));
      }
      const double d1 = km.d1_hat(i, j);
      if (d1 > 0.0) {
        tau_pos.push_back(tau);
        y_pos.push_back(d1);
      } else if (d1 < 0.0) {
        tau_neg.push_back(tau);
        y_neg.push_back(d1);
      }
    }
    const std::size_t total = tau_pos.size() + tau_neg.size();
    const bool positive = tau_pos.size() > tau_neg.size();
    const auto& tau1 = positive ? tau_pos : tau_neg;
    const auto& y1 = positive ? y_pos : y_neg;
    if (tau2.size() < 2 || tau1.size() < 2) continue;
    if (static_cast<double>(tau1.size()) < kModalShare * static_cast<double>(total)) continue;

    const LineFit drift = fit_log_line(tau1, y1);
    const LineFit diffusion = fit_log_line(tau2, y2);
    out.used_bins.push_back(static_cast<std::size_t>(i));
    out.c0_drift.push_back((positive ? 1.0 : -1.0) * std::exp(drift.c0));
    out.c0_diffusion.push_back(std::exp(diffusion.c0));
  }

  if (out.used_bins.size() < 2) {
    std::ostringstream os;
    os << "extrapolation needs at least two usable amplitude bins, found " << out.used_bins.size();
    throw InitializerError(os.str());
  }

  const double w2 = omega * omega;
  double acc = 0.0;
  for (double v : out.c0_diffusion) acc += v;
  const double d = 2.0 * w2 * acc / static_cast<double>(out.used_bins.size());

  const auto m = static_cast<Eigen::Index>(out.used_bins.size());
  Eigen::MatrixXd a(m, 2);
  Eigen::VectorXd b(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const double ai = km.grid.amplitudes[out.used_bins[static_cast<std::size_t>(k)]];
    a(k, 0) = 0.5 * ai;
    a(k, 1) = 0.125 * ai * ai * ai;
    b[k] = out.c0_drift[static_cast<std::size_t>(k)] - d / (2.0 * w2 * ai);
  }
  const Eigen::Vector2d ea = a.colPivHouseholderQr().solve(b);
  out.theta = {ea[0], ea[1], d};
  if (!out.theta.finite()) throw InitializerError("extrapolation produced non-finite parameters");
  return out;
}

Theta extrapolation_guess(const KmEstimates& km, double omega) { return extrapolation_fit(km, omega).theta; }

}  // namespace oscid

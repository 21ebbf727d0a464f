#include "oscid/afp.hpp"

#include <lapacke.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <numbers>
#include <optional>
#include <sstream>


namespace oscid {

StiffnessError::StiffnessError(const Theta& theta, double time, const std::string& what)
    : NumericalError(what), theta_(theta), time_(time) {}

StiffnessError StiffnessError::tagged(int n, std::size_t i) const {
  std::ostringstream os;
  os << what() << " [n=" << n << ", i=" << i << "]";
  StiffnessError e(theta_, time_, os.str());
  e.order_ = n;
  e.bin_ = i;
  return e;
}

DriftDiffusion model_coeffs(const ModelCoeffs& mc, double a) {
  if (!(a > 0.0)) throw DomainError("model coefficients require a > 0");
  const auto& th = mc.theta;
  const double d2 = th.d / (2.0 * mc.omega * mc.omega);
  return {0.5 * th.epsilon * a + 0.125 * th.alpha * a * a * a + d2 / a, d2};
}

void validate(const PdeConfig& cfg) {
  if (!(cfg.a_max_factor > 1.0)) throw ConfigError("a_max_factor must exceed 1");
  if (cfg.n_cells < 50) throw ConfigError("n_cells must be >= 50");
  if (!(cfg.rel_tol > 0.0) || !(cfg.abs_tol > 0.0)) throw ConfigError("tolerances must be positive");
}

namespace {

constexpr int kBand = 2;                            // two sub- and super-diagonals
constexpr int kLdab = 2 * kBand + kBand + 1;        // LAPACK band storage with fill-in rows
const double kGamma = 2.0 - std::numbers::sqrt2;    // TR-BDF2 stage fraction
const double kDiag = 1.0 - 1.0 / std::numbers::sqrt2;  // shared implicit coefficient
const double kErrConst = (-3.0 * kGamma * kGamma + 4.0 * kGamma - 2.0) / (12.0 * (2.0 - kGamma));

// Pentadiagonal method-of-lines operator; band[o + 2][k] = L(k, k + o).
class AdjointOperator {
 public:
  AdjointOperator(const ModelCoeffs& mc, double a_max, int n_cells)
      : n_(n_cells), h_(a_max / n_cells) {
    for (auto& b : band_) b.assign(static_cast<std::size_t>(n_), 0.0);
    const auto& th = mc.theta;
    const double d2 = th.d / (2.0 * mc.omega * mc.omega);
    const double h2 = h_ * h_;
    for (int k = 0; k < n_; ++k) {
      const double a = node(k);
      // D2/A dP/dA + D2 d2P/dA2 in radial flux form; the face at A = 0 has
      // zero weight.
      const double c_plus = d2 * (a + 0.5 * h_) / (a * h2);
      const double c_minus = k == 0 ? 0.0 : d2 * (a - 0.5 * h_) / (a * h2);
      add(k, k + 1, c_plus);
      add(k, k, -c_plus - c_minus);
      if (k > 0) add(k, k - 1, c_minus);
      // Polynomial drift with second-order one-sided upwinding.
      const double g = 0.5 * th.epsilon * a + 0.125 * th.alpha * a * a * a;
      const double s = g / (2.0 * h_);
      if (g >= 0.0) {
        add(k, k, -3.0 * s);
        add(k, k + 1, 4.0 * s);
        add(k, k + 2, -s);
      } else {
        add(k, k, 3.0 * s);
        add(k, k - 1, -4.0 * s);
        add(k, k - 2, s);
      }
    }
  }

  int size() const noexcept { return n_; }
  double spacing() const noexcept { return h_; }
  double node(int k) const noexcept { return (k + 0.5) * h_; }
  double at(int row, int offset) const noexcept { return band_[offset + kBand][static_cast<std::size_t>(row)]; }

  void apply(const std::vector<double>& y, std::vector<double>& out) const {
    for (int k = 0; k < n_; ++k) {
      double acc = 0.0;
      for (int o = -kBand; o <= kBand; ++o) {
        const int j = k + o;
        if (j >= 0 && j < n_) acc += at(k, o) * y[static_cast<std::size_t>(j)];
      }
      out[static_cast<std::size_t>(k)] = acc;
    }
  }

 private:
  // Adds c * P_col to row `row`, resolving ghost columns: odd reflection
  // about A = 0 (P = 0 there) and linear extrapolation past A_max.
  void add(int row, int col, double c) {
    if (col < 0) {
      put(row, -col - 1, -c);
    } else if (col >= n_) {
      const double m = col - n_ + 1;
      put(row, n_ - 1, c * (1.0 + m));
      put(row, n_ - 2, -c * m);
    } else {
      put(row, col, c);
    }
  }
  void put(int row, int col, double c) { band_[col - row + kBand][static_cast<std::size_t>(row)] += c; }

  int n_;
  double h_;
  std::array<std::vector<double>, 2 * kBand + 1> band_;
};

// LU factorization of I - c L in LAPACK band storage.
class ShiftedSolver {
 public:
  explicit ShiftedSolver(int n) : n_(n), ab_(static_cast<std::size_t>(kLdab * n)), ipiv_(static_cast<std::size_t>(n)) {}

  bool factor(const AdjointOperator& op, double c) {
    std::fill(ab_.begin(), ab_.end(), 0.0);
    for (int j = 0; j < n_; ++j) {
      for (int i = std::max(0, j - kBand); i <= std::min(n_ - 1, j + kBand); ++i) {
        double v = -c * op.at(i, j - i);
        if (i == j) v += 1.0;
        ab_[static_cast<std::size_t>(2 * kBand + i - j + j * kLdab)] = v;
      }
    }
    return LAPACKE_dgbtrf(LAPACK_COL_MAJOR, n_, n_, kBand, kBand, ab_.data(), kLdab, ipiv_.data()) == 0;
  }

  void solve(Eigen::MatrixXd& b) const {
    LAPACKE_dgbtrs(LAPACK_COL_MAJOR, 'N', n_, kBand, kBand, static_cast<lapack_int>(b.cols()), ab_.data(), kLdab,
                   ipiv_.data(), b.data(), n_);
  }

 private:
  int n_;
  std::vector<double> ab_;
  std::vector<lapack_int> ipiv_;
};

void apply(const AdjointOperator& op, const Eigen::MatrixXd& y, Eigen::MatrixXd& out) {
  const int n = op.size();
  for (Eigen::Index c = 0; c < y.cols(); ++c) {
    const double* yc = y.col(c).data();
    double* oc = out.col(c).data();
    for (int k = 0; k < n; ++k) {
      double acc = 0.0;
      for (int o = std::max(-kBand, -k); o <= std::min(kBand, n - 1 - k); ++o) acc += op.at(k, o) * yc[k + o];
      oc[k] = acc;
    }
  }
}

// Four-point Lagrange weights for reading nodal values at a.
struct Probe {
  int first = 0;
  std::array<double, 4> w{};

  double operator()(const double* y) const {
    return w[0] * y[first] + w[1] * y[first + 1] + w[2] * y[first + 2] + w[3] * y[first + 3];
  }
};

Probe make_probe(const AdjointOperator& op, double a) {
  Probe p;
  p.first = std::clamp(static_cast<int>(std::floor(a / op.spacing() - 0.5)) - 1, 0, op.size() - 4);
  for (int i = 0; i < 4; ++i) {
    double w = 1.0;
    const double xi = op.node(p.first + i);
    for (int q = 0; q < 4; ++q) {
      if (q != i) w *= (a - op.node(p.first + q)) / (xi - op.node(p.first + q));
    }
    p.w[static_cast<std::size_t>(i)] = w;
  }
  return p;
}

struct BatchFailure {
  std::size_t output = 0;
  double time = 0.0;
  std::string why;
};

// A requested reading: sum_m weight[m] * (column m of the basis solution)
// probed at one amplitude.
struct Output {
  Probe probe;
  std::vector<double> weights;
  bool nonnegative = false;
};

struct BatchResult {
  Eigen::MatrixXd values;  // outputs x checkpoints
  std::size_t steps = 0;
  std::size_t rejected = 0;
  std::optional<BatchFailure> failure;
};

// Integrates every basis column with one shared step sequence; each step
// costs a single factorization. Because the scheme and the dense output are
// linear, an output equals the solution started from the matching linear
// combination of basis initial data. Checkpoint values come from cubic
// Hermite dense output of the probed values and their time derivatives.
BatchResult integrate(const AdjointOperator& op, const Eigen::MatrixXd& init, const std::vector<Output>& outputs,
                      const PdeConfig& cfg) {
  const int n = op.size();
  const Eigen::Index cols = init.cols();
  const auto& checkpoints = cfg.checkpoint_times;
  BatchResult res;
  res.values.setZero(static_cast<Eigen::Index>(outputs.size()), static_cast<Eigen::Index>(checkpoints.size()));

  Eigen::MatrixXd y = init, f(n, cols), y_stage(n, cols), f_stage(n, cols), y_next(n, cols), f_next(n, cols),
                  rhs(n, cols), est(n, cols);
  apply(op, y, f);

  // Worst per-column weighted RMS.
  auto norm = [&](const Eigen::MatrixXd& v, const Eigen::MatrixXd& y0, const Eigen::MatrixXd& y1) {
    double err = 0.0;
    for (Eigen::Index c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int k = 0; k < n; ++k) {
        const double sc = cfg.abs_tol + cfg.rel_tol * std::max(std::abs(y0(k, c)), std::abs(y1(k, c)));
        const double r = v(k, c) / sc;
        acc += r * r;
      }
      acc = std::sqrt(acc / n);
      if (!(acc <= err)) err = acc;
    }
    return err;
  };

  const double t_end = checkpoints.back();
  double h;
  {
    const double d0 = norm(y, y, y);
    const double d1 = norm(f, y, y);
    h = (d0 > 1e-5 && d1 > 1e-5) ? 0.01 * d0 / d1 : 1e-6;
    h = std::min(h, t_end);
  }

  const double c1 = 1.0 / (kGamma * (2.0 - kGamma));
  const double c0 = (1.0 - kGamma) * (1.0 - kGamma) / (kGamma * (2.0 - kGamma));
  std::vector<double> py0(static_cast<std::size_t>(cols)), pf0(py0), py1(py0), pf1(py0);
  ShiftedSolver lu(n);
  double t = 0.0;
  std::size_t next = 0;
  while (next < checkpoints.size()) {
    if (res.steps + res.rejected >= cfg.max_steps) {
      res.failure = BatchFailure{0, t, "step budget exhausted"};
      return res;
    }
    const bool last = t + h >= t_end * (1.0 - 1e-12);
    const double step = last ? t_end - t : h;
    if (!(step > 1e-14 * std::max(1.0, t))) {
      res.failure = BatchFailure{0, t, "step size underflow"};
      return res;
    }
    if (!lu.factor(op, kDiag * step)) {
      res.failure = BatchFailure{0, t, "singular iteration matrix"};
      return res;
    }

    // Trapezoidal stage to t + gamma h, then BDF2 stage to t + h.
    y_stage = y + (kDiag * step) * f;
    lu.solve(y_stage);
    f_stage = (y_stage - y) / (kDiag * step) - f;
    rhs = c1 * y_stage - c0 * y;
    y_next = rhs;
    lu.solve(y_next);
    f_next = (y_next - rhs) / (kDiag * step);

    // Local error estimate, filtered through the iteration matrix.
    est = (2.0 * kErrConst * step) * (f / kGamma - f_stage / (kGamma * (1.0 - kGamma)) + f_next / (1.0 - kGamma));
    lu.solve(est);
    const double err = norm(est, y, y_next);
    if (!std::isfinite(err)) {
      res.failure = BatchFailure{0, t, "non-finite state"};
      return res;
    }

    if (err <= 1.0) {
      const double t_next = last ? t_end : t + step;
      while (next < checkpoints.size() && checkpoints[next] <= t_next * (1.0 + 1e-13)) {
        const double s = std::clamp((checkpoints[next] - t) / step, 0.0, 1.0);
        const double h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        const double h10 = s * (1.0 - s) * (1.0 - s);
        const double h01 = s * s * (3.0 - 2.0 * s);
        const double h11 = s * s * (s - 1.0);
        for (std::size_t o = 0; o < outputs.size(); ++o) {
          const auto& out = outputs[o];
          double v = 0.0;
          for (Eigen::Index c = 0; c < cols; ++c) {
            const double w = out.weights[static_cast<std::size_t>(c)];
            if (w == 0.0) continue;
            v += w * (h00 * out.probe(y.col(c).data()) + h10 * step * out.probe(f.col(c).data()) +
                      h01 * out.probe(y_next.col(c).data()) + h11 * step * out.probe(f_next.col(c).data()));
          }
          if (!std::isfinite(v)) {
            res.failure = BatchFailure{o, checkpoints[next], "non-finite checkpoint value"};
            return res;
          }
          if (out.nonnegative && v < -1e-12) {
            res.failure = BatchFailure{o, checkpoints[next], "negative second moment"};
            return res;
          }
          res.values(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(next)) = v;
        }
        ++next;
      }
      t = t_next;
      y.swap(y_next);
      f.swap(f_next);
      ++res.steps;
      const double grow = err > 0.0 ? 0.9 * std::pow(err, -1.0 / 3.0) : 5.0;
      h = step * std::clamp(grow, 0.2, 5.0);
    } else {
      ++res.rejected;
      h = step * std::clamp(0.9 * std::pow(err, -1.0 / 3.0), 0.1, 0.9);
    }
  }
  return res;
}

void check_checkpoints(const std::vector<double>& checkpoints) {
  if (checkpoints.empty()) throw ConfigError("at least one checkpoint time is required");
  if (!(checkpoints.front() > 0.0) || !std::is_sorted(checkpoints.begin(), checkpoints.end())) {
    throw ConfigError("checkpoint times must be positive and ascending");
  }
}

double domain_extent(const PdeConfig& cfg, double a_extent, double a_center) {
  return cfg.a_max_factor * std::max(a_extent, 2.0 * a_center);
}

StiffnessError stiffness(const ModelCoeffs& mc, const BatchFailure& f) {
  std::ostringstream os;
  os << "adjoint Fokker-Planck solve failed at t=" << f.time << ": " << f.why << " (eps=" << mc.theta.epsilon
     << ", alpha=" << mc.theta.alpha << ", d=" << mc.theta.d << ")";
  return StiffnessError(mc.theta, f.time, os.str());
}

void check_inputs(const ModelCoeffs& mc, const PdeConfig& cfg) {
  validate(cfg);
  validate(mc.theta);
  if (!(mc.omega > 0.0)) throw DomainError("omega must be positive");
  check_checkpoints(cfg.checkpoint_times);
}

}  // namespace

AfpSolution solve_afp(const ModelCoeffs& mc, int n, double a_center, const PdeConfig& cfg, double a_extent) {
  check_inputs(mc, cfg);
  if (n != 1 && n != 2) throw DomainError("moment order must be 1 or 2");
  if (!(a_center > 0.0)) throw DomainError("a_center must be positive");

  const AdjointOperator op(mc, domain_extent(cfg, a_extent, a_center), cfg.n_cells);
  Eigen::MatrixXd init(op.size(), 1);
  for (int k = 0; k < op.size(); ++k) init(k, 0) = std::pow(op.node(k) - a_center, n);
  const auto res = integrate(op, init, {Output{make_probe(op, a_center), {1.0}, n == 2}}, cfg);
  if (res.failure) throw stiffness(mc, *res.failure);

  AfpSolution sol;
  sol.n = n;
  sol.a_center = a_center;
  sol.values.assign(res.values.data(), res.values.data() + res.values.size());
  sol.steps = res.steps;
  sol.rejected_steps = res.rejected;
  return sol;
}

ModelKm model_finite_time_km(const ModelCoeffs& mc, const SampleGrid& grid, const PdeConfig& cfg) {
  validate(grid);
  PdeConfig local = cfg;
  local.checkpoint_times = grid.taus;
  check_inputs(mc, local);
  for (double a : grid.amplitudes) {
    if (!(a > 0.0)) throw DomainError("grid amplitudes must be positive");
  }
  const std::size_t na = grid.n_a();
  const auto nt = static_cast<Eigen::Index>(grid.n_tau());
  const double a_top = grid.amplitudes.back();
  const AdjointOperator op(mc, domain_extent(local, a_top, a_top), local.n_cells);

  // (A - a)^n expands over the monomials 1, A, A^2, so three basis columns
  // carry all 2 N_a initial conditions.
  Eigen::MatrixXd init(op.size(), 3);
  for (int k = 0; k < op.size(); ++k) {
    const double a = op.node(k);
    init(k, 0) = 1.0;
    init(k, 1) = a;
    init(k, 2) = a * a;
  }
  std::vector<Output> outputs;
  outputs.reserve(2 * na);
  for (double a : grid.amplitudes) outputs.push_back({make_probe(op, a), {-a, 1.0, 0.0}, false});
  for (double a : grid.amplitudes) outputs.push_back({make_probe(op, a), {a * a, -2.0 * a, 1.0}, true});

  const auto res = integrate(op, init, outputs, local);
  if (res.failure) {
    const std::size_t o = res.failure->output;
    throw stiffness(mc, *res.failure).tagged(o < na ? 1 : 2, o % na);
  }

  ModelKm out;
  out.d1.resize(static_cast<Eigen::Index>(na), nt);
  out.d2.resizeLike(out.d1);
  for (Eigen::Index j = 0; j < nt; ++j) {
    const double tau = grid.taus[static_cast<std::size_t>(j)];
    out.d1.col(j) = res.values.col(j).head(static_cast<Eigen::Index>(na)) / tau;
    out.d2.col(j) = res.values.col(j).tail(static_cast<Eigen::Index>(na)) / (2.0 * tau);
  }
  return out;
}

}  // namespace oscid

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include <tbb/parallel_for.h>

#include "oscid/ident.hpp"

namespace oscid {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kReflect = 1.0;
constexpr double kExpand = 2.0;
constexpr double kContract = 0.5;
constexpr double kShrink = 0.5;

using Point = Eigen::Vector3d;

struct Vertex {
  Point x;
  double f = kInf;
};

Theta as_theta(const Point& v) { return {v[0], v[1], v[2]}; }

}  // namespace

FitReport nelder_mead_solve(const Theta& theta0, const CostFn& fn, const StopCriteria& stop) {
  validate(theta0);
  FitReport rep;
  rep.method = "nm";
  const double nan = std::numeric_limits<double>::quiet_NaN();

  auto eval = [&](const Point& x) {
    double f = kInf;
    try {
      f = fn(as_theta(x));
      if (!std::isfinite(f)) f = kInf;
    } catch (const NumericalError&) {
      f = kInf;
    }
    return f;
  };
  auto record = [&](double f) {
    rep.eval_costs.push_back(f);
    ++rep.residual_evals;
  };

  std::array<Vertex, 4> simplex;
  simplex[0].x = Point(theta0.epsilon, theta0.alpha, theta0.d);
  const auto steps = fd_steps(theta0);
  for (int k = 0; k < 3; ++k) {
    simplex[static_cast<std::size_t>(k + 1)].x = simplex[0].x;
    simplex[static_cast<std::size_t>(k + 1)].x[k] += steps[static_cast<std::size_t>(k)];
  }
  tbb::parallel_for(0, 4, [&](int v) { simplex[static_cast<std::size_t>(v)].f = eval(simplex[static_cast<std::size_t>(v)].x); });
  for (const auto& v : simplex) record(v.f);

  auto order = [&] {
    std::stable_sort(simplex.begin(), simplex.end(), [](const Vertex& a, const Vertex& b) { return a.f < b.f; });
  };
  auto snapshot = [&](std::size_t it) {
    return LmState{as_theta(simplex[0].x), nan, simplex[0].f, it, rep.residual_evals, 0};
  };

  order();
  rep.trajectory.push_back(snapshot(0));
  rep.message = "iteration cap reached";

  for (std::size_t it = 1; it <= stop.nm_max_iterations; ++it) {
    const Point centroid = (simplex[0].x + simplex[1].x + simplex[2].x) / 3.0;
    Vertex& worst = simplex[3];

    const Point xr = centroid + kReflect * (centroid - worst.x);
    const double fr = eval(xr);
    record(fr);
    bool shrink = false;
    if (fr < simplex[0].f) {
      const Point xe = centroid + kExpand * (xr - centroid);
      const double fe = eval(xe);
      record(fe);
      worst = fe < fr ? Vertex{xe, fe} : Vertex{xr, fr};
    } else if (fr < simplex[2].f) {
      worst = {xr, fr};
    } else if (fr < worst.f) {
      const Point xc = centroid + kContract * (xr - centroid);
      const double fc = eval(xc);
      record(fc);
      if (fc <= fr) {
        worst = {xc, fc};
      } else {
        shrink = true;
      }
    } else {
      const Point xcc = centroid + kContract * (worst.x - centroid);
      const double fcc = eval(xcc);
      record(fcc);
      if (fcc < worst.f) {
        worst = {xcc, fcc};
      } else {
        shrink = true;
      }
    }
    if (shrink) {
      for (std::size_t v = 1; v < 4; ++v) simplex[v].x = simplex[0].x + kShrink * (simplex[v].x - simplex[0].x);
      tbb::parallel_for(1, 4, [&](int v) { simplex[static_cast<std::size_t>(v)].f = eval(simplex[static_cast<std::size_t>(v)].x); });
      for (std::size_t v = 1; v < 4; ++v) record(simplex[v].f);
    }
    order();
    rep.trajectory.push_back(snapshot(it));

    // Converged when every vertex is within the stop tolerances of the best.
    if (std::isfinite(simplex[0].f)) {
      const LmState best = snapshot(it);
      bool all = true;
      for (std::size_t v = 1; v < 4 && all; ++v) {
        all = stop_check(best, LmState{as_theta(simplex[v].x), nan, simplex[v].f, it, 0, 0}, stop);
      }
      if (all) {
        rep.converged = true;
        rep.message = "stop criteria met";
        break;
      }
    }
  }

  rep.theta_hat = as_theta(simplex[0].x);
  rep.cost_min = simplex[0].f;
  rep.iterations = rep.trajectory.back().iteration;
  if (!std::isfinite(rep.cost_min)) {
    rep.converged = false;
    rep.message = "no vertex with a finite cost";
  }
  return rep;
}

FitReport nelder_mead_solve(const Theta& theta0, double omega, const KmEstimates& km, const PdeConfig& cfg,
                            const StopCriteria& stop) {
  const ResidualEvaluator eval(km, omega, cfg);
  return nelder_mead_solve(theta0, [&](const Theta& t) { return cost(eval(t)); }, stop);
}

}  // namespace oscid

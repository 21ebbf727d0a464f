#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <mutex>
#include <variant>

#include <fmt/format.h>
#include <tbb/parallel_for.h>

#include "cli.hpp"
#include "oscid/io.hpp"

namespace oscid::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

void ensure_writable(const std::vector<fs::path>& paths, const Options& opts) {
  if (opts.force) return;
  for (const auto& p : paths) {
    if (fs::exists(p)) throw ConfigError(fmt::format("'{}' already exists (use --force to overwrite)", p.string()));
  }
}

json sidecar(const std::string& command, const RunConfig& cfg, const std::vector<fs::path>& outputs) {
  json files = json::array();
  for (const auto& p : outputs) files.push_back(p.filename().string());
  return {{"command", command}, {"config", to_json(cfg)}, {"outputs", files}};
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// One record, or consecutive windows of it.
struct Piece {
  std::size_t index = 0;
  TimeSeries ts;
};

std::vector<Piece> pieces_of(const TimeSeries& ts, const std::optional<double>& segment) {
  std::vector<Piece> out;
  if (!segment) {
    out.push_back({0, ts});
    return out;
  }
  auto segs = segment_series(ts, *segment);
  for (std::size_t k = 0; k < segs.size(); ++k) out.push_back({k, std::move(segs[k])});
  return out;
}

std::string stem_of(const RunConfig& cfg) { return cfg.input->stem().string(); }

std::string piece_tag(const RunConfig& cfg, const Piece& p, std::size_t count) {
  if (!cfg.segment) return stem_of(cfg);
  const int width = std::max<int>(2, static_cast<int>(std::to_string(count - 1).size()));
  return fmt::format("{}.seg{:0{}}", stem_of(cfg), p.index, width);
}

json piece_json(const Piece& p) {
  return {{"index", p.index}, {"t_start", p.ts.t0}, {"t_end", p.ts.t0 + p.ts.duration()}};
}

json prepared_json(const Prepared& prep) {
  return {{"omega", prep.omega},
          {"tau_hint", prep.hint == GrowthHint::kPositive ? "positive" : "non_positive"},
          {"tau_min", prep.tau.taus.front()},
          {"tau_max", prep.tau.taus.back()},
          {"n_tau", prep.tau.taus.size()},
          {"tau_upper_clamped", prep.tau.upper_clamped},
          {"a_min", prep.km.grid.amplitudes.front()},
          {"a_max", prep.km.grid.amplitudes.back()},
          {"km_missing_fraction", prep.km.missing_fraction()},
          {"theta0", to_json(prep.theta0)},
          {"initializer_fallback", prep.fallback},
          {"initializer_message", prep.init_message}};
}

// Runs fn on every item concurrently; exceptions are captured per item.
template <typename T, typename Fn>
std::vector<std::variant<T, std::exception_ptr>> run_all(std::size_t n, Fn fn) {
  std::vector<std::variant<T, std::exception_ptr>> out(n, std::exception_ptr{});
  tbb::parallel_for(std::size_t{0}, n, [&](std::size_t k) {
    try {
      out[k] = fn(k);
    } catch (...) {
      out[k] = std::current_exception();
    }
  });
  return out;
}

json error_of(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const std::exception& ex) {
    return error_json(ex);
  }
}

// Rethrows the first captured failure when every item failed.
template <typename T>
void rethrow_if_all_failed(const std::vector<std::variant<T, std::exception_ptr>>& results) {
  for (const auto& r : results) {
    if (std::holds_alternative<T>(r)) return;
  }
  if (!results.empty()) std::rethrow_exception(std::get<std::exception_ptr>(results.front()));
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

}  // namespace

json error_json(const std::exception& e) {
  json j = {{"message", e.what()}};
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    j["kind"] = err->kind();
    j["exit_code"] = static_cast<int>(err->exit_code());
  } else {
    j["kind"] = "internal_error";
    j["exit_code"] = 1;
  }
  if (const auto* s = dynamic_cast<const StiffnessError*>(&e)) {
    j["theta"] = to_json(s->theta());
    j["time"] = s->time();
    if (s->order()) j["order"] = *s->order();
    if (s->bin()) j["bin"] = *s->bin();
  }
  if (const auto* p = dynamic_cast<const ParseError*>(&e)) j["line"] = p->line();
  if (const auto* b = dynamic_cast<const BlowUpError*>(&e)) j["time"] = b->time();
  if (const auto* jac = dynamic_cast<const JacobianError*>(&e)) j["coordinate"] = coordinate_name(jac->coordinate());
  return j;
}

void cmd_simulate(const RunConfig& cfg, const Options& opts) {
  validate(cfg, "simulate");
  std::vector<fs::path> outputs;
  for (auto seed : cfg.seeds) outputs.push_back(cfg.output_dir / fmt::format("sim_seed{}.csv", seed));
  const fs::path side = cfg.output_dir / "simulate.json";
  auto all = outputs;
  all.push_back(side);
  ensure_writable(all, opts);

  std::vector<std::string> texts(cfg.seeds.size());
  tbb::parallel_for(std::size_t{0}, cfg.seeds.size(), [&](std::size_t k) {
    SimConfig sc = cfg.sim;
    sc.seed = cfg.seeds[k];
    texts[k] = format_timeseries_csv(simulate_vdp(cfg.model, sc));
  });
  for (std::size_t k = 0; k < texts.size(); ++k) write_text(outputs[k], texts[k]);
  write_json(side, sidecar("simulate", cfg, outputs));
}

void cmd_identify(const RunConfig& cfg, const Options& opts) {
  validate(cfg, "identify");
  const TimeSeries ts = read_timeseries_csv(*cfg.input);
  const auto pieces = pieces_of(ts, cfg.segment);
  const std::string m = method_name(cfg.method);

  std::vector<fs::path> outputs;
  for (const auto& p : pieces) {
    const auto tag = piece_tag(cfg, p, pieces.size());
    outputs.push_back(cfg.output_dir / (tag + "." + m + ".json"));
    outputs.push_back(cfg.output_dir / (tag + "." + m + ".trajectory.csv"));
  }
  const fs::path summary = cfg.output_dir / (stem_of(cfg) + "." + m + ".segments.csv");
  const fs::path km_path = cfg.output_dir / (stem_of(cfg) + ".km.csv");
  if (cfg.segment) {
    outputs.push_back(summary);
  } else {
    outputs.push_back(km_path);
  }
  const fs::path side = cfg.output_dir / (stem_of(cfg) + ".identify.json");
  auto all = outputs;
  all.push_back(side);
  ensure_writable(all, opts);

  struct Result {
    Prepared prep;
    FitReport rep;
  };
  const auto results = run_all<Result>(pieces.size(), [&](std::size_t k) {
    Result r;
    r.prep = prepare(pieces[k].ts, cfg.analysis);
    r.rep = run_method(cfg.method, r.prep, cfg.pde, cfg.stop);
    return r;
  });
  // A single record propagates its failure; segments record theirs.
  if (!cfg.segment) rethrow_if_all_failed(results);

  fmt::memory_buffer rows;
  fmt::format_to(std::back_inserter(rows),
                 "segment,t_start,t_end,eps_hat,alpha_hat,d_hat,cost,residual_evals,converged,error\n");
  for (std::size_t k = 0; k < pieces.size(); ++k) {
    const auto& p = pieces[k];
    const auto tag = piece_tag(cfg, p, pieces.size());
    json doc = {{"input", cfg.input->string()}, {"method", m}, {"segment", cfg.segment ? piece_json(p) : json(nullptr)}};
    std::string traj = "iteration,epsilon,alpha,d,lambda,cost,residual_evals,backtracks\n";
    if (const auto* r = std::get_if<Result>(&results[k])) {
      doc["analysis"] = prepared_json(r->prep);
      doc["fit"] = to_json(r->rep);
      traj = format_trajectory_csv(r->rep);
      const auto& t = r->rep.theta_hat;
      fmt::format_to(std::back_inserter(rows), "{},{},{},{},{},{},{},{},{},\n", p.index, p.ts.t0,
                     p.ts.t0 + p.ts.duration(), t.epsilon, t.alpha, t.d, format_number(r->rep.cost_min),
                     r->rep.residual_evals, bool_text(r->rep.converged));
      if (!cfg.segment) write_text(km_path, format_km_csv(r->prep.km));
    } else {
      const auto err = error_of(std::get<std::exception_ptr>(results[k]));
      doc["error"] = err;
      fmt::format_to(std::back_inserter(rows), "{},{},{},nan,nan,nan,nan,0,false,{}\n", p.index, p.ts.t0,
                     p.ts.t0 + p.ts.duration(), err["kind"].get<std::string>());
    }
    write_json(cfg.output_dir / (tag + "." + m + ".json"), doc);
    write_text(cfg.output_dir / (tag + "." + m + ".trajectory.csv"), traj);
  }
  if (cfg.segment) write_text(summary, fmt::to_string(rows));
  write_json(side, sidecar("identify", cfg, outputs));
}

void cmd_sweep(const RunConfig& cfg, const Options& opts) {
  validate(cfg, "sweep");
  const auto values = cfg.sweep->values();
  const fs::path table = cfg.output_dir / "sweep.csv";
  const fs::path cells_path = cfg.output_dir / "sweep_cells.json";
  const fs::path side = cfg.output_dir / "sweep.json";
  ensure_writable({table, cells_path, side}, opts);

  struct Outcome {
    std::optional<FitReport> rep;
    json error;
  };
  struct Cell {
    double value = 0.0;
    std::uint64_t seed = 0;
    json analysis;
    std::vector<Outcome> outcomes;
  };
  const std::size_t ns = cfg.seeds.size();
  std::vector<Cell> cells(values.size() * ns);
  tbb::parallel_for(std::size_t{0}, cells.size(), [&](std::size_t c) {
    Cell& cell = cells[c];
    cell.value = values[c / ns];
    cell.seed = cfg.seeds[c % ns];
    cell.outcomes.resize(cfg.methods.size());
    OscillatorModel model = cfg.model;
    (cfg.sweep->axis == "epsilon" ? model.theta.epsilon : model.theta.alpha) = cell.value;
    SimConfig sc = cfg.sim;
    sc.seed = cell.seed;
    std::optional<Prepared> prep;
    try {
      prep = prepare(simulate_vdp(model, sc), cfg.analysis);
      cell.analysis = prepared_json(*prep);
    } catch (const std::exception& e) {
      for (auto& o : cell.outcomes) o.error = error_json(e);
      return;
    }
    for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
      try {
        cell.outcomes[k].rep = run_method(cfg.methods[k], *prep, cfg.pde, cfg.stop);
      } catch (const std::exception& e) {
        cell.outcomes[k].error = error_json(e);
      }
    }
  });

  fmt::memory_buffer buf;
  fmt::format_to(std::back_inserter(buf), "axis_value,method,eps_hat,alpha_hat,d_hat,cost,residual_evals,converged\n");
  json cell_docs = json::array();
  for (std::size_t v = 0; v < values.size(); ++v) {
    for (std::size_t s = 0; s < ns; ++s) {
      const Cell& cell = cells[v * ns + s];
      json methods = json::object();
      for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
        const auto& o = cell.outcomes[k];
        const char* name = method_name(cfg.methods[k]);
        if (o.rep) {
          const auto& t = o.rep->theta_hat;
          fmt::format_to(std::back_inserter(buf), "{},{},{},{},{},{},{},{}\n", values[v], name, t.epsilon, t.alpha,
                         t.d, format_number(o.rep->cost_min), o.rep->residual_evals, bool_text(o.rep->converged));
          methods[name] = {{"theta_hat", to_json(t)}, {"cost_min", o.rep->cost_min},
                           {"residual_evals", o.rep->residual_evals}, {"iterations", o.rep->iterations},
                           {"converged", o.rep->converged}, {"message", o.rep->message}};
        } else {
          fmt::format_to(std::back_inserter(buf), "{},{},nan,nan,nan,nan,0,false\n", values[v], name);
          methods[name] = {{"error", o.error}};
        }
      }
      cell_docs.push_back({{"axis_value", values[v]}, {"seed", cell.seed}, {"analysis", cell.analysis}, {"methods", methods}});
    }
    if (ns < 2) continue;
    // Seed averages over converged runs; converged holds the converged share.
    for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
      double e = 0.0, a = 0.0, d = 0.0, c = 0.0, evals = 0.0;
      std::size_t nc = 0;
      for (std::size_t s = 0; s < ns; ++s) {
        const auto& o = cells[v * ns + s].outcomes[k];
        if (o.rep) evals += static_cast<double>(o.rep->residual_evals);
        if (!o.rep || !o.rep->converged) continue;
        e += o.rep->theta_hat.epsilon;
        a += o.rep->theta_hat.alpha;
        d += o.rep->theta_hat.d;
        c += o.rep->cost_min;
        ++nc;
      }
      const double inv = nc ? 1.0 / static_cast<double>(nc) : kNan;
      fmt::format_to(std::back_inserter(buf), "{},mean:{},{},{},{},{},{},{}\n", values[v], method_name(cfg.methods[k]),
                     format_number(e * inv), format_number(a * inv), format_number(d * inv), format_number(c * inv),
                     format_number(evals / static_cast<double>(ns)),
                     format_number(static_cast<double>(nc) / static_cast<double>(ns)));
    }
  }
  write_text(table, fmt::to_string(buf));
  write_json(cells_path, cell_docs);
  write_json(side, sidecar("sweep", cfg, {table, cells_path}));
}

void cmd_compare(const RunConfig& cfg, const Options& opts) {
  validate(cfg, "compare");
  const TimeSeries ts = read_timeseries_csv(*cfg.input);
  const auto pieces = pieces_of(ts, cfg.segment);
  const fs::path out = cfg.output_dir / (stem_of(cfg) + ".compare.json");
  const fs::path side = cfg.output_dir / (stem_of(cfg) + ".compare.sidecar.json");
  ensure_writable({out, side}, opts);

  const auto prepared = run_all<Prepared>(pieces.size(), [&](std::size_t k) { return prepare(pieces[k].ts, cfg.analysis); });
  if (!cfg.segment) rethrow_if_all_failed(prepared);

  const Method methods[2] = {Method::kNelderMead, Method::kProposed};
  json docs = json::array();
  for (std::size_t k = 0; k < pieces.size(); ++k) {
    json doc = {{"segment", cfg.segment ? piece_json(pieces[k]) : json(nullptr)}};
    if (!std::holds_alternative<Prepared>(prepared[k])) {
      doc["error"] = error_of(std::get<std::exception_ptr>(prepared[k]));
      docs.push_back(doc);
      continue;
    }
    const auto& prep = std::get<Prepared>(prepared[k]);
    doc["analysis"] = prepared_json(prep);
    const auto reps = run_all<FitReport>(2, [&](std::size_t m) { return run_method(methods[m], prep, cfg.pde, cfg.stop); });

    double e_min = std::numeric_limits<double>::infinity();
    for (const auto& r : reps) {
      if (const auto* rep = std::get_if<FitReport>(&r)) e_min = std::min(e_min, rep->cost_min);
    }
    doc["e_min"] = e_min;
    for (std::size_t m = 0; m < 2; ++m) {
      const char* name = method_name(methods[m]);
      if (const auto* rep = std::get_if<FitReport>(&reps[m])) {
        // Best energy so far minus the smallest cost either method reached.
        json curve = json::array();
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t e = 0; e < rep->eval_costs.size(); ++e) {
          best = std::min(best, rep->eval_costs[e]);
          curve.push_back({e + 1, best - e_min});
        }
        doc[name] = to_json(*rep);
        doc[name]["energy_error_curve"] = curve;
      } else {
        doc[name] = {{"error", error_of(std::get<std::exception_ptr>(reps[m]))}};
      }
    }
    const auto* nm = std::get_if<FitReport>(&reps[0]);
    const auto* prop = std::get_if<FitReport>(&reps[1]);
    if (nm && prop && nm->converged && prop->converged) {
      doc["eval_ratio"] = static_cast<double>(prop->residual_evals) / static_cast<double>(nm->residual_evals);
      doc["cost_agreement"] = std::abs(nm->cost_min - prop->cost_min) <= 1e-3 * (1.0 + e_min);
    }
    docs.push_back(doc);
  }
  json result = {{"input", cfg.input->string()}, {"results", docs}};
  write_json(out, result);
  write_json(side, sidecar("compare", cfg, {out}));
}

void cmd_report(const RunConfig& cfg, const Options& opts) {
  validate(cfg, "report");
  const TimeSeries ts = read_timeseries_csv(*cfg.input);
  const auto pieces = pieces_of(ts, cfg.segment);
  const fs::path out = cfg.output_dir / (stem_of(cfg) + ".report.csv");
  const fs::path side = cfg.output_dir / (stem_of(cfg) + ".report.json");
  ensure_writable({out, side}, opts);

  const double omega = cfg.analysis.omega ? *cfg.analysis.omega : dominant_frequency(ts);
  const auto reports = run_all<NoiseBalance>(pieces.size(), [&](std::size_t k) {
    return noise_balance_report(pieces[k].ts, *cfg.theta, omega);
  });
  rethrow_if_all_failed(reports);

  fmt::memory_buffer buf;
  fmt::format_to(std::back_inserter(buf),
                 "segment,t_start,t_end,mean_abs_lhs,noise_scale,ratio,ratio_infinite,amplitude_mean,amplitude_std,"
                 "amplitude_rel_dev,error\n");
  for (std::size_t k = 0; k < pieces.size(); ++k) {
    const auto& p = pieces[k];
    if (const auto* r = std::get_if<NoiseBalance>(&reports[k])) {
      fmt::format_to(std::back_inserter(buf), "{},{},{},{},{},{},{},{},{},{},\n", p.index, p.ts.t0,
                     p.ts.t0 + p.ts.duration(), r->mean_abs_lhs, r->noise_scale, format_number(r->ratio),
                     bool_text(r->ratio_infinite), r->amplitude_mean, r->amplitude_std, r->amplitude_rel_dev);
    } else {
      const auto err = error_of(std::get<std::exception_ptr>(reports[k]));
      fmt::format_to(std::back_inserter(buf), "{},{},{},nan,nan,nan,false,nan,nan,nan,{}\n", p.index, p.ts.t0,
                     p.ts.t0 + p.ts.duration(), err["kind"].get<std::string>());
    }
  }
  write_text(out, fmt::to_string(buf));
  json doc = sidecar("report", cfg, {out});
  doc["omega"] = omega;
  write_json(side, doc);
}

}  // namespace oscid::cli

#include "oscid/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string_view>
#include <vector>

#include <fmt/format.h>

namespace oscid {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_double(std::string_view s, double& v) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && ptr == s.data() + s.size();
}

template <typename Int>
bool parse_int(std::string_view s, Int& v) {
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return !s.empty() && ec == std::errc() && ptr == s.data() + s.size();
}

// Lines of a text file, with 1-based numbers; blank lines are skipped.
std::vector<std::pair<std::size_t, std::string_view>> lines_of(const std::string& text) {
  std::vector<std::pair<std::size_t, std::string_view>> out;
  std::string_view rest(text);
  std::size_t number = 0;
  while (!rest.empty()) {
    const auto pos = rest.find('\n');
    const auto line = trim(rest.substr(0, pos));
    ++number;
    if (!line.empty()) out.emplace_back(number, line);
    if (pos == std::string_view::npos) break;
    rest.remove_prefix(pos + 1);
  }
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{}", v);
}

TimeSeries parse_timeseries_csv(const std::string& text) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw ParseError(1, "empty file");
  {
    const auto header = split(lines.front().second);
    if (header.size() != 2 || lower(header[0]) != "time" || lower(header[1]) != "value") {
      throw ParseError(lines.front().first, "expected header 'time,value'");
    }
  }
  std::vector<double> t, x;
  t.reserve(lines.size());
  x.reserve(lines.size());
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto [number, line] = lines[k];
    const auto fields = split(line);
    if (fields.size() != 2) throw ParseError(number, fmt::format("expected 2 fields, found {}", fields.size()));
    double tv = 0.0, xv = 0.0;
    if (!parse_double(fields[0], tv) || !std::isfinite(tv)) {
      throw ParseError(number, fmt::format("invalid time '{}'", fields[0]));
    }
    if (!parse_double(fields[1], xv) || !std::isfinite(xv)) {
      throw ParseError(number, fmt::format("invalid value '{}'", fields[1]));
    }
    if (!t.empty()) {
      const double dt0 = t.size() >= 2 ? t[1] - t[0] : tv - t.back();
      if (!(dt0 > 0.0)) throw ParseError(number, "time must be strictly increasing");
      if (std::abs((tv - t.back()) - dt0) > 1e-6 * dt0) {
        throw ParseError(number, "sample spacing is not uniform (tolerance 1e-6 relative)");
      }
    }
    t.push_back(tv);
    x.push_back(xv);
  }
  if (t.size() < 2) throw ParseError(lines.back().first, "at least two samples are required");
  TimeSeries ts;
  ts.t0 = t.front();
  ts.dt = (t.back() - t.front()) / static_cast<double>(t.size() - 1);
  ts.samples = std::move(x);
  return ts;
}

TimeSeries read_timeseries_csv(const std::filesystem::path& path) { return parse_timeseries_csv(read_text(path)); }

std::string format_timeseries_csv(const TimeSeries& ts) {
  validate(ts);
  fmt::memory_buffer buf;
  fmt::format_to(std::back_inserter(buf), "time,value\n");
  for (std::size_t k = 0; k < ts.samples.size(); ++k) {
    fmt::format_to(std::back_inserter(buf), "{},{}\n", ts.time(k), ts.samples[k]);
  }
  return fmt::to_string(buf);
}

void write_timeseries_csv(const std::filesystem::path& path, const TimeSeries& ts) {
  write_text(path, format_timeseries_csv(ts));
}

std::string format_km_csv(const KmEstimates& km) {
  fmt::memory_buffer buf;
  fmt::format_to(std::back_inserter(buf), "n,i,j,a,tau,value,weight,pairs\n");
  const auto na = static_cast<Eigen::Index>(km.grid.n_a());
  const auto nt = static_cast<Eigen::Index>(km.grid.n_tau());
  for (int n = 1; n <= 2; ++n) {
    for (Eigen::Index i = 0; i < na; ++i) {
      for (Eigen::Index j = 0; j < nt; ++j) {
        const std::string value = km.missing(i, j) ? std::string() : format_number(km.d_hat(n)(i, j));
        fmt::format_to(std::back_inserter(buf), "{},{},{},{},{},{},{},{}\n", n, i, j,
                       km.grid.amplitudes[static_cast<std::size_t>(i)], km.grid.taus[static_cast<std::size_t>(j)],
                       value, km.weights(i, j), km.pair_counts(i, j));
      }
    }
  }
  return fmt::to_string(buf);
}

KmEstimates parse_km_csv(const std::string& text) {
  const auto lines = lines_of(text);
  if (lines.empty() || lines.front().second != "n,i,j,a,tau,value,weight,pairs") {
    throw ParseError(lines.empty() ? 1 : lines.front().first, "expected header 'n,i,j,a,tau,value,weight,pairs'");
  }
  struct Row {
    int n;
    std::size_t i, j;
    double a, tau, value, weight;
    std::int64_t pairs;
  };
  std::vector<Row> rows;
  std::size_t na = 0, nt = 0;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto [number, line] = lines[k];
    const auto f = split(line);
    if (f.size() != 8) throw ParseError(number, fmt::format("expected 8 fields, found {}", f.size()));
    Row r{};
    const bool ok = parse_int(f[0], r.n) && parse_int(f[1], r.i) && parse_int(f[2], r.j) && parse_double(f[3], r.a) &&
                    parse_double(f[4], r.tau) && (f[5].empty() || parse_double(f[5], r.value)) &&
                    parse_double(f[6], r.weight) && parse_int(f[7], r.pairs);
    if (!ok || (r.n != 1 && r.n != 2)) throw ParseError(number, "malformed KM row");
    if (f[5].empty()) r.value = std::numeric_limits<double>::quiet_NaN();
    na = std::max(na, r.i + 1);
    nt = std::max(nt, r.j + 1);
    rows.push_back(r);
  }
  if (rows.size() != 2 * na * nt) throw ParseError(lines.back().first, "KM table is incomplete");

  KmEstimates km;
  km.grid.amplitudes.assign(na, std::numeric_limits<double>::quiet_NaN());
  km.grid.taus.assign(nt, std::numeric_limits<double>::quiet_NaN());
  const auto nai = static_cast<Eigen::Index>(na);
  const auto nti = static_cast<Eigen::Index>(nt);
  km.d1_hat.setConstant(nai, nti, std::numeric_limits<double>::quiet_NaN());
  km.d2_hat.setConstant(nai, nti, std::numeric_limits<double>::quiet_NaN());
  km.weights.setZero(nai, nti);
  km.pair_counts.setZero(nai, nti);
  for (const auto& r : rows) {
    km.grid.amplitudes[r.i] = r.a;
    km.grid.taus[r.j] = r.tau;
    const auto i = static_cast<Eigen::Index>(r.i);
    const auto j = static_cast<Eigen::Index>(r.j);
    (r.n == 1 ? km.d1_hat : km.d2_hat)(i, j) = r.value;
    km.weights(i, j) = r.weight;
    km.pair_counts(i, j) = r.pairs;
  }
  validate(km);
  return km;
}

nlohmann::json to_json(const Theta& theta) {
  return {{"epsilon", theta.epsilon}, {"alpha", theta.alpha}, {"d", theta.d}};
}

Theta theta_from_json(const nlohmann::json& j) {
  return {j.at("epsilon").get<double>(), j.at("alpha").get<double>(), j.at("d").get<double>()};
}

nlohmann::json to_json(const FitReport& rep) {
  nlohmann::json traj = nlohmann::json::array();
  for (const auto& s : rep.trajectory) {
    traj.push_back({{"iteration", s.iteration},
                    {"theta", to_json(s.theta)},
                    {"lambda", s.lambda},
                    {"cost", s.cost},
                    {"residual_evals", s.residual_evals},
                    {"backtracks", s.backtracks}});
  }
  return {{"method", rep.method},
          {"theta_hat", to_json(rep.theta_hat)},
          {"cost_min", rep.cost_min},
          {"iterations", rep.iterations},
          {"residual_evals", rep.residual_evals},
          {"converged", rep.converged},
          {"message", rep.message},
          {"trajectory", traj}};
}

std::string format_trajectory_csv(const FitReport& rep) {
  fmt::memory_buffer buf;
  fmt::format_to(std::back_inserter(buf), "iteration,epsilon,alpha,d,lambda,cost,residual_evals,backtracks\n");
  for (const auto& s : rep.trajectory) {
    fmt::format_to(std::back_inserter(buf), "{},{},{},{},{},{},{},{}\n", s.iteration, s.theta.epsilon, s.theta.alpha,
                   s.theta.d, format_number(s.lambda), format_number(s.cost), s.residual_evals, s.backtracks);
  }
  return fmt::to_string(buf);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace oscid

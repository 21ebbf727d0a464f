#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "oscid/ident.hpp"
#include "oscid/km_estimator.hpp"
#include "oscid/sde_sim.hpp"

namespace oscid {

/// Two-column `time,value` CSV with a one-line header. Rows must be equally
/// spaced in time to one part in 1e6; ParseError names the offending line.
TimeSeries read_timeseries_csv(const std::filesystem::path& path);
TimeSeries parse_timeseries_csv(const std::string& text);
std::string format_timeseries_csv(const TimeSeries& ts);
void write_timeseries_csv(const std::filesystem::path& path, const TimeSeries& ts);

/// Columns `n,i,j,a,tau,value,weight,pairs`; missing entries have an empty
/// value field.
std::string format_km_csv(const KmEstimates& km);
KmEstimates parse_km_csv(const std::string& text);

nlohmann::json to_json(const Theta& theta);
Theta theta_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FitReport& rep);
std::string format_trajectory_csv(const FitReport& rep);

/// Writes text, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Shortest round-trip decimal form; "nan", "inf", "-inf" for non-finite.
std::string format_number(double v);

}  // namespace oscid

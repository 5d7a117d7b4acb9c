#pragma once

#include "nlm/seg2/model.hpp"
#include "nlm/seg3/charts.hpp"
#include "nlm/seg3/opened.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace nlm::io {

enum class System { Seg2, Seg3, Oracle };

std::string_view to_string(System s);

/// Everything a run needs. Built from a flat `key = value` file with
/// [sections]; every key is addressed as section.key.
struct RunConfig {
  System system = System::Seg3;
  std::string task = "pair";
  std::string output = "out";
  std::uint64_t seed = 1;

  seg2::Params params2;
  seg3::Params params3;

  // 2SEG
  double tau_ex = 1e-10;
  double tau_rows = 1e-9;     // unscaled exchange rows
  double tau_return = 1e-8;   // section-return defect
  double tau_drift = 1e-9;    // relative reduced-energy drift
  double support_amplitude = 0.9;
  double horizon_periods = 50.0;

  // 3SEG
  seg3::CertThresholds thresholds;
  double support_tolerance = 1e-9;
  std::optional<seg3::Sector> sector;  // unset: both
  bool poe_row_enabled = true;
  int m_cov = 1;
  seg3::Gauge gauge = seg3::Gauge::Modal;
  seg3::ChartKind chart = seg3::ChartKind::MeanSpeed;
  seg3::Representation representation = seg3::Representation::Shooting;
  bool collocation = true;
  std::size_t shooting_segments = 8;
  std::size_t collocation_intervals = 64;
  double alpha = 0.5;
  double v_probe = 0.05;
  double ds = 0.2;
  double lambda_end = 2.0;
  int max_steps = 40;

  // shared
  double vbar = 1.0;
  std::vector<double> speed_grid{-25, -20, -15, -10, -6, -3, -1, 1, 3, 6, 10, 15, 20, 25};
  std::vector<double> amplitudes;  // empty: system default ladder
  std::vector<double> k{0.0, 0.3, 0.5, 0.9};
  int trajectories = 100;

  /// Canonical key = value listing (sorted), the input of config_hash.
  std::string canonical() const;
};

/// Parse config text. Throws Error("config-error") with the line number on
/// syntax errors, unknown keys, or invalid values.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::string& path, RunConfig base = {});

/// Apply one `section.key=value` assignment.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Throws Error("config-error") when a tolerance is not positive or a flag is
/// out of range.
void validate(const RunConfig& cfg);

/// FNV-1a 64 of the canonical listing, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

/// Keys accepted by apply_setting.
std::vector<std::string> known_keys();

}  // namespace nlm::io

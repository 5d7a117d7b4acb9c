#pragma once

#include "json.hpp"
#include "nlm/io/config.hpp"
#include "nlm/seg2/opened.hpp"
#include "nlm/seg3/opened.hpp"

#include <string>
#include <vector>

namespace nlm::io {

inline constexpr const char* kToolVersion = "1.0.0";

/// One certificate row of one cycle, as written to certificates.csv.
struct CertRecord {
  std::string cycle_id;
  std::string system;
  std::string sector;  // "-" for 2SEG
  std::string row;
  std::string group;
  double value = 0.0;
  double scale = 1.0;
  double threshold = 0.0;
  bool gating = true;
  bool pass = false;
};

/// Time series of one accepted cycle.
struct PlotSeries {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct RunReport {
  nlohmann::ordered_json json;
  std::vector<CertRecord> certificates;
  std::vector<PlotSeries> cycles;
  int accepted = 0;
  int rejected = 0;
  bool gates_exit = false;  // task whose outcome sets the exit status
  bool pass = true;

  int exit_code() const { return gates_exit && !pass ? 1 : 0; }
};

/// Dispatch the configured task. Runtime rejections are recorded in the
/// report; configuration errors throw Error("config-error").
RunReport run(const RunConfig& cfg);

/// report.json, certificates.csv and cycles/<name>.csv under dir.
void write_report(const RunReport& report, const std::string& dir);

/// 17 significant digits.
std::string format_number(double x);

/// t, delta1, delta2, sigma1, sigma2, v, omega, E_perp, P_POE over one period
/// (n + 1 samples, both ends included).
PlotSeries plot_3seg(const seg3::Params& p, const seg3::LiftedCycle& c, const std::string& name, int n = 512);

/// t, delta, sigma, v, omega, E_perp, P_POE over one physical period.
PlotSeries plot_2seg(const seg2::Params& p, const seg2::Cycle& c, const std::string& name, int n = 512);

}  // namespace nlm::io

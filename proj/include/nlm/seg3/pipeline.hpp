#pragma once

#include "nlm/seg3/opened.hpp"

#include <optional>

namespace nlm::seg3 {

struct SearchOptions {
  BranchOptions branch;
  double v_probe = 0.05;  // carrier speed used to probe the exchange rate
  int probe_periods = 5;
  double vbar = 1.0;      // mean-speed target of the lifted cycle
  double alpha = 0.5;     // blended gauge weight
  std::size_t shooting_segments = 8;
  std::size_t collocation_intervals = 64;
  bool collocation = true;  // also solve the Hermite-Simpson representation
  Representation certify = Representation::Shooting;
  CertThresholds thresholds;
  bool poe_row_enabled = true;
};

struct SearchResult {
  Sector sector = Sector::IP;
  TransverseSupport support;  // support nearest the exchange balance
  double rate_before = 0.0, rate_after = 0.0;
  int branch_steps = 0;
  LiftResult lift;
  CycleSolveResult shooting;
  std::optional<CycleSolveResult> collocation;
  FinalCertificate certificate;
};

struct Bracket {
  TransverseSupport support;  // the bracketing support with the smaller |rate|
  double rate_before = 0.0, rate_after = 0.0;
  int branch_steps = 0;
};

/// Walk the support branch until the exchange rate changes sign. Throws
/// Error("no-exchange-balance") when the branch ends first.
Bracket bracket_support(const Params& p, const ParentModes& m, Sector s, const SearchOptions& opt = {});

/// Walk the support branch until the exchange rate changes sign, lift the
/// bracketing support with the mean-speed row, refine on the shooting (and
/// optionally collocation) representation and certify. Throws
/// Error("no-exchange-balance") when the branch ends without a sign change.
SearchResult find_moving_cycle(const Params& p, const ParentModes& m, Sector s, const SearchOptions& opt = {});

}  // namespace nlm::seg3

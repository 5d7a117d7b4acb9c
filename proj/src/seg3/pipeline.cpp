#include "nlm/seg3/pipeline.hpp"

#include "nlm/error.hpp"

#include <cmath>

namespace nlm::seg3 {

Bracket bracket_support(const Params& p, const ParentModes& m, Sector s, const SearchOptions& opt) {
  Bracket out;
  std::optional<TransverseSupport> prev, best;
  double prev_rate = NAN;
  support_branch(p, m, s, opt.branch, [&](const TransverseSupport& sup) {
    ++out.branch_steps;
    double rate;
    try {
      rate = exchange_rate(p, sup, opt.v_probe, opt.probe_periods);
    } catch (const Error&) {
      return true;
    }
    if (prev && std::isfinite(prev_rate) && rate * prev_rate < 0.0) {
      best = std::abs(rate) < std::abs(prev_rate) ? sup : *prev;
      out.rate_before = prev_rate;
      out.rate_after = rate;
      return false;
    }
    prev = sup;
    prev_rate = rate;
    return true;
  });
  if (!best) throw Error("no-exchange-balance", std::string(to_string(s)));
  out.support = *best;
  return out;
}

SearchResult find_moving_cycle(const Params& p, const ParentModes& m, Sector s, const SearchOptions& opt) {
  SearchResult out;
  out.sector = s;
  const Bracket br = bracket_support(p, m, s, opt);
  out.support = br.support;
  out.rate_before = br.rate_before;
  out.rate_after = br.rate_after;
  out.branch_steps = br.branch_steps;

  LiftOptions lo;
  lo.vbar_target = opt.vbar;
  lo.v_sc = std::max(std::abs(opt.vbar), 1.0);
  out.lift = lift_support(p, m, out.support, Vec2(opt.vbar, 0.0), lo);

  CycleSolveOptions co;
  co.vbar_target = opt.vbar;
  co.v_sc = lo.v_sc;
  co.alpha = opt.alpha;
  out.shooting = solve_shooting(p, m, resample(p, out.lift.cycle, Representation::Shooting, opt.shooting_segments), co);
  if (opt.collocation) {
    CycleSolveOptions cc = co;
    cc.tolerance = 1e-9;
    out.collocation = solve_collocation(
        p, m, resample(p, out.shooting.cycle, Representation::Collocation, opt.collocation_intervals), cc);
  }

  const CycleSolveResult& rep =
      opt.certify == Representation::Collocation && out.collocation ? *out.collocation : out.shooting;
  CertificateOptions copt;
  copt.poe_row_enabled = opt.poe_row_enabled;
  copt.thresholds = opt.thresholds;
  copt.R_rep = rep.R_rep;
  copt.R_ph = rep.R_ph;
  copt.R_vbar = rep.R_vbar;
  out.certificate = assemble_final_certificate(p, m, rep.cycle, s, copt);
  return out;
}

}  // namespace nlm::seg3

#include "nlm/io/run.hpp"

#include "nlm/error.hpp"
#include "nlm/numerics/quadrature.hpp"
#include "nlm/seg2/support.hpp"
#include "nlm/seg3/charts.hpp"
#include "nlm/seg3/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

namespace nlm::io {

using nlohmann::ordered_json;

std::string format_number(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace {

// JSON cannot hold NaN/inf; they become null.
ordered_json num(double x) { return std::isfinite(x) ? ordered_json(x) : ordered_json(nullptr); }

ordered_json vec_json(const Eigen::VectorXd& v) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
  return a;
}

ordered_json params_json(const seg2::Params& p) {
  return {{"epsilon", p.epsilon}, {"gamma", p.gamma}, {"k2", p.k2}, {"k4", p.k4}};
}

ordered_json params_json(const seg3::Params& p) {
  return {{"I1", p.I1},   {"I2", p.I2},     {"I3", p.I3},     {"l1", p.l1},     {"L2", p.L2},
          {"L3", p.L3},   {"m1", p.m1},     {"m2", p.m2},     {"m3", p.m3},     {"k12", p.k12},
          {"k2_1", p.k2_1}, {"k2_2", p.k2_2}, {"k4_1", p.k4_1}, {"k4_2", p.k4_2}, {"u1", p.u1},
          {"u2", p.u2}};
}

double pose_metric(double dx, double dy, double dth) { return std::hypot(dx, dy) + 0.1 * std::abs(dth); }

// ---------------------------------------------------------------------------
// 2SEG

struct Row2 {
  const char* name;
  const char* group;
  double value, threshold;
};

void record_2seg(RunReport& rep, const RunConfig& cfg, const std::string& id, const seg2::SolveOutcome& o,
                 ordered_json& entry, bool& all_pass) {
  entry["vbar"] = o.vbar;
  entry["accepted"] = o.accepted;
  entry["reason"] = o.reason;
  entry["iterations"] = o.iterations;
  entry["Y0"] = vec_json(o.Y0);
  entry["scaled_norm"] = num(o.residual.scaled_norm);
  if (!o.accepted || !o.cycle) {
    ++rep.rejected;
    all_pass = false;
    return;
  }
  const seg2::Cycle& c = *o.cycle;
  const double defect = (c.Y_plus - c.Y0).cwiseAbs().maxCoeff();
  const double dg = pose_metric(c.dg.dx, c.dg.dy, c.dg.dtheta);
  const Row2 rows[] = {
      {"scaled_norm", "rep", c.residual.scaled_norm, cfg.tau_ex},
      {"I_POE", "mech", c.residual.I_POE, cfg.tau_rows},
      {"C_u", "mech", c.residual.C_u, cfg.tau_rows},
      {"C_Q", "mech", c.residual.C_Q, cfg.tau_rows},
      {"S", "mech", c.residual.S, cfg.tau_rows},
      {"return_defect", "mech", defect, cfg.tau_return},
      {"energy_drift", "mech", c.energy_drift, cfg.tau_drift},
      {"R_g", "phys", std::max(0.0, cfg.thresholds.d_min - dg), 0.0},
  };
  bool pass = true;
  ordered_json jrows = ordered_json::array();
  for (const Row2& r : rows) {
    const bool ok = std::isfinite(r.value) && std::abs(r.value) <= r.threshold;
    pass = pass && ok;
    rep.certificates.push_back({id, "2seg", "-", r.name, r.group, r.value, 1.0, r.threshold, true, ok});
    jrows.push_back({{"row", r.name}, {"group", r.group}, {"value", num(r.value)}, {"threshold", r.threshold},
                     {"pass", ok}});
  }
  entry["id"] = id;
  entry["construction"] = {{"tau", c.tau}, {"Y0", vec_json(c.Y0)}};
  entry["certificate"] = jrows;
  entry["locomotion"] = {{"vbar", c.vbar}, {"dx", c.dg.dx}, {"dy", c.dg.dy}, {"dtheta", c.dg.dtheta}, {"d_g", dg}};
  entry["pass"] = pass;
  if (pass) {
    ++rep.accepted;
    rep.cycles.push_back(plot_2seg(cfg.params2, c, id));
  } else {
    ++rep.rejected;
    all_pass = false;
  }
}

seg2::SolveOptions solve_options_2seg(const RunConfig& cfg) {
  seg2::SolveOptions o;
  o.tau_ex = cfg.tau_ex;
  o.horizon_periods = cfg.horizon_periods;
  return o;
}

void run_2seg(const RunConfig& cfg, RunReport& rep) {
  const seg2::Params& p = cfg.params2;
  rep.json["params"] = params_json(p);
  if (cfg.task == "support") {
    const std::vector<double> amps = cfg.amplitudes.empty() ? std::vector<double>{0.1, 0.3, 0.6} : cfg.amplitudes;
    ordered_json list = ordered_json::array();
    for (double A : amps) {
      ordered_json e{{"A", A}};
      try {
        const seg2::ScalarSupport s = seg2::build_support(p, A);
        const double T_event = seg2::closed_period(p, s.sigma_at_section(p));
        const double rel = std::abs(T_event - s.T_L) / s.T_L;
        e["E_perp"] = s.E_perp;
        e["T_L"] = s.T_L;
        e["J_L"] = s.J_L;
        e["R_supp"] = s.R_supp;
        e["T_event"] = T_event;
        e["period_rel_diff"] = rel;
        e["pass"] = rel <= 1e-8;
        rep.pass = rep.pass && rel <= 1e-8;
        ++rep.accepted;
      } catch (const Error& err) {
        e["error"] = err.what();
        rep.pass = false;
        ++rep.rejected;
      }
      list.push_back(e);
    }
    rep.json["supports"] = list;
    return;
  }

  const seg2::ScalarSupport seed = seg2::build_support(p, cfg.support_amplitude);
  rep.json["seed"] = {{"A", seed.A}, {"E_perp", seed.E_perp}, {"T_L", seed.T_L}};
  const seg2::SolveOptions opt = solve_options_2seg(cfg);
  std::vector<seg2::SolveOutcome> outcomes;
  if (cfg.task == "solve") {
    rep.gates_exit = true;
    outcomes.push_back(seg2::solve_cycle(p, cfg.vbar, seed, opt));
  } else if (cfg.task == "continue" || cfg.task == "certify") {
    rep.gates_exit = cfg.task == "certify";
    outcomes = seg2::continue_in_speed(p, cfg.speed_grid, seed, opt);
  } else {
    throw Error("config-error", "unknown 2seg task '" + cfg.task + "'");
  }
  ordered_json list = ordered_json::array();
  bool all = true;
  int k = 0;
  for (const seg2::SolveOutcome& o : outcomes) {
    ordered_json e;
    char id[48];
    std::snprintf(id, sizeof id, "2seg_%02d_v%+.4g", k++, o.vbar);
    record_2seg(rep, cfg, id, o, e, all);
    list.push_back(e);
  }
  rep.json["cycles"] = list;
  rep.pass = all;
}

// ---------------------------------------------------------------------------
// 3SEG

std::vector<seg3::Sector> sectors_of(const RunConfig& cfg) {
  if (cfg.sector) return {*cfg.sector};
  return {seg3::Sector::IP, seg3::Sector::AP};
}

seg3::SearchOptions search_options(const RunConfig& cfg) {
  seg3::SearchOptions o;
  o.v_probe = cfg.v_probe;
  o.vbar = cfg.vbar;
  o.alpha = cfg.alpha;
  o.shooting_segments = cfg.shooting_segments;
  o.collocation_intervals = cfg.collocation_intervals;
  o.collocation = cfg.collocation;
  o.certify = cfg.representation;
  o.thresholds = cfg.thresholds;
  o.poe_row_enabled = cfg.poe_row_enabled;
  o.branch.support.support_tolerance = cfg.support_tolerance;
  return o;
}

ordered_json features_json(const seg3::ModalFeatures& f) {
  return {{"A2_IP", f.activity(0)}, {"A2_AP", f.activity(1)}, {"rho_IP", f.share(0)}, {"rho_AP", f.share(1)},
          {"phi_rel", f.phi_rel},   {"c_corr", f.c_corr},     {"s_sign", f.s_sign},   {"R_id_IP", f.R_id(0)},
          {"R_id_AP", f.R_id(1)}};
}

ordered_json certificate_json(const seg3::FinalCertificate& c) {
  ordered_json rows = ordered_json::array();
  for (const seg3::CertRow& r : c.rows)
    rows.push_back({{"row", r.name},
                    {"group", r.group},
                    {"value", num(r.value)},
                    {"scaled", num(r.scaled())},
                    {"threshold", r.threshold},
                    {"evaluated", r.evaluated},
                    {"gating", r.gating},
                    {"pass", r.pass}});
  ordered_json trace = ordered_json::array();
  for (const std::string& t : c.trace) trace.push_back(t);
  return {{"sector", std::string(seg3::to_string(c.sector))},
          {"representation", std::string(seg3::to_string(c.representation))},
          {"label", c.label},
          {"pass", c.pass},
          {"poe_row_enabled", c.poe_row_enabled},
          {"construction", {{"T", c.T}, {"features", features_json(c.features)}, {"A_nonv_ptp", c.A_nonv_ptp}}},
          {"certificate",
           {{"rows", rows},
            {"trace", trace},
            {"Psi_POE", num(c.Psi_POE)},
            {"energy_drift", num(c.energy_drift)},
            {"Eperp_min", num(c.Eperp_min)},
            {"Eperp_max", num(c.Eperp_max)}}},
          {"locomotion",
           {{"vbar", c.vbar},
            {"dx", c.dg.dx},
            {"dy", c.dg.dy},
            {"dtheta", c.dg.dtheta},
            {"d_g", c.d_g},
            {"pose_evaluated", c.pose_evaluated}}}};
}

void record_3seg(RunReport& rep, const seg3::Params& p, const std::string& id, const seg3::LiftedCycle& cycle,
                 const seg3::FinalCertificate& c) {
  for (const seg3::CertRow& r : c.rows)
    rep.certificates.push_back({id, "3seg", std::string(seg3::to_string(c.sector)), r.name, r.group, r.value, r.scale,
                                r.threshold, r.gating, r.pass});
  if (c.pass) {
    ++rep.accepted;
    rep.cycles.push_back(plot_3seg(p, cycle, id));
  } else {
    ++rep.rejected;
  }
}

struct SectorOutcome {
  bool found = false;
  seg3::LiftedCycle cycle;
  seg3::FinalCertificate cert;
  ordered_json json;
};

// AP cycles may be re-solved on a three-period cover; the certificate is
// always evaluated on the projected single period.
SectorOutcome certify_sector(const RunConfig& cfg, const seg3::ParentModes& m, seg3::Sector s) {
  const seg3::Params& p = cfg.params3;
  SectorOutcome out;
  out.json["sector"] = std::string(seg3::to_string(s));
  seg3::SearchResult r;
  try {
    r = seg3::find_moving_cycle(p, m, s, search_options(cfg));
  } catch (const Error& e) {
    out.json["error"] = e.what();
    return out;
  }
  out.found = true;
  out.json["search"] = {{"branch_steps", r.branch_steps},
                        {"support_A", r.support.A},
                        {"support_T", r.support.T},
                        {"rate_before", r.rate_before},
                        {"rate_after", r.rate_after},
                        {"lift_scaled_norm", r.lift.scaled_norm},
                        {"lift_T", r.lift.cycle.T},
                        {"shooting_scaled_norm", r.shooting.scaled_norm},
                        {"shooting_R_ms", r.shooting.R_rep},
                        {"shooting_T", r.shooting.cycle.T}};
  if (r.collocation) {
    const seg3::DenseCycle hs(p, r.collocation->cycle);
    const seg3::RhsCheck rc = seg3::rhs_check(p, hs);
    out.json["collocation"] = {{"N", cfg.collocation_intervals},
                               {"scaled_norm", r.collocation->scaled_norm},
                               {"R_BVP", r.collocation->R_rep},
                               {"T", r.collocation->cycle.T},
                               {"R_rhs_fin", rc.full},
                               {"R_rhs_int", rc.interior}};
  }
  out.cycle = cfg.representation == seg3::Representation::Collocation && r.collocation ? r.collocation->cycle
                                                                                       : r.shooting.cycle;
  out.cert = r.certificate;

  if (cfg.m_cov == 3 && s == seg3::Sector::AP) {
    seg3::CycleSolveOptions co;
    co.vbar_target = cfg.vbar;
    co.v_sc = std::max(std::abs(cfg.vbar), 1.0);
    co.alpha = cfg.alpha;
    const seg3::CycleSolveResult cover =
        seg3::solve_shooting(p, m, seg3::ap_cover(r.shooting.cycle, 3), co);
    const seg3::LiftedCycle projected = seg3::project_cover(cover.cycle, 3);
    seg3::CertificateOptions copt;
    copt.poe_row_enabled = cfg.poe_row_enabled;
    copt.thresholds = cfg.thresholds;
    copt.R_ph = cover.R_ph;
    copt.R_vbar = cover.R_vbar;
    const seg3::FinalCertificate pc = seg3::assemble_final_certificate(p, m, projected, s, copt);
    out.json["cover"] = {{"m_cov", 3},
                         {"T_cover", cover.cycle.T},
                         {"scaled_norm", cover.scaled_norm},
                         {"T_projected", projected.T},
                         {"dT_vs_single", projected.T - out.cert.T},
                         {"dvbar_vs_single", pc.vbar - out.cert.vbar},
                         {"dd_g_vs_single", pc.d_g - out.cert.d_g}};
    out.cycle = projected;
    out.cert = pc;
  }
  out.json["result"] = certificate_json(out.cert);
  return out;
}

ordered_json modes_json(const seg3::Params& p, const seg3::ParentModes& m) {
  const Eigen::Matrix2d G = m.U.transpose() * m.M0 * m.U - Eigen::Matrix2d::Identity();
  Eigen::Matrix2d E;
  for (int j = 0; j < 2; ++j) E.col(j) = m.K0 * m.U.col(j) - m.Omega(j) * m.Omega(j) * m.M0 * m.U.col(j);
  const seg3::Mat4 M = seg3::assemble_mass_matrix(p, 0.0, 0.0);
  return {{"Omega2_IP", m.Omega(0) * m.Omega(0)},
          {"Omega2_AP", m.Omega(1) * m.Omega(1)},
          {"T_lin_IP", 2.0 * std::numbers::pi / m.Omega(0)},
          {"T_lin_AP", 2.0 * std::numbers::pi / m.Omega(1)},
          {"u_IP", vec_json(m.U.col(0))},
          {"u_AP", vec_json(m.U.col(1))},
          {"orthonormality_residual", G.cwiseAbs().maxCoeff()},
          {"eigen_residual", E.cwiseAbs().maxCoeff()},
          {"mass_vv", M(0, 0)},
          {"mass_symmetry", (M - M.transpose()).cwiseAbs().maxCoeff()},
          {"Mperp0_min_eig", Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(m.M0).eigenvalues()(0)}};
}

// Seeds for a chart: the found cycle and one neighbour solved slightly
// behind it in lambda, so the secant points toward lambda_end.
struct ChartSeeds {
  seg3::ContinuationChart chart;
  seg3::ChartPoint prev, cur;
};

ChartSeeds chart_seeds(const RunConfig& cfg, const seg3::ParentModes& m, seg3::Sector s, const seg3::LiftedCycle& c) {
  const seg3::Params& p = cfg.params3;
  ChartSeeds out;
  seg3::ContinuationChart& ch = out.chart;
  ch.kind = cfg.chart;
  ch.sector = s;
  ch.alpha_gauge = cfg.alpha;
  const seg3::ChartFunctionals fn = seg3::chart_functionals(p, m, c);
  ch.v_sc = std::max(std::abs(fn.vbar), 1.0);
  ch.psi_sc = std::max(std::abs(fn.Psi), 1.0);
  ch.a_sc = std::max(fn.A_nonv, 1.0);

  // speed neighbour for the charts that derive their reference from it
  auto speed_neighbour = [&](double dv) {
    seg3::ContinuationChart speed;
    speed.kind = seg3::ChartKind::MeanSpeed;
    speed.sector = s;
    speed.v_sc = ch.v_sc;
    speed.alpha_gauge = cfg.alpha;
    return seg3::solve_chart(m, speed, {c, fn.vbar + dv, p}).point;
  };

  out.cur = {c, 0.0, p};
  switch (cfg.chart) {
    case seg3::ChartKind::MeanSpeed:
    case seg3::ChartKind::PoeConstrained:
    case seg3::ChartKind::NonvActivity:
    case seg3::ChartKind::ModalFloor: {
      auto lambda_of = [&](const seg3::ChartFunctionals& f) {
        return cfg.chart == seg3::ChartKind::NonvActivity ? f.A_nonv
               : cfg.chart == seg3::ChartKind::ModalFloor ? f.A_modal(static_cast<int>(s))
                                                          : f.vbar;
      };
      // the neighbour comes from the speed chart, whose row is well conditioned;
      // it must sit on the far side of cur from lambda_end
      out.cur.lambda = lambda_of(fn);
      for (double dv : {-0.01, 0.01}) {
        out.prev = speed_neighbour(dv);
        out.prev.lambda = lambda_of(seg3::chart_functionals(p, m, out.prev.cycle));
        if ((cfg.lambda_end - out.cur.lambda) * (out.cur.lambda - out.prev.lambda) > 0.0) break;
      }
      break;
    }
    case seg3::ChartKind::BranchTangent:
    case seg3::ChartKind::Secant: {
      const seg3::ChartPoint nb = speed_neighbour(-0.01);
      const seg3::ChartFunctionals fb = seg3::chart_functionals(p, m, nb.cycle);
      if (cfg.chart == seg3::ChartKind::BranchTangent) {
        ch.w_br = seg3::chart_unknowns(c);
        ch.tau_br = ch.w_br - seg3::chart_unknowns(nb.cycle);
      } else {
        ch.vbar0 = fn.vbar;
        ch.dvbar = fn.vbar - fb.vbar;
        ch.A0 = fn.A_nonv;
        ch.dA = fn.A_nonv - fb.A_nonv;
      }
      out.prev = {nb.cycle, -1.0, p};
      break;
    }
    case seg3::ChartKind::PhysicalHomotopy: {
      ch.theta_src = p;
      ch.theta_dst = seg3::Params{};  // frozen architecture
      if (p == ch.theta_dst) throw Error("homotopy-trivial", "configured parameters already equal the destination");
      ch.vbar_hold = fn.vbar;
      // a tiny step back in alpha gives the secant
      const seg3::StepResult back = seg3::solve_chart(m, ch, {c, -1e-3, p});
      out.prev = back.point;
      break;
    }
  }
  return out;
}

void run_3seg(const RunConfig& cfg, RunReport& rep) {
  const seg3::Params& p = cfg.params3;
  rep.json["params"] = params_json(p);
  const seg3::ParentModes m = seg3::solve_parent_modes(p);
  rep.json["modes"] = modes_json(p, m);

  if (cfg.task == "modes") return;

  if (cfg.task == "support") {
    const std::vector<double> amps = cfg.amplitudes.empty() ? std::vector<double>{0.05, 0.1, 0.2} : cfg.amplitudes;
    seg3::SupportOptions so;
    so.gauge = cfg.gauge;
    so.support_tolerance = cfg.support_tolerance;
    ordered_json list = ordered_json::array();
    for (seg3::Sector s : sectors_of(cfg)) {
      const auto ladder = seg3::support_ladder(p, m, s, amps, so);
      for (std::size_t i = 0; i < amps.size(); ++i) {
        ordered_json e{{"sector", std::string(seg3::to_string(s))}, {"A", amps[i]}};
        if (i < ladder.size()) {
          const seg3::TransverseSupport& t = ladder[i];
          e["T"] = t.T;
          e["T_lin"] = 2.0 * std::numbers::pi / m.omega(s);
          e["R_supp"] = t.R_supp;
          e["R_E"] = t.R_E;
          e["R_ph"] = t.R_ph;
          e["y0"] = vec_json(t.y0);
          e["features"] = features_json(seg3::compute_modal_features(m, seg3::sample_support(p, t.y0, t.T)));
          ++rep.accepted;
        } else {
          e["error"] = "support-open";
          ++rep.rejected;
        }
        list.push_back(e);
      }
    }
    rep.json["supports"] = list;
    return;
  }

  if (cfg.task == "lift") {
    rep.gates_exit = true;
    ordered_json list = ordered_json::array();
    for (seg3::Sector s : sectors_of(cfg)) {
      ordered_json e{{"sector", std::string(seg3::to_string(s))}};
      try {
        const seg3::SearchOptions so = search_options(cfg);
        const seg3::Bracket br = seg3::bracket_support(p, m, s, so);
        seg3::LiftOptions lo;
        lo.vbar_target = cfg.vbar;
        lo.v_sc = std::max(std::abs(cfg.vbar), 1.0);
        const seg3::LiftResult lr = seg3::lift_support(p, m, br.support, seg3::Vec2(cfg.vbar, 0.0), lo);
        e["support_A"] = br.support.A;
        e["support_T"] = br.support.T;
        e["T"] = lr.cycle.T;
        e["scaled_norm"] = lr.scaled_norm;
        e["R_car"] = lr.R_car;
        e["y0"] = vec_json(lr.y0);
        e["qc0"] = vec_json(lr.qc0);
        ++rep.accepted;
      } catch (const Error& err) {
        e["error"] = err.what();
        rep.pass = false;
        ++rep.rejected;
      }
      list.push_back(e);
    }
    rep.json["lifts"] = list;
    return;
  }

  if (cfg.task == "certify" || cfg.task == "pair") {
    rep.gates_exit = true;
    std::vector<SectorOutcome> outs;
    ordered_json list = ordered_json::array();
    for (seg3::Sector s : cfg.task == "pair" ? std::vector<seg3::Sector>{seg3::Sector::IP, seg3::Sector::AP}
                                             : sectors_of(cfg)) {
      SectorOutcome o = certify_sector(cfg, m, s);
      if (o.found) {
        const std::string id = "3seg_" + std::string(seg3::to_string(s));
        o.json["id"] = id;
        record_3seg(rep, p, id, o.cycle, o.cert);
      } else {
        ++rep.rejected;
      }
      rep.pass = rep.pass && o.found && o.cert.pass;
      list.push_back(o.json);
      outs.push_back(std::move(o));
    }
    rep.json["cycles"] = list;
    if (cfg.task == "pair") {
      ordered_json pj;
      if (outs[0].found && outs[1].found) {
        const seg3::PairedCertificate pc =
            seg3::paired_certificate(p, outs[0].cert, outs[1].cert, cfg.thresholds.d_min);
        ordered_json rows = ordered_json::array();
        for (const seg3::CertRow& r : pc.rows) {
          rows.push_back({{"row", r.name}, {"group", r.group}, {"value", num(r.value)}, {"threshold", r.threshold},
                          {"pass", r.pass}});
          rep.certificates.push_back({"pair", "3seg", "IP+AP", r.name, r.group, r.value, 1.0, r.threshold, true,
                                      r.pass});
        }
        ordered_json fails = ordered_json::array();
        for (const std::string& f : pc.failures) fails.push_back(f);
        pj = {{"pass", pc.pass}, {"rows", rows}, {"failures", fails}};
        rep.pass = pc.pass;
      } else {
        pj = {{"pass", false}, {"failures", {"missing-sector-cycle"}}};
        rep.pass = false;
      }
      rep.json["pair"] = pj;
    }
    return;
  }

  if (cfg.task == "continue") {
    ordered_json list = ordered_json::array();
    for (seg3::Sector s : sectors_of(cfg)) {
      ordered_json e{{"sector", std::string(seg3::to_string(s))}, {"chart", std::string(seg3::to_string(cfg.chart))}};
      SectorOutcome o = certify_sector(cfg, m, s);
      if (!o.found) {
        e["error"] = o.json.value("error", "no cycle");
        ++rep.rejected;
        list.push_back(e);
        continue;
      }
      // continuation runs on the shooting representation
      const seg3::LiftedCycle start =
          o.cycle.representation == seg3::Representation::Shooting
              ? o.cycle
              : seg3::resample(p, o.cycle, seg3::Representation::Shooting, cfg.shooting_segments);
      ordered_json pts = ordered_json::array();
      try {
        const ChartSeeds seeds = chart_seeds(cfg, m, s, start);
        seg3::CertificateOptions copt;
        copt.poe_row_enabled = cfg.poe_row_enabled;
        copt.thresholds = cfg.thresholds;
        int k = 0;
        auto visit = [&](const seg3::ChartPoint& q) {
          const seg3::FinalCertificate c = seg3::assemble_final_certificate(q.params, m, q.cycle, s, copt);
          char id[64];
          std::snprintf(id, sizeof id, "3seg_%s_%s_%03d", std::string(seg3::to_string(s)).c_str(),
                        std::string(seg3::to_string(cfg.chart)).c_str(), k++);
          // homotopy cycles are certified only once they reach the frozen architecture
          const bool reportable = cfg.chart != seg3::ChartKind::PhysicalHomotopy || q.params == seg3::Params{};
          ordered_json pt{{"id", id},       {"lambda", q.lambda}, {"T", c.T},         {"vbar", c.vbar},
                          {"d_g", c.d_g},   {"Psi_POE", num(c.Psi_POE)},  {"label", c.label}, {"pass", c.pass},
                          {"reportable", reportable}};
          if (reportable) record_3seg(rep, q.params, id, q.cycle, c);
          pts.push_back(pt);
          return true;
        };
        // the homotopy fraction never goes past the destination physics
        const double lambda_end =
            cfg.chart == seg3::ChartKind::PhysicalHomotopy ? std::min(cfg.lambda_end, 1.0) : cfg.lambda_end;
        const auto branch =
            seg3::continue_chart(m, seeds.chart, seeds.prev, seeds.cur, cfg.ds, lambda_end, cfg.max_steps, visit);
        if (cfg.chart == seg3::ChartKind::PhysicalHomotopy && branch.back().lambda >= 1.0) {
          // land exactly on the destination physics
          seg3::ChartPoint guess = branch.back();
          guess.lambda = 1.0;
          const seg3::StepResult end = seg3::solve_chart(m, seeds.chart, guess);
          const seg3::FinalCertificate c =
              seg3::assemble_final_certificate(end.point.params, m, end.point.cycle, s, copt);
          record_3seg(rep, end.point.params, "3seg_" + std::string(seg3::to_string(s)) + "_homotopy_end", end.point.cycle,
                      c);
          e["homotopy_end"] = certificate_json(c);
        }
        e["steps"] = static_cast<int>(branch.size()) - 2;
      } catch (const Error& err) {
        e["error"] = err.what();
      }
      e["points"] = pts;
      list.push_back(e);
    }
    rep.json["branches"] = list;
    return;
  }

  throw Error("config-error", "unknown 3seg task '" + cfg.task + "'");
}

// ---------------------------------------------------------------------------
// Oracles

void run_oracle(const RunConfig& cfg, RunReport& rep) {
  rep.gates_exit = true;
  if (cfg.task == "pendulum") {
    ordered_json list = ordered_json::array();
    for (double k : cfg.k) {
      const seg2::PendulumResult cf = seg2::pendulum_oracle(k);
      double Tq = 2.0 * std::numbers::pi, Jq = 0.0;
      if (k > 0.0) {
        const double th = 2.0 * std::asin(k), c0 = std::cos(th);
        // sin(theta/2) = k sin(phi) removes the turning-point singularity of the period integral
        Tq = 4.0 * num::quad([&](double ph) { return 1.0 / std::sqrt(1.0 - k * k * std::sin(ph) * std::sin(ph)); }, 0.0,
                             std::numbers::pi / 2);
        // J = (1/2pi) closed-loop momentum integral
        Jq = 4.0 * std::sqrt(2.0) / (2.0 * std::numbers::pi) *
             num::quad_endpoint([&](double x) { return std::sqrt(std::max(std::cos(x) - c0, 0.0)); }, 0.0, th);
      }
      const double dT = std::abs(Tq - cf.T) / cf.T;
      const double dJ = std::abs(Jq - cf.J) / std::max(std::abs(cf.J), 1.0);
      const bool ok = dT <= 1e-10 && dJ <= 1e-10;
      rep.pass = rep.pass && ok;
      list.push_back({{"k", k}, {"T_closed", cf.T}, {"T_quad", Tq}, {"J_closed", cf.J}, {"J_quad", Jq},
                      {"T_rel_diff", dT}, {"J_diff", dJ}, {"pass", ok}});
      rep.certificates.push_back({"pendulum_k" + format_number(k), "oracle", "-", "T_rel_diff", "oracle", dT, 1.0,
                                  1e-10, true, dT <= 1e-10});
      rep.certificates.push_back({"pendulum_k" + format_number(k), "oracle", "-", "J_diff", "oracle", dJ, 1.0, 1e-10,
                                  true, dJ <= 1e-10});
    }
    rep.json["pendulum"] = list;
    return;
  }

  if (cfg.task == "schur") {
    const seg3::Params& p = cfg.params3;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> ang(-0.5, 0.5), rate(-3.0, 3.0);
    double worst_schur = 0.0, worst_sym = 0.0, worst_E = 0.0, min_eig = INFINITY;
    for (int i = 0; i < cfg.trajectories; ++i) {
      const double d1 = i == 0 ? 0.0 : ang(rng), d2 = i == 0 ? 0.0 : ang(rng);
      const seg3::SchurLayer s = seg3::eval_schur_layer(p, d1, d2);
      const seg3::Mat4 M = seg3::assemble_mass_matrix(p, d1, d2);
      const Eigen::Matrix2d direct =
          M.block<2, 2>(2, 2) - M.block<2, 2>(2, 0) * M.block<2, 2>(0, 0).inverse() * M.block<2, 2>(0, 2);
      worst_schur = std::max(worst_schur, (s.Mperp - direct).cwiseAbs().maxCoeff() / direct.cwiseAbs().maxCoeff());
      worst_sym = std::max(worst_sym, (M - M.transpose()).cwiseAbs().maxCoeff());
      min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(s.Mperp).eigenvalues()(0));
      const seg3::Vec2 sig(rate(rng), rate(rng));
      const double E = seg3::eval_Eperp(p, seg3::Vec2(d1, d2), sig);
      const double E_direct = 0.5 * sig.dot(direct * sig) + seg3::eval_potential(p, d1, d2).V;
      worst_E = std::max(worst_E, std::abs(E - E_direct) / std::max(std::abs(E_direct), 1.0));
    }
    const bool ok = worst_schur <= 1e-12 && worst_sym == 0.0 && min_eig > 0.0 && worst_E <= 1e-12;
    rep.pass = ok;
    rep.json["schur"] = {{"samples", cfg.trajectories}, {"max_rel_schur_diff", worst_schur},
                         {"max_mass_asymmetry", worst_sym}, {"min_Mperp_eig", min_eig},
                         {"max_Eperp_diff", worst_E},      {"pass", ok}};
    rep.certificates.push_back({"schur", "oracle", "-", "max_rel_schur_diff", "oracle", worst_schur, 1.0, 1e-12, true,
                                worst_schur <= 1e-12});
    rep.certificates.push_back({"schur", "oracle", "-", "max_Eperp_diff", "oracle", worst_E, 1.0, 1e-12, true,
                                worst_E <= 1e-12});
    return;
  }

  if (cfg.task == "energy") {
    // Psi identity on random opened 2SEG trajectories, plus closed-leaf
    // conservation of E_perp for both models.
    const seg2::Params& p2 = cfg.params2;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> zeta(0.3, 1.5), u(0.5, 2.0), Q(-0.5, 0.5), speed(1.0, 10.0),
        horizon(0.5, 3.0), coin(0.0, 1.0);
    double worst_psi = 0.0, worst_red = 0.0;
    int done = 0, tries = 0;
    while (done < cfg.trajectories && tries < 50 * cfg.trajectories) {
      ++tries;
      const double vbar = (coin(rng) < 0.5 ? -1.0 : 1.0) * speed(rng);
      const seg2::SpeedScale sp = seg2::SpeedScale::from_vbar(vbar);
      const seg2::SectionState Y0(0.0, zeta(rng), u(rng), Q(rng));
      const double H = horizon(rng);
      const num::Field f = [&](double, const num::Vec& y, num::Vec& dy) { dy = seg2::oriented_rhs(p2, y.head<4>(), sp); };
      const num::Accumulator acc[] = {{"P", [&](double, const num::Vec& y) {
                                         return sp.s * seg2::opened_rows(p2, y(0), sp.s * y(1), sp.s * y(2), sp.s * y(3),
                                                                         sp.h)
                                                           .P_POE;
                                       }}};
      try {
        const num::Trajectory tr = num::integrate(f, num::Vec(Y0), 0.0, H, {}, acc);
        const seg2::SectionState YT = tr.final_state().head<4>();
        const double jump = seg2::Eperp_of(p2, YT, sp) - seg2::Eperp_of(p2, Y0, sp);
        worst_psi = std::max(worst_psi, std::abs(tr.accumulator(0) - jump));
        const double E0 = seg2::reduced_energy(p2, Y0, sp);
        worst_red = std::max(worst_red, std::abs(seg2::reduced_energy(p2, YT, sp) - E0) / std::max(std::abs(E0), 1.0));
        ++done;
      } catch (const Error&) {
        // left the regular domain; draw again
      }
    }
    // closed leaves
    const seg2::ScalarSupport sup = seg2::build_support(p2, cfg.support_amplitude);
    const num::Vec y0 = (num::Vec(2) << 0.0, sup.sigma_at_section(p2)).finished();
    const num::Trajectory cl = num::integrate(seg2::closed_field(p2), y0, 0.0, sup.T_L);
    double drift2 = 0.0;
    for (int i = 0; i <= 256; ++i) {
      const num::Vec y = cl(sup.T_L * i / 256);
      drift2 = std::max(drift2, std::abs(seg2::eval_Eperp(p2, y(0), y(1)) - sup.E_perp));
    }
    const seg3::Params& p3 = cfg.params3;
    const seg3::ParentModes m = seg3::solve_parent_modes(p3);
    const seg3::SupportSeed seed = seg3::seed_support(m, seg3::Sector::IP, 0.05);
    const seg3::Vec6 z0 = seg3::lift_state(p3, seed.y0, seg3::Vec2::Zero());
    const num::Field f3 = [&](double, const num::Vec& z, num::Vec& dz) { dz = seg3::eval_f_int(p3, z.head<6>()); };
    const num::Trajectory tr3 = num::integrate(f3, z0, 0.0, seed.T);
    const double E3 = seg3::eval_Eperp(p3, seed.y0.head<2>(), seed.y0.tail<2>());
    double drift3 = 0.0;
    for (int i = 0; i <= 256; ++i) {
      const num::Vec z = tr3(seed.T * i / 256);
      drift3 = std::max(drift3, std::abs(seg3::eval_Eperp(p3, seg3::Vec2(z(0), z(1)), seg3::Vec2(z(4), z(5))) - E3));
    }
    const bool ok = done == cfg.trajectories && worst_psi <= 1e-11 && drift2 <= 1e-10 && drift3 <= 1e-10 &&
                    worst_red <= 1e-9;
    rep.pass = ok;
    rep.json["energy"] = {{"trajectories", done},
                          {"max_psi_identity_error", worst_psi},
                          {"max_reduced_energy_drift", worst_red},
                          {"closed_leaf_Eperp_drift_2seg", drift2},
                          {"closed_leaf_Eperp_drift_3seg", drift3},
                          {"pass", ok}};
    rep.certificates.push_back({"energy", "oracle", "-", "psi_identity", "oracle", worst_psi, 1.0, 1e-11, true,
                                worst_psi <= 1e-11});
    rep.certificates.push_back({"energy", "oracle", "-", "closed_leaf_2seg", "oracle", drift2, 1.0, 1e-10, true,
                                drift2 <= 1e-10});
    rep.certificates.push_back({"energy", "oracle", "-", "closed_leaf_3seg", "oracle", drift3, 1.0, 1e-10, true,
                                drift3 <= 1e-10});
    return;
  }
  throw Error("config-error", "unknown oracle task '" + cfg.task + "'");
}

}  // namespace

RunReport run(const RunConfig& cfg) {
  validate(cfg);
  RunReport rep;
  rep.json["tool"] = {{"name", "nlm"}, {"version", kToolVersion}};
  rep.json["config_hash"] = config_hash(cfg);
  rep.json["system"] = std::string(to_string(cfg.system));
  rep.json["task"] = cfg.task;
  switch (cfg.system) {
    case System::Seg2: run_2seg(cfg, rep); break;
    case System::Seg3: run_3seg(cfg, rep); break;
    case System::Oracle: run_oracle(cfg, rep); break;
  }
  rep.json["counts"] = {{"accepted", rep.accepted}, {"rejected", rep.rejected}};
  rep.json["pass"] = rep.pass;
  return rep;
}

// ---------------------------------------------------------------------------

PlotSeries plot_3seg(const seg3::Params& p, const seg3::LiftedCycle& c, const std::string& name, int n) {
  PlotSeries s;
  s.name = name;
  s.columns = {"t", "delta1", "delta2", "sigma1", "sigma2", "v", "omega", "E_perp", "P_POE"};
  const seg3::DenseCycle d(p, c);
  for (int i = 0; i <= n; ++i) {
    const double t = d.T() * i / n;
    const seg3::Vec6 z = i == n ? d.end_state() : d.state(t);
    const seg3::Vec6 zd = i == n ? seg3::Vec6(seg3::eval_f_int(p, z)) : d.derivative(t);
    s.rows.push_back({t, z(seg3::D1), z(seg3::D2), z(seg3::S1), z(seg3::S2), z(seg3::V), z(seg3::W),
                      seg3::eval_Eperp(p, seg3::Vec2(z(seg3::D1), z(seg3::D2)), seg3::Vec2(z(seg3::S1), z(seg3::S2))),
                      seg3::poe_chain_rule(p, z, zd)});
  }
  return s;
}

PlotSeries plot_2seg(const seg2::Params& p, const seg2::Cycle& c, const std::string& name, int n) {
  PlotSeries s;
  s.name = name;
  s.columns = {"t", "delta", "sigma", "v", "omega", "E_perp", "P_POE"};
  const seg2::SpeedScale sp = seg2::SpeedScale::from_vbar(c.vbar);
  for (int i = 0; i <= n; ++i) {
    const double t = c.tau * i / n;
    // negative speeds traverse the oriented trajectory backwards in time
    const double th = sp.s > 0 ? t : c.tau - t;
    const seg2::SectionState Y = c.trajectory(th).head<4>();
    const seg2::Physical ph = seg2::to_physical(Y, sp);
    const seg2::OpenedRows o = seg2::opened_rows(p, Y(0), sp.s * Y(1), sp.s * Y(2), sp.s * Y(3), sp.h);
    s.rows.push_back({t, Y(0), ph.sigma, ph.v, ph.omega, seg2::Eperp_of(p, Y, sp), o.P_POE});
  }
  return s;
}

void write_report(const RunReport& report, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "cycles");
  {
    std::ofstream f(fs::path(dir) / "report.json");
    f << report.json.dump(2) << "\n";
  }
  {
    std::ofstream f(fs::path(dir) / "certificates.csv");
    f << "cycle_id,system,sector,row,group,value,scale,threshold,gating,pass\n";
    for (const CertRecord& r : report.certificates)
      f << r.cycle_id << ',' << r.system << ',' << r.sector << ',' << r.row << ',' << r.group << ','
        << format_number(r.value) << ',' << format_number(r.scale) << ',' << format_number(r.threshold) << ','
        << (r.gating ? 1 : 0) << ',' << (r.pass ? 1 : 0) << "\n";
  }
  for (const PlotSeries& s : report.cycles) {
    std::ofstream f(fs::path(dir) / "cycles" / (s.name + ".csv"));
    for (std::size_t j = 0; j < s.columns.size(); ++j) f << (j ? "," : "") << s.columns[j];
    f << "\n";
    for (const auto& row : s.rows) {
      for (std::size_t j = 0; j < row.size(); ++j) f << (j ? "," : "") << format_number(row[j]);
      f << "\n";
    }
  }
}

}  // namespace nlm::io

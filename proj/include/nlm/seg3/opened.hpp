#pragma once

#include "nlm/numerics/least_squares.hpp"
#include "nlm/numerics/ode.hpp"
#include "nlm/seg3/modal.hpp"
#include "nlm/seg3/model.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace nlm::seg3 {

enum class Representation { Shooting, Collocation };

std::string_view to_string(Representation r);
Representation parse_representation(std::string_view s);

/// Opened internal cycle in one of two discrete representations.
///
/// Shooting: m nodes z_0..z_{m-1}, segment i flows z_i for durations[i].
/// Collocation: N+1 mesh nodes z_0..z_N (z_N closes onto z_0) with
/// Hermite-Simpson intervals of length durations[i].
struct LiftedCycle {
  Sector sector = Sector::IP;
  Representation representation = Representation::Shooting;
  double T = 0.0;
  std::vector<Vec6> nodes;
  std::vector<double> durations;

  std::size_t segments() const { return durations.size(); }
  Vec6 z0() const { return nodes.front(); }
};

/// Uniform durations T/m for every segment.
std::vector<double> uniform_durations(double T, std::size_t m);

/// Dense reconstruction z_rep(t) with its representation derivative:
/// controlled re-integration of each shooting segment, or the cubic
/// Hermite-Simpson spline through the collocation mesh.
class DenseCycle {
 public:
  DenseCycle(const Params& p, const LiftedCycle& c);

  double T() const { return T_; }
  Representation representation() const { return rep_; }
  std::size_t segments() const { return starts_.size() - 1; }
  double segment_start(std::size_t i) const { return starts_[i]; }

  /// Knots of the reconstruction: integrator steps or mesh nodes, 0 and T
  /// included. The reconstruction is polynomial between consecutive knots.
  const std::vector<double>& knots() const { return knots_; }

  Vec6 state(double t) const;
  Vec6 derivative(double t) const;
  /// Right end of the reconstruction (the representation's Gamma(T)).
  Vec6 end_state() const { return end_; }
  Vec6 start_state() const { return start_; }

 private:
  std::size_t locate(double t) const;

  Representation rep_;
  double T_;
  std::vector<double> starts_, knots_;
  std::vector<num::Trajectory> flows_;
  std::vector<Vec6> z_, f_;
  Vec6 start_, end_;
};

/// Transverse (r, sigma) samples of a reconstructed cycle for modal features.
CycleSamples sample_cycle(const DenseCycle& c, int n = 512);

/// Mean speed (1/T) int v dt on the reconstruction.
double mean_speed(const DenseCycle& c);

// ---------------------------------------------------------------------------
// Gauges and representation residuals

/// Blended phase gauge against a reference internal state:
///   alpha (v0 - v_ref)/max(|v_ref|, v_sc) + (1-alpha)(P_j(z0) - P_j(z_ref))/max(|P_j(z_ref)|, p_sc).
struct BlendedGauge {
  Sector sector = Sector::IP;
  double alpha = 0.5;
  Vec6 z_ref = Vec6::Zero();
  double v_sc = 1.0;
  double p_sc = 1.0;
};

double blended_phase(const ParentModes& m, const BlendedGauge& g, const Vec6& z0);

/// Gauge referenced to the first node of `ref`, with p_sc the largest |P_j|
/// over its nodes.
BlendedGauge make_gauge(const ParentModes& m, const LiftedCycle& ref, double alpha, double v_sc);

/// Component scales D_z from the spread of a node set (floor 1e-3).
Vec6 state_scales(const std::vector<Vec6>& nodes);

struct ResidualReport {
  Eigen::VectorXd residual;
  double norm = 0.0;
};

/// Segment matching rows D_z^-1 (Phi^{dt_i}(z_i) - z_{i+1}), the wrap row onto
/// z_0, then the gauge row. Throws Error("segment-blowup", index) when a
/// segment integration fails.
ResidualReport shooting_residual(const Params& p, const ParentModes& m, const std::vector<Vec6>& nodes,
                                 const std::vector<double>& durations, const BlendedGauge& gauge,
                                 const Vec6& Dz);

/// Generic Hermite-Simpson defects for dz/dt = f(z) on a mesh of N+1 nodes.
std::vector<Eigen::VectorXd> hermite_simpson_defects(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                                     const std::vector<Eigen::VectorXd>& z,
                                                     const std::vector<double>& dt);

/// Hermite-Simpson defects H_i, closure z_N - z_0 and the gauge row.
ResidualReport collocation_residual(const Params& p, const ParentModes& m, const std::vector<Vec6>& mesh,
                                    const std::vector<double>& durations, const BlendedGauge& gauge);

// ---------------------------------------------------------------------------
// Carrier lift and cycle solves

struct LiftOptions {
  std::optional<double> vbar_target;  // mean-speed row when set
  bool poe_row = false;               // POE-constrained candidate row
  double v_sc = 1.0;
  double psi_sc = 1.0;
  double tolerance = 1e-10;           // scaled candidate residual
  num::LsqOptions lsq{400, 1e-14, 1e-15, 1e-3};
};

struct LiftResult {
  LiftedCycle cycle;  // single-node shooting representation
  Vec4 y0 = Vec4::Zero();
  Vec2 qc0 = Vec2::Zero();
  double scaled_norm = 0.0;
  double R_car = 0.0;
  int iterations = 0;
};

/// Support-carrier candidate: unknowns (y0, q_c0, T) with periodicity in y and
/// q_c, the modal gauge P_j(y0) = 0 and the active chart rows. Throws
/// Error("lift-open") when the candidate residual does not close.
LiftResult lift_support(const Params& p, const ParentModes& m, const TransverseSupport& support,
                        const Vec2& qc0 = Vec2::Zero(), const LiftOptions& opt = {});

struct CycleSolveOptions {
  std::optional<double> vbar_target;
  double v_sc = 1.0;
  double alpha = 0.5;  // blended gauge weight
  double tolerance = 1e-10;
  num::LsqOptions lsq{200, 1e-14, 1e-15, 1e-3};
};

struct CycleSolveResult {
  LiftedCycle cycle;
  double R_rep = 0.0;    // R_ms or R_BVP (without the speed row)
  double R_vbar = 0.0;   // speed row when active
  double R_ph = 0.0;
  double scaled_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Resample any cycle onto m shooting nodes (or N+1 mesh nodes) by
/// re-integration from its first node.
LiftedCycle resample(const Params& p, const LiftedCycle& c, Representation rep, std::size_t segments);

/// Multiple-shooting periodic solve with the blended gauge referenced to the
/// initial guess and an optional mean-speed row.
CycleSolveResult solve_shooting(const Params& p, const ParentModes& m, const LiftedCycle& guess,
                                const CycleSolveOptions& opt = {});

/// Hermite-Simpson periodic solve on the guess mesh.
CycleSolveResult solve_collocation(const Params& p, const ParentModes& m, const LiftedCycle& guess,
                                   const CycleSolveOptions& opt = {});

// ---------------------------------------------------------------------------
// Certificate rows

struct RhsCheck {
  double full = 0.0;
  double interior = 0.0;
};

/// Sup-norm of z_rep' - f_int(z_rep) on a 1024-point grid; the interior value
/// skips 2% of every segment's duration at each of its ends.
RhsCheck rhs_check(const Params& p, const DenseCycle& c, int grid = 1024);

struct PoeRow {
  double Psi = 0.0;
  double R = 0.0;
  double dE = 0.0;  // E_perp(T) - E_perp(0) on the reconstruction
};

/// P_POE = d/dt E_perp along the reconstruction (chain rule with analytic
/// partials and the representation derivative), averaged over the period.
PoeRow poe_row(const Params& p, const DenseCycle& c);

/// Chain-rule P_POE at a state with a given state derivative.
double poe_chain_rule(const Params& p, const Vec6& z, const Vec6& zdot);

struct Pose {
  double dx = 0.0, dy = 0.0, dtheta = 0.0;
};

/// Per-period pose increment from g' = g xi(z), xi = (v, 0, omega).
Pose reconstruct_pose(const DenseCycle& c);

/// ||(dx, dy)|| + 0.1 |dtheta|.
double pose_distance(const Pose& g);

struct CertThresholds {
  double tau_POE = 1e-6;
  double tau_z = 1e-7;
  double tau_car = 1e-7;
  double tau_supp = 1e-7;
  double tau_rhs = 2e-3;
  double tau_id = 0.4;
  double tau_rep = 1e-8;
  double d_min = 1e-3;
};

struct CertRow {
  std::string name;
  std::string group;  // rep, mech, POE, phys
  double value = 0.0;  // unscaled
  double scale = 1.0;
  double threshold = 0.0;
  bool evaluated = true;
  bool gating = true;
  bool pass = false;

  double scaled() const { return value / scale; }
};

struct CertificateOptions {
  bool poe_row_enabled = true;
  CertThresholds thresholds;
  /// Representation rows from the solve that produced the cycle.
  std::optional<double> R_rep;
  std::optional<double> R_ph;
  std::optional<double> R_vbar;
};

struct FinalCertificate {
  Sector sector = Sector::IP;
  Params params;
  Representation representation = Representation::Shooting;
  double T = 0.0;
  double vbar = 0.0;
  Pose dg;
  double d_g = 0.0;
  bool pose_evaluated = false;
  ModalFeatures features;
  double Psi_POE = 0.0;
  double energy_drift = 0.0;  // relative, over one period
  double Eperp_min = 0.0, Eperp_max = 0.0;
  double A_nonv_ptp = 0.0;
  bool poe_row_enabled = true;
  std::vector<CertRow> rows;
  std::vector<std::string> trace;  // order in which rows were evaluated
  bool pass = false;
  /// natural-locomotion, moving-but-not-natural, moving-poe-ungated,
  /// stationary, rejected
  std::string label;

  const CertRow* row(std::string_view name) const;
};

FinalCertificate assemble_final_certificate(const Params& p, const ParentModes& m, const LiftedCycle& cycle,
                                            Sector sector, const CertificateOptions& opt = {});

struct PairedCertificate {
  bool pass = false;
  std::vector<CertRow> rows;
  std::vector<std::string> failures;
};

/// Same-physical pair: both certificates pass with the POE gate active, both
/// parameter rows vanish against theta_star, both displacements reach d_min.
PairedCertificate paired_certificate(const Params& theta_star, const FinalCertificate& ip,
                                     const FinalCertificate& ap, double d_min = 1e-3);

// ---------------------------------------------------------------------------
// Candidate transformations and screening

/// Period cover with multiplicity m_cov (1 or 3).
LiftedCycle ap_cover(const LiftedCycle& c, int m_cov);
/// First period of a cover.
LiftedCycle project_cover(const LiftedCycle& cover, int m_cov);
/// (T Gamma)(t) = S_tr Gamma(T - t) on the node set.
LiftedCycle time_reverse(const LiftedCycle& c);
/// Max ||S f(z) + f(S z)|| over the given states; throws
/// Error("reversal-incompatible") above tol.
double check_reversal_compatibility(const Params& p, const std::vector<Vec6>& states, double tol = 1e-9);

struct Candidate {
  double R_supp = 0.0, R_id = 0.0, R_lift = 0.0, R_POE = 0.0;
  Pose dg;
};

struct MobilityScales {
  double s_supp = 1e-6, s_id = 0.4, s_lift = 1e-6, s_POE = 1e-6;
  double d_min = 1e-3;
};

struct MobilityScore {
  double b_supp = 0.0, b_id = 0.0, b_lift = 0.0, b_POE = 0.0, b_mob = 0.0;
  double combined() const { return b_supp * b_id * b_lift * b_POE * b_mob; }
};

std::vector<MobilityScore> mobility_probe(const std::vector<Candidate>& candidates, const MobilityScales& s = {});

/// Relative exchange rate of a lifted support: (E_perp(K T) - E_perp(0)) /
/// (K T v E_perp(0)) after opening the carrier at q_c = (v, 0). Its sign
/// change along a support branch brackets the POE balance.
double exchange_rate(const Params& p, const TransverseSupport& s, double v_probe, int periods = 5);

}  // namespace nlm::seg3

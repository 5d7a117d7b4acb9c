#pragma once

#include "nlm/numerics/least_squares.hpp"
#include "nlm/seg3/model.hpp"

#include <array>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace nlm::seg3 {

enum class Sector { IP = 0, AP = 1 };

std::string_view to_string(Sector s);
/// Accepts "IP"/"AP" in either case; throws Error("invalid-sector").
Sector parse_sector(std::string_view s);

/// Linearized transverse modes at r = 0: K0 u = Omega^2 M0 u.
struct ParentModes {
  Mat2 M0, K0;
  Vec2 Omega;  // (Omega_IP, Omega_AP)
  Mat2 U;      // columns u_IP, u_AP, M0-orthonormal

  Vec2 u(Sector s) const { return U.col(static_cast<int>(s)); }
  double omega(Sector s) const { return Omega(static_cast<int>(s)); }
};

/// IP is the mode whose components share sign. Throws Error("mode-degenerate")
/// when the two frequencies agree to 1e-8.
ParentModes solve_parent_modes(const Params& p);

/// (Q_IP, P_IP, Q_AP, P_AP) of a transverse state y = (r, sigma).
Vec4 modal_row(const ParentModes& m, const Vec4& y);

struct SupportSeed {
  Vec4 y0;
  double T;
};

/// r0 = A u_sector, sigma0 = 0, T0 = 2 pi / Omega_sector.
SupportSeed seed_support(const ParentModes& m, Sector s, double A);

enum class Gauge { Modal, Tangent, SeedTracking };

std::string_view to_string(Gauge g);
Gauge parse_gauge(std::string_view s);

/// Reference orbit for the tangent and seed-tracking gauges.
struct GaugeReference {
  Vec4 y0 = Vec4::Zero();
  double T = 0.0;
  double phase = 0.0;  // fraction of T
};

struct SupportTarget {
  Sector sector = Sector::IP;
  double amplitude = 0.0;  // pure target Q_sector = A
  /// Mixed chart: active components of (Q_IP, P_IP, Q_AP, P_AP) and their
  /// targets replace the pure amplitude row.
  std::array<bool, 4> mixed_active{false, false, false, false};
  Vec4 mixed_target = Vec4::Zero();

  bool mixed() const { return mixed_active[0] || mixed_active[1] || mixed_active[2] || mixed_active[3]; }
};

struct SupportOptions {
  Gauge gauge = Gauge::Modal;
  GaugeReference reference;  // ignored by the modal gauge
  double support_tolerance = 1e-9;
  double eps_phase = 1e-12;
  num::LsqOptions lsq{200, 1e-13, 1e-15, 1e-3};
};

struct TransverseSupport {
  Sector sector = Sector::IP;
  double A = 0.0;
  Vec4 y0 = Vec4::Zero();
  double T = 0.0;
  Gauge gauge = Gauge::Modal;
  double gauge_residual = 0.0;
  double R_supp = 0.0, R_E = 0.0, R_ph = 0.0;
  double scaled_norm = 0.0;
  int iterations = 0;
};

/// Periodic orbit of the carrier-closed field with one gauge row and the
/// modal target rows. Throws Error("support-open") unless R_supp reaches the
/// support tolerance; domain exits at the seed propagate.
TransverseSupport solve_support(const Params& p, const ParentModes& m, const SupportSeed& seed,
                                const SupportTarget& target, const SupportOptions& opt = {});

/// Supports along an amplitude ladder, each warm-started from the previous.
/// Stops at the first rung that fails and returns what was solved.
std::vector<TransverseSupport> support_ladder(const Params& p, const ParentModes& m, Sector s,
                                              const std::vector<double>& amplitudes,
                                              const SupportOptions& opt = {});

struct BranchOptions {
  double A_start = 0.003;
  double ds = 0.03;  // arclength step in (r, sigma / Omega, T)
  int max_steps = 200;
  SupportOptions support;
};

/// Pseudo-arclength continuation of the modal-gauge support branch from the
/// small-amplitude seed. Amplitude is free, so the branch passes folds and
/// internal resonances that stall a natural-parameter ladder. `visit` sees
/// every accepted support and returns false to stop.
std::vector<TransverseSupport> support_branch(const Params& p, const ParentModes& m, Sector s,
                                              const BranchOptions& opt = {},
                                              const std::function<bool(const TransverseSupport&)>& visit = {});

/// Support diagnostics recomputed by re-integration (R_E on 512 samples).
void support_diagnostics(const Params& p, TransverseSupport& s);

/// Transverse states sampled uniformly over one period (endpoint excluded).
struct CycleSamples {
  double T = 0.0;
  std::vector<Vec4> y;
};

CycleSamples sample_support(const Params& p, const Vec4& y0, double T, int n = 512);

struct ModalFeatures {
  Vec2 activity = Vec2::Zero();  // A_IP^2, A_AP^2
  Vec2 share = Vec2::Zero();     // rho_IP, rho_AP
  double phi_rel = 0.0;
  double c_corr = 0.0;  // cos of the delta1/delta2 lag on the fundamental harmonic
  int s_sign = 0;
  Vec2 R_id = Vec2::Zero();  // distance to the IP and AP templates

  double share_of(Sector s) const { return share(static_cast<int>(s)); }
  double identity_distance(Sector s) const { return R_id(static_cast<int>(s)); }
};

inline constexpr double kIdentityRegularizer = 1e-12;

/// Time-mean modal features of a sampled cycle. The identity distance to
/// sector k is max(1 - rho_k, (1 - s_k c_corr) / 2) with s_IP = +1, s_AP = -1.
ModalFeatures compute_modal_features(const ParentModes& m, const CycleSamples& cycle);

}  // namespace nlm::seg3

#pragma once

#include <Eigen/Dense>

#include <array>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nlm::num {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// dy/dt = f(t, y), written into `dydt` (already sized).
using Field = std::function<void(double t, const Vec& y, Vec& dydt)>;
using ScalarField = std::function<double(double t, const Vec& y)>;

enum class Direction { Falling = -1, Any = 0, Rising = 1 };

struct EventSpec {
  ScalarField function;
  Direction direction = Direction::Any;
  /// Ignore a zero of the event function at the initial time.
  bool skip_initial = true;
  double tolerance = 1e-13;
};

/// Running integral carried alongside the state with the same error control.
struct Accumulator {
  std::string name;
  ScalarField integrand;
  double initial = 0.0;
};

struct OdeOptions {
  double rtol = 1e-12;
  double atol = 1e-12;
  double h_max = std::numeric_limits<double>::infinity();
  double h_init = 0.0;  // 0: automatic
  long max_steps = 2'000'000;
};

struct EventHit {
  std::size_t index = 0;
  double t = 0.0;
  Vec y;
};

/// Adaptive solution with seventh-order dense output over every accepted step.
class Trajectory {
 public:
  std::size_t dimension() const noexcept { return dim_; }
  std::size_t accumulator_count() const noexcept { return names_.size(); }

  double t0() const noexcept { return times_.front(); }
  double tf() const noexcept { return times_.back(); }

  /// Node times (strictly monotone in the integration direction).
  const std::vector<double>& times() const noexcept { return times_; }
  std::size_t node_count() const noexcept { return times_.size(); }
  /// State at node i (state part only).
  Vec node_state(std::size_t i) const { return nodes_[i].head(dim_); }

  /// Dense state at time t in [t0, tf].
  Vec operator()(double t) const { return eval_full(t).head(dim_); }
  Vec state_at(double t) const { return (*this)(t); }
  /// Time derivative of the dense interpolant (state part).
  Vec derivative(double t) const;
  Vec final_state() const { return nodes_.back().head(dim_); }

  /// Accumulator value at time t (dense) or at tf.
  double accumulator(std::size_t k, double t) const { return eval_full(t)(dim_ + k); }
  double accumulator(std::size_t k) const { return nodes_.back()(dim_ + k); }
  double accumulator(const std::string& name) const;
  const std::vector<std::string>& accumulator_names() const noexcept { return names_; }

  const std::optional<EventHit>& event() const noexcept { return event_; }

  long steps_accepted() const noexcept { return accepted_; }
  long steps_rejected() const noexcept { return rejected_; }
  long rhs_evaluations() const noexcept { return evaluations_; }

 private:
  friend class Dop853;

  struct Segment {
    double t_start = 0.0;
    double h = 0.0;
    std::array<Vec, 8> rc;
  };

  Vec eval_full(double t) const;
  std::size_t locate(double t) const;

  std::size_t dim_ = 0;
  std::vector<std::string> names_;
  std::vector<double> times_;
  std::vector<Vec> nodes_;  // augmented states (state + accumulators)
  std::vector<Segment> segments_;
  std::optional<EventHit> event_;
  long accepted_ = 0;
  long rejected_ = 0;
  long evaluations_ = 0;
};

/// Integrate dy/dt = rhs from (t0, y0) to t1 with Dormand-Prince 8(5,3).
///
/// Integration stops at the first located event. Accumulators are appended to
/// the state vector internally. Throws nlm::Error("stiff-or-singular") on
/// step-size underflow; DomainExit from the rhs propagates unchanged.
Trajectory integrate(const Field& rhs, const Vec& y0, double t0, double t1,
                     std::span<const EventSpec> events = {},
                     std::span<const Accumulator> accumulators = {},
                     const OdeOptions& options = {});

/// End state of a flow map over [t0, t1]; convenience wrapper.
Vec flow(const Field& rhs, const Vec& y0, double t0, double t1,
         const OdeOptions& options = {});

}  // namespace nlm::num

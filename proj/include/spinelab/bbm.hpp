#ifndef SPINELAB_BBM_HPP
#define SPINELAB_BBM_HPP

// Single-type branching Brownian motion: fission rate r, 1 + A children,
// driftless unit-variance motion. Exact event-driven simulation.

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <variant>

#include "spinelab/engine.hpp"
#include "spinelab/errors.hpp"
#include "spinelab/offspring.hpp"
#include "spinelab/trees.hpp"
#include "spinelab/verdict.hpp"

namespace spinelab {

struct BbmParams {
  double r = 1.0;
  OffspringDist offspring = OffspringDist::finite({0.0, 1.0});
  double x0 = 0.0;

  void validate() const {
    require(r > 0.0 && std::isfinite(r), "fission rate r > 0");
    require(std::isfinite(offspring.mean()), "offspring mean finite");
    require(std::isfinite(x0), "x0 finite");
  }
};

struct BbmSpectral {
  double lambda = 0.0;
  double e_lambda = 0.0;
  std::optional<double> c_lambda;  // -E/lambda, absent at lambda = 0
  double lambda_tilde = 0.0;
};

inline void check_nonpositive_lambda(double lambda) {
  if (!(lambda <= 0.0) || !std::isfinite(lambda))
    fail(ErrorCode::OutOfDomain, "lambda <= 0 required (reflect space for lambda > 0)");
}

inline BbmSpectral bbm_spectral(const BbmParams& params, double lambda) {
  check_nonpositive_lambda(lambda);
  const double rm = params.r * params.offspring.mean();
  BbmSpectral s;
  s.lambda = lambda;
  s.e_lambda = 0.5 * lambda * lambda + rm;
  if (lambda < 0.0) s.c_lambda = -s.e_lambda / lambda;
  s.lambda_tilde = -std::sqrt(2.0 * rm);
  return s;
}

/// Relative tolerance for treating two sides of a strict inequality as equal.
inline constexpr double kBoundaryTolerance = 1e-12;

inline bool near_equal(double a, double b) {
  return std::abs(a - b) <= kBoundaryTolerance * std::max({1.0, std::abs(a), std::abs(b)});
}

inline ConvergenceVerdict classify_bbm(const BbmParams& params, double lambda,
                                       std::optional<double> p = std::nullopt) {
  check_nonpositive_lambda(lambda);
  check_moment_order(p);
  const BbmSpectral spec = bbm_spectral(params, lambda);
  const double two_mr = 2.0 * params.r * params.offspring.mean();
  if (!p) {
    if (lambda <= spec.lambda_tilde)
      return {Regime::AsZero, "bbm.l1.lambda_le_tilde",
              "λ ≤ λ̃ = -sqrt(2rm): Z_λ(∞) = 0 almost surely"};
    if (!std::isfinite(params.offspring.xlogx()))
      return {Regime::AsZero, "bbm.l1.xlogx_infinite",
              "λ ∈ (λ̃, 0] and P(A log+ A) = ∞: Z_λ(∞) = 0 almost surely"};
    return {Regime::L1Convergent, "bbm.l1.convergent",
            "λ ∈ (λ̃, 0] and P(A log+ A) < ∞: convergence a.s. and in L1"};
  }
  const double lhs = *p * lambda * lambda;
  const bool moment_finite = std::isfinite(params.offspring.p_moment(*p));
  if (!moment_finite)
    return {Regime::LpUnbounded, "bbm.lp.moment_infinite", "P(A^p) = ∞: Z_λ unbounded in Lp"};
  if (near_equal(lhs, two_mr))
    return {Regime::BoundaryUndetermined, "bbm.lp.boundary",
            "pλ² = 2mr: both Lp criteria need strict inequality"};
  if (lhs < two_mr)
    return {Regime::LpConvergent, "bbm.lp.convergent",
            "pλ² < 2mr and P(A^p) < ∞: convergence a.s. and in Lp"};
  return {Regime::LpUnbounded, "bbm.lp.lambda_outside", "pλ² > 2mr: Z_λ unbounded in Lp"};
}

/// Per-particle dynamics under P and, for the spine, under Q~_lambda.
class BbmDynamics {
 public:
  BbmDynamics(const BbmParams& params, double lambda)
      : r_(params.r),
        offspring_(params.offspring),
        lambda_(lambda),
        spine_rate_((1.0 + params.offspring.mean()) * params.r),
        biased_(params.offspring.size_biased()) {}

  LifeEnd live(Particle<std::monostate>& p, double horizon, StreamKey key) const {
    return advance(p, horizon, key, r_, 0.0, offspring_);
  }

  LifeEnd live_spine(Particle<std::monostate>& p, double horizon, StreamKey key) const {
    return advance(p, horizon, key, spine_rate_, lambda_, biased_);
  }

  TypePoint type_point(std::monostate) const { return {}; }

 private:
  static LifeEnd advance(Particle<std::monostate>& p, double horizon, StreamKey key, double rate,
                         double drift, const OffspringDist& law) {
    RandomStream rng(key, p.id, substream::kLife);
    const double wait = rng.exponential(rate);
    const double dt = std::min(wait, horizon - p.time);
    p.x += drift * dt + std::sqrt(dt) * rng.normal();
    if (p.time + wait > horizon) {
      p.time = horizon;
      return {};
    }
    p.time += wait;
    return {true, law.sample(rng)};
  }

  double r_;
  OffspringDist offspring_;
  double lambda_;
  double spine_rate_;
  OffspringDist biased_;
};

inline Particle<std::monostate> bbm_root(const BbmParams& params) {
  Particle<std::monostate> root;
  root.x = params.x0;
  return root;
}

inline Snapshot simulate_p_bbm(const BbmParams& params, double t, StreamKey key,
                               const SimOptions& opts = {}) {
  params.validate();
  require(t >= 0.0, "horizon t >= 0");
  const BbmDynamics dyn(params, 0.0);
  return grow_snapshot(dyn, bbm_root(params), t, key, opts);
}

inline Snapshot simulate_p_bbm(const BbmParams& params, double t, std::uint64_t seed,
                               std::size_t cap = kDefaultCap) {
  return simulate_p_bbm(params, t, StreamKey::from(seed, 0), SimOptions{cap});
}

inline std::pair<Snapshot, SpineRecord> simulate_q_bbm(const BbmParams& params, double lambda, double t,
                                                       StreamKey key, const SimOptions& opts = {}) {
  params.validate();
  check_nonpositive_lambda(lambda);
  require(t >= 0.0, "horizon t >= 0");
  const BbmDynamics dyn(params, lambda);
  SpineRecord rec;
  Snapshot snap = grow_snapshot(dyn, bbm_root(params), t, key, opts, &rec);
  return {std::move(snap), std::move(rec)};
}

inline std::pair<Snapshot, SpineRecord> simulate_q_bbm(const BbmParams& params, double lambda, double t,
                                                       std::uint64_t seed, std::size_t cap = kDefaultCap) {
  return simulate_q_bbm(params, lambda, t, StreamKey::from(seed, 0), SimOptions{cap});
}

/// Z_lambda(t) = sum_u exp(lambda X_u(t) - E_lambda t).
inline double z_lambda_bbm(const Snapshot& snap, const BbmSpectral& spec) {
  double z = 0.0;
  for (const auto& p : snap.particles) z += std::exp(spec.lambda * p.position - spec.e_lambda * snap.horizon);
  return z;
}

/// E[Z_lambda(t) | spine] = sum_k A_k e^{lambda xi_Sk - E S_k} + e^{lambda xi_t - E t}.
inline double spine_decomposition_bbm(const SpineRecord& rec, const BbmSpectral& spec) {
  double total = 0.0;
  for (std::size_t k = 0; k < rec.fission_count(); ++k) {
    total += static_cast<double>(rec.extra_offspring[k]) *
             std::exp(spec.lambda * rec.states_at_fission[k].position - spec.e_lambda * rec.fission_times[k]);
  }
  return total + std::exp(spec.lambda * rec.terminal.position - spec.e_lambda * rec.horizon);
}

}  // namespace spinelab

#endif  // SPINELAB_BBM_HPP

#ifndef SPINELAB_OUTYPE_HPP
#define SPINELAB_OUTYPE_HPP

// Continuous-type branching diffusion. The type eta follows the
// Ornstein-Uhlenbeck generator (theta/2)(d^2/dy^2 - y d/dy); a particle of
// type y moves with variance a y^2 and splits in two at rate r y^2 + rho.
//
// Type paths are exact OU transitions. Fission uses integrated-rate
// inversion with the rate frozen at the start of each step of size h, so the
// decision never looks at the step's end point and the type path keeps its
// exact law through a fission. The spatial increment over a step has the
// trapezoidal variance. Both are O(h) weak approximations.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "spinelab/bbm.hpp"
#include "spinelab/engine.hpp"
#include "spinelab/errors.hpp"
#include "spinelab/random.hpp"
#include "spinelab/trees.hpp"
#include "spinelab/verdict.hpp"

namespace spinelab {

struct OuParams {
  double theta = 10.0;
  double a = 1.0;
  double r = 1.0;
  double rho = 1.0;
  double x0 = 0.0;
  double y0 = 0.0;

  void validate() const {
    require(theta > 0.0 && a > 0.0 && r > 0.0 && rho > 0.0, "theta, a, r, rho > 0");
    require(theta > 8.0 * r, "theta > 8r (high-temperature regime)");
    require(std::isfinite(x0) && std::isfinite(y0), "x0, y0 finite");
  }
};

inline double ou_lambda_min(const OuParams& params) {
  return -std::sqrt((params.theta - 8.0 * params.r) / (4.0 * params.a));
}

struct OuSpectral {
  double lambda = 0.0;
  double mu = 0.0;
  double psi_minus = 0.0;
  double psi_plus = 0.0;
  double e_lambda = 0.0;
  double c_lambda = 0.0;
  double lambda_min = 0.0;
  /// dE/dlambda = theta a lambda / (2 mu), the spine's asymptotic drift.
  double e_prime = 0.0;
};

inline OuSpectral ou_spectral(const OuParams& params, double lambda) {
  params.validate();
  const double lmin = ou_lambda_min(params);
  if (!(lambda > lmin && lambda < 0.0))
    fail(ErrorCode::OutOfDomain, "λ = " + std::to_string(lambda) + " outside (λ_min, 0)");
  const double theta = params.theta;
  OuSpectral s;
  s.lambda = lambda;
  s.lambda_min = lmin;
  s.mu = 0.5 * std::sqrt(theta * theta - theta * (8.0 * params.r + 4.0 * params.a * lambda * lambda));
  s.psi_minus = 0.25 - s.mu / (2.0 * theta);
  // Written this way psi_minus + psi_plus rounds to exactly 1/2.
  s.psi_plus = 0.5 - s.psi_minus;
  s.e_lambda = params.rho + theta * s.psi_minus;
  s.c_lambda = -s.e_lambda / lambda;
  s.e_prime = theta * params.a * lambda / (2.0 * s.mu);
  return s;
}

/// Minimiser of c_lambda on (lambda_min, 0): 10^4-point grid, then golden section.
inline double lambda_tilde_ou(const OuParams& params) {
  const double lmin = ou_lambda_min(params);
  const auto c = [&](double lambda) { return ou_spectral(params, lambda).c_lambda; };
  constexpr int kGrid = 10'000;
  const double step = -lmin / kGrid;
  int best = 0;
  double best_c = c(lmin + 0.5 * step);
  for (int i = 1; i < kGrid; ++i) {
    const double value = c(lmin + (i + 0.5) * step);
    if (value < best_c) best_c = value, best = i;
  }
  if (best == 0 || best == kGrid - 1) fail(ErrorCode::BracketFailure, "c_λ has no interior minimum on the grid");
  double lo = lmin + (best - 0.5) * step;
  double hi = lmin + (best + 1.5) * step;
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - ratio * (hi - lo);
  double x2 = lo + ratio * (hi - lo);
  double f1 = c(x1);
  double f2 = c(x2);
  while (hi - lo > 1e-10) {
    if (f1 < f2) {
      hi = x2, x2 = x1, f2 = f1;
      x1 = hi - ratio * (hi - lo);
      f1 = c(x1);
    } else {
      lo = x1, x1 = x2, f1 = f2;
      x2 = lo + ratio * (hi - lo);
      f2 = c(x2);
    }
  }
  return 0.5 * (lo + hi);
}

inline ConvergenceVerdict classify_ou(const OuParams& params, double lambda, std::optional<double> p = std::nullopt) {
  check_moment_order(p);
  const OuSpectral s = ou_spectral(params, lambda);
  if (!p) {
    if (lambda <= lambda_tilde_ou(params))
      return {Regime::AsZero, "ou.l1.lambda_le_tilde", "λ ≤ λ̃(θ): Z_λ(∞) = 0 almost surely"};
    return {Regime::L1Convergent, "ou.l1.convergent", "λ ∈ (λ̃(θ), 0): uniformly integrable, converges in L1"};
  }
  const double scaled = *p * lambda;
  if (!(scaled > s.lambda_min))
    return {Regime::BoundaryUndetermined, "ou.lp.scaled_out_of_domain",
            "pλ ∉ (λ_min, 0): the Lp criteria are not available"};
  const OuSpectral sp = ou_spectral(params, scaled);
  const double gap = *p * s.e_lambda - sp.e_lambda;
  const double psi_lhs = *p * s.psi_minus;
  if (gap < 0.0 && !near_equal(*p * s.e_lambda, sp.e_lambda))
    return {Regime::LpUnbounded, "ou.lp.gap_negative", "pE_λ - E_pλ < 0: unbounded in Lp"};
  if (psi_lhs > sp.psi_plus && !near_equal(psi_lhs, sp.psi_plus))
    return {Regime::LpUnbounded, "ou.lp.psi_violated", "pψ⁻_λ > ψ⁺_pλ: unbounded in Lp"};
  if (near_equal(*p * s.e_lambda, sp.e_lambda) || near_equal(psi_lhs, sp.psi_plus))
    return {Regime::BoundaryUndetermined, "ou.lp.boundary",
            "pE_λ = E_pλ or pψ⁻_λ = ψ⁺_pλ: both Lp criteria are strict"};
  return {Regime::LpConvergent, "ou.lp.convergent", "pE_λ - E_pλ > 0 and pψ⁻_λ < ψ⁺_pλ: bounded in Lp"};
}

namespace detail {

/// Variance of an OU transition with reversion k and diffusion theta over dt.
inline double ou_variance(double dt, double k, double theta) {
  return theta * -std::expm1(-2.0 * k * dt) / (2.0 * k);
}

/// Exact sample of eta_s at an interior point given both ends of a step.
inline double ou_bridge(double y_start, double y_end, double tau1, double tau2, double k, double theta,
                        double z) {
  const double v1 = ou_variance(tau1, k, theta);
  const double v2 = ou_variance(tau2, k, theta);
  if (v1 <= 0.0) return y_start;
  if (v2 <= 0.0) return y_end;
  const double decay2 = std::exp(-k * tau2);
  const double precision = 1.0 / v1 + decay2 * decay2 / v2;
  const double mean = (std::exp(-k * tau1) * y_start / v1 + decay2 * y_end / v2) / precision;
  return mean + std::sqrt(1.0 / precision) * z;
}

}  // namespace detail

/// Exact draw from the P-law of the type: Normal(e^{-theta dt/2} y, 1 - e^{-theta dt}).
inline double ou_transition_p(double y, double dt, double theta, RandomStream& rng) {
  const double k = 0.5 * theta;
  return std::exp(-k * dt) * y + std::sqrt(detail::ou_variance(dt, k, theta)) * rng.normal();
}

/// Exact draw from the spine's type law: Normal(e^{-mu dt} y, theta (1 - e^{-2 mu dt}) / 2mu).
inline double ou_transition_q(double y, double dt, double mu, double theta, RandomStream& rng) {
  return std::exp(-mu * dt) * y + std::sqrt(detail::ou_variance(dt, mu, theta)) * rng.normal();
}

/// Discretisation of the OU simulators. Noise is drawn per interval of the
/// absolute grid of spacing `noise_step`; a step h that is a multiple of it
/// composes those draws exactly, so runs at h and h/2 share sample paths.
struct OuGrid {
  double h = 0.01;
  std::optional<double> noise_step;

  double noise() const { return noise_step.value_or(h); }
  std::int64_t per_step() const {
    const double ratio = h / noise();
    const auto k = static_cast<std::int64_t>(std::llround(ratio));
    require(h > 0.0 && k >= 1 && std::abs(ratio - static_cast<double>(k)) <= 1e-9,
            "OU step h > 0 and a multiple of the noise step");
    return k;
  }
};

class OuDynamics {
 public:
  OuDynamics(const OuParams& params, std::optional<OuSpectral> spine, OuGrid grid)
      : params_(params), grid_(grid), per_step_(grid.per_step()) {
    if (spine) {
      spine_mu_ = spine->mu;
      lambda_ = spine->lambda;
    }
  }

  LifeEnd live(Particle<double>& p, double horizon, StreamKey key) const {
    return advance(p, horizon, key, 0.5 * params_.theta, 1.0, 0.0);
  }
  LifeEnd live_spine(Particle<double>& p, double horizon, StreamKey key) const {
    return advance(p, horizon, key, spine_mu_, 2.0, lambda_);
  }
  TypePoint type_point(double y) const { return y; }

 private:
  double rate(double y) const { return params_.r * y * y + params_.rho; }

  LifeEnd advance(Particle<double>& p, double horizon, StreamKey key, double k, double rate_factor,
                  double drift) const {
    const double theta = params_.theta;
    const double delta = grid_.noise();
    RandomStream life(key, p.id, substream::kLife);
    const double threshold = life.exponential(1.0);
    double integral = 0.0;

    auto j = static_cast<std::int64_t>(std::floor(p.time / delta));
    if (static_cast<double>(j + 1) * delta <= p.time) ++j;

    while (p.time < horizon) {
      const double start = p.time;
      const std::int64_t end_index = (j / per_step_ + 1) * per_step_;
      const double end = std::min(horizon, static_cast<double>(end_index) * delta);

      // Compose the fine-grid OU transitions and spatial noises over [start, end].
      double y = p.type;
      double elapsed = 0.0;
      double space_noise = 0.0;
      double lower = start;
      for (; j < end_index && lower < end; ++j) {
        const double upper = std::min(end, static_cast<double>(j + 1) * delta);
        const double dt = upper - lower;
        RandomStream cell(key, p.id, substream::kGridBase + static_cast<std::uint32_t>(j));
        const double z_type = cell.normal();
        const double z_space = cell.normal();
        y = std::exp(-k * dt) * y + std::sqrt(detail::ou_variance(dt, k, theta)) * z_type;
        space_noise += std::sqrt(dt) * z_space;
        elapsed += dt;
        lower = upper;
      }
      const double w = elapsed > 0.0 ? space_noise / std::sqrt(elapsed) : 0.0;
      const double dt = end - start;
      const double y0 = p.type;
      const double increment = rate_factor * dt * rate(y0);

      if (integral + increment >= threshold && increment > 0.0) {
        const double split = start + dt * (threshold - integral) / increment;
        RandomStream point(key, p.id, substream::kFissionPoint);
        const double y_split = detail::ou_bridge(y0, y, split - start, end - split, k, theta, point.normal());
        const double var = params_.a * (split - start) * 0.5 * (y0 * y0 + y_split * y_split);
        p.x += drift * var + std::sqrt(var) * w;
        p.type = y_split;
        p.time = split;
        return {true, 1};
      }
      const double var = params_.a * dt * 0.5 * (y0 * y0 + y * y);
      p.x += drift * var + std::sqrt(var) * w;
      p.type = y;
      p.time = end;
      integral += increment;
    }
    p.time = horizon;
    return {};
  }

  OuParams params_;
  OuGrid grid_;
  std::int64_t per_step_;
  double spine_mu_ = 0.0;
  double lambda_ = 0.0;
};

inline Particle<double> ou_root(const OuParams& params) {
  Particle<double> root;
  root.x = params.x0;
  root.type = params.y0;
  return root;
}

inline Snapshot simulate_p_ou(const OuParams& params, double t, OuGrid grid, StreamKey key,
                              const SimOptions& opts = {}) {
  params.validate();
  require(t >= 0.0, "horizon t >= 0");
  const OuDynamics dyn(params, std::nullopt, grid);
  return grow_snapshot(dyn, ou_root(params), t, key, opts);
}

inline Snapshot simulate_p_ou(const OuParams& params, double t, double h, std::uint64_t seed,
                              std::size_t cap = kDefaultCap) {
  return simulate_p_ou(params, t, OuGrid{h, std::nullopt}, StreamKey::from(seed, 0), SimOptions{cap});
}

inline std::pair<Snapshot, SpineRecord> simulate_q_ou(const OuParams& params, double lambda, double t, OuGrid grid,
                                                      StreamKey key, const SimOptions& opts = {}) {
  require(t >= 0.0, "horizon t >= 0");
  const OuSpectral spec = ou_spectral(params, lambda);
  const OuDynamics dyn(params, spec, grid);
  SpineRecord rec;
  Snapshot snap = grow_snapshot(dyn, ou_root(params), t, key, opts, &rec);
  return {std::move(snap), std::move(rec)};
}

inline std::pair<Snapshot, SpineRecord> simulate_q_ou(const OuParams& params, double lambda, double t, double h,
                                                      std::uint64_t seed, std::size_t cap = kDefaultCap) {
  return simulate_q_ou(params, lambda, t, OuGrid{h, std::nullopt}, StreamKey::from(seed, 0), SimOptions{cap});
}

/// Z_lambda(t) = sum_u exp(psi_minus Y_u^2 + lambda X_u - E_lambda t).
inline double z_lambda_ou(const Snapshot& snap, const OuSpectral& spec) {
  double z = 0.0;
  for (const auto& p : snap.particles) {
    const double y = std::get<double>(p.type);
    z += std::exp(spec.psi_minus * y * y + spec.lambda * p.position - spec.e_lambda * snap.horizon);
  }
  return z;
}

inline double spine_decomposition_ou(const SpineRecord& rec, const OuSpectral& spec) {
  const auto term = [&](const SpineState& s, double time) {
    const double y = std::get<double>(s.type);
    return std::exp(spec.psi_minus * y * y + spec.lambda * s.position - spec.e_lambda * time);
  };
  double total = 0.0;
  for (std::size_t k = 0; k < rec.fission_count(); ++k)
    total += static_cast<double>(rec.extra_offspring[k]) * term(rec.states_at_fission[k], rec.fission_times[k]);
  return total + term(rec.terminal, rec.horizon);
}

}  // namespace spinelab

#endif  // SPINELAB_OUTYPE_HPP

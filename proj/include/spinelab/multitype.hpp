#ifndef SPINELAB_MULTITYPE_HPP
#define SPINELAB_MULTITYPE_HPP

// Finite-type branching diffusion. A particle of type y moves as Brownian
// motion with variance a(y), changes type by the reversible chain theta*Q and
// splits at rate r(y) into 1 + A(y) particles of its own type.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "spinelab/bbm.hpp"
#include "spinelab/engine.hpp"
#include "spinelab/errors.hpp"
#include "spinelab/offspring.hpp"
#include "spinelab/trees.hpp"
#include "spinelab/verdict.hpp"

namespace spinelab {

inline constexpr std::size_t kMaxTypes = 32;

struct TypedParams {
  double theta = 1.0;
  Eigen::MatrixXd q;
  /// Invariant law of Q; computed from Q by finalize() when empty.
  Eigen::VectorXd pi;
  Eigen::VectorXd a;
  Eigen::VectorXd r;
  std::vector<OffspringDist> offspring;
  double x0 = 0.0;
  std::size_t y0 = 0;

  std::size_t n() const noexcept { return static_cast<std::size_t>(q.rows()); }

  /// m(y) for each type.
  Eigen::VectorXd means() const {
    Eigen::VectorXd m(n());
    for (std::size_t i = 0; i < n(); ++i) m(i) = offspring[i].mean();
    return m;
  }

  /// Validates every invariant, filling pi from Q when it was not supplied.
  TypedParams& finalize();
};

/// Null vector of Q normalised to a probability row.
inline Eigen::VectorXd stationary_law(const Eigen::MatrixXd& q) {
  const Eigen::Index n = q.rows();
  Eigen::MatrixXd system = q.transpose();
  system.row(n - 1).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  rhs(n - 1) = 1.0;
  return system.fullPivLu().solve(rhs);
}

inline TypedParams& TypedParams::finalize() {
  const std::size_t size = n();
  require(size >= 2 && size <= kMaxTypes, "number of types n in [2, 32]");
  require(q.cols() == q.rows(), "Q is square");
  require(theta > 0.0 && std::isfinite(theta), "theta > 0");
  require(static_cast<std::size_t>(a.size()) == size && static_cast<std::size_t>(r.size()) == size &&
              offspring.size() == size,
          "a, r and offspring have one entry per type");
  for (std::size_t i = 0; i < size; ++i) {
    require(std::abs(q.row(i).sum()) <= 1e-12, "rows of Q sum to 0");
    for (std::size_t j = 0; j < size; ++j)
      if (i != j) require(q(i, j) >= 0.0, "off-diagonals of Q >= 0");
    require(a(i) > 0.0, "diffusion coefficients a(y) > 0");
    require(r(i) >= 0.0, "fission rates r(y) >= 0");
    require(std::isfinite(offspring[i].mean()), "offspring means finite");
    if (r(i) == 0.0) require(offspring[i].probability(0) == 1.0, "r(y) = 0 implies offspring {p_0 = 1}");
  }
  // Irreducibility: every type reachable from type 0 and vice versa.
  for (const bool forward : {true, false}) {
    std::vector<bool> seen(size, false);
    std::vector<std::size_t> todo{0};
    seen[0] = true;
    while (!todo.empty()) {
      const std::size_t i = todo.back();
      todo.pop_back();
      for (std::size_t j = 0; j < size; ++j) {
        const double rate = forward ? q(i, j) : q(j, i);
        if (j != i && rate > 0.0 && !seen[j]) seen[j] = true, todo.push_back(j);
      }
    }
    for (bool s : seen) require(s, "Q irreducible");
  }
  const Eigen::VectorXd computed = stationary_law(q);
  if (pi.size() == 0) {
    pi = computed;
  } else {
    require(static_cast<std::size_t>(pi.size()) == size, "pi has one entry per type");
    require((pi - computed).cwiseAbs().maxCoeff() <= 1e-8, "supplied pi agrees with the null vector of Q");
  }
  require((pi.array() > 0.0).all(), "pi > 0");
  require(std::abs(pi.sum() - 1.0) <= 1e-10, "sum of pi = 1");
  require((pi.transpose() * q).cwiseAbs().maxCoeff() <= 1e-10, "πQ = 0");
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j)
      require(std::abs(pi(i) * q(i, j) - pi(j) * q(j, i)) <= 1e-10,
              "detailed balance π_i Q(i,j) = π_j Q(j,i)");
  require(y0 < size, "initial type y0 < n");
  require(std::isfinite(x0), "x0 finite");
  return *this;
}

inline double pi_inner(const Eigen::VectorXd& u, const Eigen::VectorXd& v, const Eigen::VectorXd& pi) {
  require(u.size() == v.size() && v.size() == pi.size(), "pi_inner operands have matching lengths");
  return (u.array() * v.array() * pi.array()).sum();
}

/// 1/2 lambda^2 A + theta Q + M R.
inline Eigen::MatrixXd typed_operator(const TypedParams& params, double lambda) {
  Eigen::MatrixXd h = params.theta * params.q;
  h.diagonal() += 0.5 * lambda * lambda * params.a + params.means().cwiseProduct(params.r);
  return h;
}

struct TypedSpectral {
  double lambda = 0.0;
  double e_lambda = 0.0;
  Eigen::VectorXd v;
  std::optional<double> c_lambda;
  double e_prime = 0.0;
  double residual = 0.0;
};

namespace detail {

inline constexpr double kEigenResidualTolerance = 1e-10;

/// Rightmost eigenpair of the operator, for any real lambda.
inline TypedSpectral rightmost_eigenpair(const TypedParams& params, double lambda) {
  const Eigen::MatrixXd h = typed_operator(params, lambda);
  const Eigen::ArrayXd root_pi = params.pi.array().sqrt();
  Eigen::MatrixXd sym = root_pi.matrix().asDiagonal() * h * root_pi.inverse().matrix().asDiagonal();
  sym = 0.5 * (sym + sym.transpose()).eval();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success) fail(ErrorCode::NonConverged, "symmetric eigensolve failed");

  TypedSpectral s;
  s.lambda = lambda;
  const Eigen::Index top = sym.rows() - 1;
  s.e_lambda = solver.eigenvalues()(top);
  Eigen::VectorXd v = (solver.eigenvectors().col(top).array() / root_pi).matrix();
  Eigen::Index largest = 0;
  v.cwiseAbs().maxCoeff(&largest);
  if (v(largest) < 0.0) v = -v;
  v /= std::sqrt(pi_inner(v, v, params.pi));
  if (!(v.array() > 0.0).all())
    fail(ErrorCode::NonConverged, "Perron eigenvector has a non-positive component");
  s.residual = (h * v - s.e_lambda * v).cwiseAbs().maxCoeff();
  if (!(s.residual <= kEigenResidualTolerance))
    fail(ErrorCode::NonConverged, "eigen residual " + std::to_string(s.residual) + " exceeds 1e-10");
  s.v = std::move(v);
  if (lambda < 0.0) s.c_lambda = -s.e_lambda / lambda;
  s.e_prime = lambda * pi_inner(params.a.cwiseProduct(s.v), s.v, params.pi);
  return s;
}

}  // namespace detail

inline TypedSpectral typed_spectral(const TypedParams& params, double lambda) {
  check_nonpositive_lambda(lambda);
  return detail::rightmost_eigenpair(params, lambda);
}

/// Central difference (E_{lambda+h} - E_{lambda-h}) / 2h.
inline double e_prime_check(const TypedParams& params, double lambda, double h) {
  require(h > 0.0, "finite-difference step h > 0");
  return (detail::rightmost_eigenpair(params, lambda + h).e_lambda -
          detail::rightmost_eigenpair(params, lambda - h).e_lambda) /
         (2.0 * h);
}

/// Minimiser of c_lambda on (-inf, 0): the root of E_lambda - lambda E'_lambda.
inline double lambda_tilde_typed(const TypedParams& params) {
  const auto g = [&](double lambda) {
    const TypedSpectral s = detail::rightmost_eigenpair(params, lambda);
    return s.e_lambda - lambda * s.e_prime;
  };
  double hi = -1e-3;
  if (!(g(hi) > 0.0)) fail(ErrorCode::BracketFailure, "E_λ - λE'_λ is not positive near λ = 0");
  double lo = 2.0 * hi;
  while (g(lo) >= 0.0) {
    hi = lo;
    lo *= 2.0;
    if (lo < -1e3) fail(ErrorCode::BracketFailure, "no sign change of E_λ - λE'_λ within |λ| <= 1e3");
  }
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) >= 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Generator theta*Q_lambda of the spine's type chain under Q~_lambda.
struct QLambda {
  Eigen::MatrixXd generator;
  /// True when the diagonal theta Q(i,i) + lambda^2 a(i)/2 - E + r(i) already
  /// gives zero row sums; otherwise the diagonal is the negated off-diagonal
  /// row sum, which equals theta Q(i,i) + lambda^2 a(i)/2 - E + m(i) r(i).
  bool printed_diagonal_used = true;
  /// Largest row-sum defect of the r(i) diagonal form.
  double printed_row_sum_defect = 0.0;
};

inline QLambda q_lambda_matrix(const TypedParams& params, const TypedSpectral& spec) {
  const std::size_t n = params.n();
  QLambda out;
  out.generator.resize(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) out.generator(i, j) = params.theta * params.q(i, j) * spec.v(j) / spec.v(i);
    }
    out.generator(i, i) = params.theta * params.q(i, i) + 0.5 * spec.lambda * spec.lambda * params.a(i) -
                          spec.e_lambda + params.r(i);
    out.printed_row_sum_defect = std::max(out.printed_row_sum_defect, std::abs(out.generator.row(i).sum()));
  }
  if (out.printed_row_sum_defect > 1e-10) {
    out.printed_diagonal_used = false;
    for (std::size_t i = 0; i < n; ++i) {
      double off = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) off += out.generator(i, j);
      out.generator(i, i) = -off;
    }
  }
  return out;
}

inline ConvergenceVerdict classify_typed(const TypedParams& params, double lambda,
                                         std::optional<double> p = std::nullopt) {
  check_nonpositive_lambda(lambda);
  check_moment_order(p);
  if (!p) {
    const double tilde = lambda_tilde_typed(params);
    if (lambda <= tilde)
      return {Regime::AsZero, "typed.l1.lambda_le_tilde", "λ ≤ λ̃(θ): Z_λ(∞) = 0 almost surely"};
    for (const auto& d : params.offspring)
      if (!std::isfinite(d.xlogx()))
        return {Regime::AsZero, "typed.l1.xlogx_infinite",
                "λ ∈ (λ̃(θ), 0] and P(A(y) log+ A(y)) = ∞ for some y: Z_λ(∞) = 0 almost surely"};
    return {Regime::L1Convergent, "typed.l1.convergent",
            "λ ∈ (λ̃(θ), 0] and P(A(y) log+ A(y)) < ∞ for all y: convergence a.s. and in L1"};
  }
  for (const auto& d : params.offspring)
    if (!std::isfinite(d.p_moment(*p)))
      return {Regime::LpUnbounded, "typed.lp.moment_infinite", "P(A(y)^p) = ∞ for some y: unbounded in Lp"};
  const double e = typed_spectral(params, lambda).e_lambda;
  const double e_p = typed_spectral(params, *p * lambda).e_lambda;
  if (near_equal(*p * e, e_p))
    return {Regime::BoundaryUndetermined, "typed.lp.boundary", "pE_λ = E_pλ: both Lp criteria are strict"};
  if (*p * e - e_p > 0.0)
    return {Regime::LpConvergent, "typed.lp.convergent",
            "pE_λ - E_pλ > 0 and P(A(y)^p) < ∞ for all y: convergence a.s. and in Lp"};
  return {Regime::LpUnbounded, "typed.lp.gap_negative", "pE_λ - E_pλ < 0: unbounded in Lp"};
}

/// Exponential decay rate -lambda (c_lambda - c_tilde) of Z_lambda(t) for lambda < lambda_tilde.
inline double decay_rate_typed(const TypedParams& params, double lambda) {
  const double tilde = lambda_tilde_typed(params);
  if (!(lambda < tilde)) fail(ErrorCode::OutOfDomain, "decay rate needs λ < λ̃(θ)");
  const double c = *typed_spectral(params, lambda).c_lambda;
  const double c_tilde = *typed_spectral(params, tilde).c_lambda;
  return -lambda * (c - c_tilde);
}

/// Asymptotic speed of the left-most particle, -c at lambda_tilde.
inline double lmp_speed_typed(const TypedParams& params) {
  return -*typed_spectral(params, lambda_tilde_typed(params)).c_lambda;
}

/// Per-particle dynamics: competing exponential clocks for type jumps and
/// fission, exact Gaussian displacement in between.
class TypedDynamics {
 public:
  TypedDynamics(const TypedParams& params, const Eigen::MatrixXd& spine_generator, double lambda)
      : plain_(rates(params.theta * params.q, params.r, params.a, 0.0, params.offspring)),
        spine_(rates(spine_generator, (params.means().array() + 1.0).matrix().cwiseProduct(params.r),
                     params.a, lambda, biased(params.offspring))) {}

  LifeEnd live(Particle<std::size_t>& p, double horizon, StreamKey key) const {
    return advance(plain_, p, horizon, key);
  }
  LifeEnd live_spine(Particle<std::size_t>& p, double horizon, StreamKey key) const {
    return advance(spine_, p, horizon, key);
  }
  TypePoint type_point(std::size_t y) const { return y; }

 private:
  struct Rates {
    std::vector<double> leave;  // total type-jump rate
    std::vector<std::vector<double>> jump_cdf;
    std::vector<double> fission;
    std::vector<double> sd_rate;  // sqrt(a)
    std::vector<double> drift;    // a * lambda
    std::vector<OffspringDist> offspring;
  };

  static std::vector<OffspringDist> biased(const std::vector<OffspringDist>& laws) {
    std::vector<OffspringDist> out;
    for (const auto& d : laws) out.push_back(d.size_biased());
    return out;
  }

  static Rates rates(const Eigen::MatrixXd& gen, const Eigen::VectorXd& fission, const Eigen::VectorXd& a,
                     double lambda, std::vector<OffspringDist> laws) {
    const auto n = static_cast<std::size_t>(gen.rows());
    Rates out;
    out.offspring = std::move(laws);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> cdf(n, 0.0);
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) acc += gen(i, j);
        cdf[j] = acc;
      }
      out.leave.push_back(acc);
      out.jump_cdf.push_back(std::move(cdf));
      out.fission.push_back(fission(i));
      out.sd_rate.push_back(std::sqrt(a(i)));
      out.drift.push_back(a(i) * lambda);
    }
    return out;
  }

  static LifeEnd advance(const Rates& k, Particle<std::size_t>& p, double horizon, StreamKey key) {
    RandomStream rng(key, p.id, substream::kLife);
    while (true) {
      const std::size_t y = p.type;
      const double total = k.leave[y] + k.fission[y];
      const double wait = total > 0.0 ? rng.exponential(total) : std::numeric_limits<double>::infinity();
      const double dt = std::min(wait, horizon - p.time);
      p.x += k.drift[y] * dt + k.sd_rate[y] * std::sqrt(dt) * rng.normal();
      if (p.time + wait > horizon) {
        p.time = horizon;
        return {};
      }
      p.time += wait;
      const double u = rng.uniform() * total;
      if (u < k.fission[y]) return {true, k.offspring[y].sample(rng)};
      const double target = rng.uniform() * k.leave[y];
      const auto& cdf = k.jump_cdf[y];
      std::size_t next = 0;
      while (next + 1 < cdf.size() && (cdf[next] <= target || next == y)) ++next;
      p.type = next;
    }
  }

  Rates plain_;
  Rates spine_;
};

inline Particle<std::size_t> typed_root(const TypedParams& params) {
  Particle<std::size_t> root;
  root.x = params.x0;
  root.type = params.y0;
  return root;
}

inline Snapshot simulate_p_typed(const TypedParams& params, double t, StreamKey key, const SimOptions& opts = {}) {
  require(t >= 0.0, "horizon t >= 0");
  const TypedDynamics dyn(params, params.theta * params.q, 0.0);
  return grow_snapshot(dyn, typed_root(params), t, key, opts);
}

inline Snapshot simulate_p_typed(const TypedParams& params, double t, std::uint64_t seed,
                                 std::size_t cap = kDefaultCap) {
  return simulate_p_typed(params, t, StreamKey::from(seed, 0), SimOptions{cap});
}

inline std::pair<Snapshot, SpineRecord> simulate_q_typed(const TypedParams& params, double lambda, double t,
                                                         StreamKey key, const SimOptions& opts = {}) {
  require(t >= 0.0, "horizon t >= 0");
  const TypedSpectral spec = typed_spectral(params, lambda);
  const TypedDynamics dyn(params, q_lambda_matrix(params, spec).generator, lambda);
  SpineRecord rec;
  Snapshot snap = grow_snapshot(dyn, typed_root(params), t, key, opts, &rec);
  return {std::move(snap), std::move(rec)};
}

inline std::pair<Snapshot, SpineRecord> simulate_q_typed(const TypedParams& params, double lambda, double t,
                                                         std::uint64_t seed, std::size_t cap = kDefaultCap) {
  return simulate_q_typed(params, lambda, t, StreamKey::from(seed, 0), SimOptions{cap});
}

/// Z_lambda(t) = sum_u v_lambda(Y_u) exp(lambda X_u - E_lambda t).
inline double z_lambda_typed(const Snapshot& snap, const TypedSpectral& spec) {
  double z = 0.0;
  for (const auto& p : snap.particles)
    z += spec.v(static_cast<Eigen::Index>(std::get<std::size_t>(p.type))) *
         std::exp(spec.lambda * p.position - spec.e_lambda * snap.horizon);
  return z;
}

/// sum_k A_k v(eta_Sk) e^{lambda (xi_Sk + c S_k)} + v(eta_t) e^{lambda (xi_t + c t)}; needs lambda < 0.
inline double spine_decomposition_typed(const SpineRecord& rec, const TypedSpectral& spec) {
  require(spec.c_lambda.has_value(), "spine decomposition in speed form needs λ < 0");
  const double c = *spec.c_lambda;
  const auto v_at = [&](const TypePoint& y) { return spec.v(static_cast<Eigen::Index>(std::get<std::size_t>(y))); };
  double total = 0.0;
  for (std::size_t k = 0; k < rec.fission_count(); ++k) {
    total += static_cast<double>(rec.extra_offspring[k]) * v_at(rec.states_at_fission[k].type) *
             std::exp(spec.lambda * (rec.states_at_fission[k].position + c * rec.fission_times[k]));
  }
  return total + v_at(rec.terminal.type) * std::exp(spec.lambda * (rec.terminal.position + c * rec.horizon));
}

}  // namespace spinelab

#endif  // SPINELAB_MULTITYPE_HPP

#ifndef SPINELAB_MC_HPP
#define SPINELAB_MC_HPP

// Monte Carlo harness: replicate orchestration and the verification
// experiments (martingale mean, change of measure, Lp growth, spine laws,
// spine decomposition, left-most particle).
//
// Replicate i always draws from StreamKey::from(experiment seed, i) and
// results are reduced in replicate order, so every estimate is bit-identical
// for any number of workers.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "spinelab/engine.hpp"
#include "spinelab/errors.hpp"
#include "spinelab/models.hpp"
#include "spinelab/random.hpp"

namespace spinelab {

struct Estimate {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
  double extinct_fraction = 0.0;
  /// Largest single-replicate share of the sample sum.
  double max_share = 0.0;
  /// max_share above 1/2: the sample is dominated by one replicate.
  bool unreliable = false;
};

/// Relative SE above which an estimate is reported as imprecise.
inline constexpr double kHighRelativeSe = 0.25;

/// CSV flag: UNRELIABLE (one replicate dominates), HIGH_REL_SE or OK.
inline std::string_view flag(const Estimate& e) {
  if (e.unreliable) return "UNRELIABLE";
  if (e.se > kHighRelativeSe * std::abs(e.mean)) return "HIGH_REL_SE";
  return "OK";
}

struct GrowthCurve {
  std::vector<double> times;
  std::vector<Estimate> values;
  double fitted_log_slope = 0.0;
  double slope_half_width = 0.0;  // 3 standard errors
};

struct McConfig {
  std::uint64_t seed = 1;
  std::size_t reps = 1000;
  /// 0 means SPINELAB_WORKERS, else hardware concurrency.
  std::size_t workers = 0;
  SimOptions sim{};
};

inline std::size_t resolve_workers(std::size_t requested) {
  if (requested > 0) return requested;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SPINELAB_WORKERS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap > 0) workers = std::min(workers, static_cast<std::size_t>(cap));
  }
  return workers;
}

/// Pairwise summation; the result depends only on the order of `values`.
inline double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

inline Estimate summarize(std::span<const double> samples, double extinct_fraction = 0.0) {
  require(samples.size() >= 2, "estimate needs n >= 2 replicates");
  Estimate e;
  e.n = samples.size();
  const double total = pairwise_sum(samples);
  e.mean = total / static_cast<double>(e.n);
  std::vector<double> sq(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) sq[i] = (samples[i] - e.mean) * (samples[i] - e.mean);
  const double var = pairwise_sum(sq) / static_cast<double>(e.n - 1);
  e.se = std::sqrt(var / static_cast<double>(e.n));
  e.extinct_fraction = extinct_fraction;
  if (total != 0.0) {
    double largest = 0.0;
    for (double v : samples) largest = std::max(largest, std::abs(v));
    e.max_share = largest / std::abs(total);
  }
  e.unreliable = e.max_share > 0.5;
  return e;
}

/// Runs f(i) for i in [0, n) on a worker pool; results in index order. If
/// replicates fail, the lowest failing index is rethrown.
template <class F>
auto run_replicates(std::size_t n, F&& f, std::size_t workers = 0) {
  using R = decltype(f(std::size_t{0}));
  std::vector<R> results(n);
  workers = std::min(resolve_workers(workers), std::max<std::size_t>(n, 1));
  std::atomic<std::size_t> first_failure{n};
  std::vector<std::exception_ptr> errors(n);
  const auto body = [&](std::size_t w) {
    for (std::size_t i = w; i < n; i += workers) {
      if (i > first_failure.load()) break;
      try {
        results[i] = f(i);
      } catch (...) {
        errors[i] = std::current_exception();
        std::size_t cur = first_failure.load();
        while (i < cur && !first_failure.compare_exchange_weak(cur, i)) {
        }
      }
    }
  };
  if (workers <= 1) {
    body(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body, w);
    for (auto& t : pool) t.join();
  }
  if (const std::size_t bad = first_failure.load(); bad < n) {
    try {
      std::rethrow_exception(errors[bad]);
    } catch (const Error& e) {
      throw Error(e.code(), e.message() + " (replicate " + std::to_string(bad) + ")");
    }
  }
  return results;
}

namespace detail {

/// Independent seed for one side of an experiment.
inline std::uint64_t experiment_seed(std::uint64_t seed, std::uint64_t tag) { return splitmix64(seed ^ splitmix64(tag)); }

inline constexpr std::uint64_t kTagP = 0x50;
inline constexpr std::uint64_t kTagQ = 0x51;
inline constexpr std::uint64_t kTagBurn = 0x52;
inline constexpr std::uint64_t kTagSkeleton = 0x53;
inline constexpr std::uint64_t kTagSubtree = 0x54;
inline constexpr std::uint64_t kTagMoment = 0x55;

template <class Model>
Snapshot run_p(const Model& model, double t, StreamKey key, const SimOptions& opts) {
  return grow_snapshot(model.dynamics(), model.root(), t, key, opts);
}

template <class Model>
std::pair<Snapshot, SpineRecord> run_q(const Model& model, Particle<typename Model::Type> root, double t,
                                       StreamKey key, const SimOptions& opts) {
  SpineRecord rec;
  Snapshot snap = grow_snapshot(model.dynamics(), std::move(root), t, key, opts, &rec);
  return {std::move(snap), std::move(rec)};
}

}  // namespace detail

/// Mean and SE of Z_lambda(t) under P.
template <class Model>
Estimate estimate_martingale_mean(const Model& model, double t, const McConfig& cfg) {
  const std::uint64_t seed = detail::experiment_seed(cfg.seed, detail::kTagP);
  struct Rep {
    double z = 0.0;
    bool extinct = false;
  };
  const auto reps = run_replicates(
      cfg.reps,
      [&](std::size_t i) {
        const Snapshot snap = detail::run_p(model, t, StreamKey::from(seed, i), cfg.sim);
        return Rep{model.z(snap), snap.extinct};
      },
      cfg.workers);
  std::vector<double> z(reps.size());
  std::size_t extinct = 0;
  for (std::size_t i = 0; i < reps.size(); ++i) z[i] = reps[i].z, extinct += reps[i].extinct;
  return summarize(z, static_cast<double>(extinct) / static_cast<double>(reps.size()));
}

/// Least-squares slope of log(mean) against time over points with t >= fit_from,
/// weighted by the delta-method variance (se/mean)^2.
inline void fit_log_slope(GrowthCurve& curve, double fit_from) {
  double sw = 0, swt = 0, swy = 0, swtt = 0, swty = 0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < curve.times.size(); ++i) {
    const Estimate& e = curve.values[i];
    if (curve.times[i] < fit_from || !(e.mean > 0.0)) continue;
    const double rel = e.se / e.mean;
    const double w = rel > 0.0 ? 1.0 / (rel * rel) : 1e12;
    const double t = curve.times[i];
    const double y = std::log(e.mean);
    sw += w, swt += w * t, swy += w * y, swtt += w * t * t, swty += w * t * y;
    ++used;
  }
  require(used >= 2, "growth-curve fit needs two positive points after burn-in");
  const double denom = sw * swtt - swt * swt;
  curve.fitted_log_slope = (sw * swty - swt * swy) / denom;
  curve.slope_half_width = 3.0 * std::sqrt(sw / denom);
}

/// Mean of Z_lambda(t) under P on a time grid. Every time point reuses the
/// same replicate streams, so the curve follows one set of coupled trees.
template <class Model>
GrowthCurve estimate_martingale_curve(const Model& model, std::span<const double> times, const McConfig& cfg) {
  require(!times.empty() && std::is_sorted(times.begin(), times.end()), "time grid nonempty and increasing");
  GrowthCurve curve;
  curve.times.assign(times.begin(), times.end());
  for (double t : times) curve.values.push_back(estimate_martingale_mean(model, t, cfg));
  if (times.size() >= 2) fit_log_slope(curve, 0.0);
  return curve;
}

/// E_P[Z_lambda(t)^p] on a time grid, estimated under the spine measure as
/// Z(0) E_Q[Z(t)^(p-1)]. For p = 2 the inner expectation is replaced by its
/// conditional value given the spine (the spine decomposition), so only the
/// spine is simulated.
template <class Model>
GrowthCurve estimate_p_moment_curve(const Model& model, double p, std::span<const double> times,
                                    const McConfig& cfg, double fit_from = 0.0) {
  require(p > 1.0 && p <= 2.0, "p in (1, 2]");
  require(!times.empty() && std::is_sorted(times.begin(), times.end()), "time grid nonempty and increasing");
  GrowthCurve curve;
  curve.times.assign(times.begin(), times.end());
  const bool spine_only = p == 2.0;
  SimOptions opts = cfg.sim;
  opts.subtrees = !spine_only;
  for (std::size_t k = 0; k < times.size(); ++k) {
    const std::uint64_t seed = detail::experiment_seed(cfg.seed, detail::kTagMoment + 0x100 * (k + 1));
    const double t = times[k];
    const auto samples = run_replicates(
        cfg.reps,
        [&](std::size_t i) {
          auto [snap, rec] = detail::run_q(model, model.root(), t, StreamKey::from(seed, i), opts);
          const double inner = spine_only ? model.spine_decomposition(rec) : std::pow(model.z(snap), p - 1.0);
          return model.z0() * inner;
        },
        cfg.workers);
    curve.values.push_back(summarize(samples));
  }
  fit_log_slope(curve, fit_from);
  return curve;
}

struct RnConsistency {
  Estimate p_side;  // E_P[F Z(t)] / Z(0)
  Estimate q_side;  // E_Q[F]
  double z_score = 0.0;
};

/// Standard errors at rounding level count as zero.
inline double z_score(double a, double b, double se) {
  const double scale = 1e-12 * std::max(1.0, std::abs(b));
  if (se > scale) return (a - b) / se;
  return std::abs(a - b) <= scale ? 0.0 : std::copysign(INFINITY, a - b);
}

/// The bounded population functional F = exp(-|N_t|).
inline double exp_neg_popsize(const Snapshot& snap) { return std::exp(-static_cast<double>(snap.size())); }

template <class Model>
RnConsistency rn_consistency(const Model& model, double t, const McConfig& cfg) {
  const std::uint64_t seed_p = detail::experiment_seed(cfg.seed, detail::kTagP);
  const std::uint64_t seed_q = detail::experiment_seed(cfg.seed, detail::kTagQ);
  const double z0 = model.z0();
  const auto left = run_replicates(
      cfg.reps,
      [&](std::size_t i) {
        const Snapshot snap = detail::run_p(model, t, StreamKey::from(seed_p, i), cfg.sim);
        return exp_neg_popsize(snap) * model.z(snap) / z0;
      },
      cfg.workers);
  const auto right = run_replicates(
      cfg.reps,
      [&](std::size_t i) {
        return exp_neg_popsize(detail::run_q(model, model.root(), t, StreamKey::from(seed_q, i), cfg.sim).first);
      },
      cfg.workers);
  RnConsistency out{summarize(left), summarize(right), 0.0};
  out.z_score = z_score(out.p_side.mean, out.q_side.mean, std::hypot(out.p_side.se, out.q_side.se));
  return out;
}

struct StatCheck {
  std::string name;
  double estimate = 0.0;
  double se = 0.0;
  double target = 0.0;
  double z = 0.0;
  bool pass = false;
};

struct SpineReport {
  double horizon = 0.0;
  double burn_in = 0.0;
  std::vector<StatCheck> checks;

  bool all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const StatCheck& c) { return c.pass; });
  }
  const StatCheck& find(std::string_view name) const {
    for (const auto& c : checks)
      if (c.name == name) return c;
    fail(ErrorCode::ConfigInvalid, "no spine statistic named " + std::string(name));
  }
};

namespace detail {

inline StatCheck make_check(std::string name, double estimate, double se, double target) {
  StatCheck c{std::move(name), estimate, se, target, z_score(estimate, target, se), false};
  c.pass = std::abs(c.z) <= 3.0;
  return c;
}

/// Sample variance with the SE of the variance estimator, sqrt((m4 - s^4)/n).
inline std::pair<double, double> variance_with_se(std::span<const double> x) {
  const auto n = static_cast<double>(x.size());
  const double mean = pairwise_sum(x) / n;
  std::vector<double> d2(x.size()), d4(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - mean;
    d2[i] = d * d;
    d4[i] = d2[i] * d2[i];
  }
  const double m2 = pairwise_sum(d2) / n;
  const double m4 = pairwise_sum(d4) / n;
  return {m2 * n / (n - 1.0), std::sqrt(std::max(0.0, m4 - m2 * m2) / n)};
}

}  // namespace detail

/// Spine fission count, terminal position and (finite-type) terminal type on
/// [0, t] under Q~, after a burn-in that puts the spine's type in its
/// stationary law. Each statistic carries a 3-SE verdict against its target.
template <class Model>
SpineReport spine_statistics(const Model& model, double t, const McConfig& cfg) {
  const double burn = model.burn_in();
  const std::uint64_t seed_burn = detail::experiment_seed(cfg.seed, detail::kTagBurn);
  const std::uint64_t seed_q = detail::experiment_seed(cfg.seed, detail::kTagQ);
  SimOptions opts = cfg.sim;
  opts.subtrees = false;
  opts.track_labels = false;
  struct Rep {
    double fissions = 0.0;
    double displacement = 0.0;
    TypePoint type;
  };
  const auto reps = run_replicates(
      cfg.reps,
      [&](std::size_t i) {
        auto start = model.root();
        if (burn > 0.0) {
          const auto warm = detail::run_q(model, model.root(), burn, StreamKey::from(seed_burn, i), opts).second;
          start = model.particle_at(0.0, model.root().x, warm.terminal.type);
        }
        const auto rec = detail::run_q(model, start, t, StreamKey::from(seed_q, i), opts).second;
        return Rep{static_cast<double>(rec.fission_count()), rec.terminal.position, rec.terminal.type};
      },
      cfg.workers);

  const SpineTargets target = model.spine_targets(t);
  SpineReport report{t, burn, {}};
  std::vector<double> fissions(reps.size()), positions(reps.size());
  for (std::size_t i = 0; i < reps.size(); ++i) fissions[i] = reps[i].fissions, positions[i] = reps[i].displacement;

  const Estimate nf = summarize(fissions);
  report.checks.push_back(detail::make_check("fission_count_mean", nf.mean, nf.se, target.fission_mean));
  if (target.fission_variance) {
    const auto [var, se] = detail::variance_with_se(fissions);
    report.checks.push_back(detail::make_check("fission_count_variance", var, se, *target.fission_variance));
  }
  const Estimate pos = summarize(positions);
  report.checks.push_back(detail::make_check("position_mean", pos.mean, pos.se, target.position_mean));
  if (t > 0.0) {
    const double x0 = model.root().x;
    report.checks.push_back(detail::make_check("drift_rate", (pos.mean - x0) / t, pos.se / t,
                                               (target.position_mean - x0) / t));
  }
  if (target.position_variance) {
    const auto [var, se] = detail::variance_with_se(positions);
    report.checks.push_back(detail::make_check("position_variance", var, se, *target.position_variance));
  }
  for (std::size_t y = 0; y < target.occupation.size(); ++y) {
    std::vector<double> hit(reps.size());
    for (std::size_t i = 0; i < reps.size(); ++i) hit[i] = std::get<std::size_t>(reps[i].type) == y ? 1.0 : 0.0;
    const Estimate occ = summarize(hit);
    report.checks.push_back(
        detail::make_check("occupation_" + std::to_string(y), occ.mean, occ.se, target.occupation[y]));
  }
  return report;
}

struct DecompositionCheck {
  double spine_value = 0.0;  // closed-form conditional expectation
  Estimate resimulated;      // Z(t) with the skeleton fixed, subtrees redrawn
  double z_score = 0.0;
  SpineRecord skeleton;
};

/// Z(t) for a fixed spine skeleton with freshly simulated off-spine subtrees.
template <class Model>
double resimulate_off_spine(const Model& model, const SpineRecord& rec, StreamKey key, const SimOptions& opts) {
  SimOptions sub = opts;
  sub.track_labels = false;
  SnapshotSink sink;
  std::uint64_t id = kRootParticleId;
  for (std::size_t k = 0; k < rec.fission_count(); ++k) {
    const std::uint64_t children = rec.extra_offspring[k] + 1;
    for (std::uint64_t c = 1; c <= children; ++c) {
      if (c == rec.chosen_child[k]) continue;
      auto root = model.particle_at(rec.fission_times[k], rec.states_at_fission[k].position,
                                    rec.states_at_fission[k].type);
      root.id = child_particle_id(id, static_cast<std::uint32_t>(c));
      grow(model.dynamics(), std::move(root), rec.horizon, key, sub, sink);
      if (sink.snapshot.size() > opts.cap) detail::explode(opts.cap);
    }
    id = child_particle_id(id, rec.chosen_child[k]);
  }
  sink.snapshot.particles.push_back({Label{}, rec.terminal.position, rec.terminal.type, 0.0});
  sink.snapshot.horizon = rec.horizon;
  return model.z(sink.snapshot);
}

template <class Model>
DecompositionCheck spine_decomp_check(const Model& model, double t, std::size_t subtree_reps, const McConfig& cfg) {
  SimOptions opts = cfg.sim;
  opts.subtrees = false;
  const std::uint64_t seed_skeleton = detail::experiment_seed(cfg.seed, detail::kTagSkeleton);
  const std::uint64_t seed_sub = detail::experiment_seed(cfg.seed, detail::kTagSubtree);
  DecompositionCheck out;
  out.skeleton = detail::run_q(model, model.root(), t, StreamKey::from(seed_skeleton, 0), opts).second;
  out.spine_value = model.spine_decomposition(out.skeleton);
  const auto samples = run_replicates(
      subtree_reps,
      [&](std::size_t i) { return resimulate_off_spine(model, out.skeleton, StreamKey::from(seed_sub, i), cfg.sim); },
      cfg.workers);
  out.resimulated = summarize(samples);
  out.z_score = z_score(out.resimulated.mean, out.spine_value, out.resimulated.se);
  return out;
}

/// Left-most particle L(t)/t under P (L(0) itself when t = 0). Requires
/// p_0 = 0 for every type.
template <class Model>
Estimate lmp_estimate(const Model& model, double t, const McConfig& cfg) {
  require(model.survives_surely(), "left-most particle estimate needs p_0 = 0 for all types");
  require(t >= 0.0, "horizon t >= 0");
  const std::uint64_t seed = detail::experiment_seed(cfg.seed, detail::kTagP);
  SimOptions opts = cfg.sim;
  opts.track_labels = false;
  const auto samples = run_replicates(
      cfg.reps,
      [&](std::size_t i) {
        LeftmostSink sink;
        grow(model.dynamics(), model.root(), t, StreamKey::from(seed, i), opts, sink);
        return t > 0.0 ? sink.leftmost / t : sink.leftmost;
      },
      cfg.workers);
  return summarize(samples);
}

}  // namespace spinelab

#endif  // SPINELAB_MC_HPP

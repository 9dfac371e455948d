#ifndef SPINELAB_ENGINE_HPP
#define SPINELAB_ENGINE_HPP

// Model-independent driver for event-driven branching simulation.
//
// Particles are processed depth-first. Each particle's randomness comes from
// streams keyed by its own Ulam-Harris position, so processing order has no
// effect on the sample path. A dynamics policy evolves one particle until it
// either reaches the horizon or undergoes fission:
//
//   LifeEnd live(Particle<T>&, double horizon, StreamKey) const;        // P
//   LifeEnd live_spine(Particle<T>&, double horizon, StreamKey) const;  // Q~
//   TypePoint type_point(const T&) const;

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spinelab/errors.hpp"
#include "spinelab/random.hpp"
#include "spinelab/trees.hpp"

namespace spinelab {

inline constexpr std::size_t kDefaultCap = 1'000'000;

/// Substream indices within a particle's stream family.
namespace substream {
inline constexpr std::uint32_t kLife = 0;
inline constexpr std::uint32_t kSpineChoice = 1;
inline constexpr std::uint32_t kFissionPoint = 2;
inline constexpr std::uint32_t kGridBase = 16;
}  // namespace substream

template <class T>
struct Particle {
  double time = 0.0;
  double x = 0.0;
  T type{};
  std::uint64_t id = kRootParticleId;
  Label label;
  bool spine = false;
};

/// Outcome of one particle's life segment. On fission the particle's state
/// holds the fission time and location, and `extra` is A (1 + A children).
struct LifeEnd {
  bool fission = false;
  std::uint64_t extra = 0;
};

struct SimOptions {
  std::size_t cap = kDefaultCap;
  /// When false, non-spine children of the spine are not simulated.
  bool subtrees = true;
  bool track_labels = true;
};

/// Collects the horizon population into a Snapshot.
struct SnapshotSink {
  Snapshot snapshot;

  template <class Dyn, class T>
  void operator()(const Dyn& dyn, const Particle<T>& p) {
    snapshot.particles.push_back({p.label, p.x, dyn.type_point(p.type), 0.0});
  }
};

/// Tracks the minimum position of the horizon population.
struct LeftmostSink {
  double leftmost = std::numeric_limits<double>::infinity();
  std::size_t count = 0;

  template <class Dyn, class T>
  void operator()(const Dyn&, const Particle<T>& p) {
    leftmost = std::min(leftmost, p.x);
    ++count;
  }
};

namespace detail {

inline void explode(std::size_t cap) {
  fail(ErrorCode::PopulationExplosion,
       "alive population exceeds cap " + std::to_string(cap) + "; shorten the horizon or raise the cap");
}

}  // namespace detail

/// Runs the branching system from `root` to `horizon`. If `spine` is non-null
/// the root is the spine and its skeleton is recorded.
template <class Dyn, class T, class Sink>
void grow(const Dyn& dyn, Particle<T> root, double horizon, StreamKey key, const SimOptions& opts,
          Sink& sink, SpineRecord* spine = nullptr) {
  struct Pending {
    Particle<T> particle;
    double birth;
  };
  std::vector<Pending> stack;
  root.spine = spine != nullptr;
  const double root_birth = root.time;
  stack.push_back({std::move(root), root_birth});
  std::size_t finished = 0;
  if (spine) {
    *spine = SpineRecord{};
    spine->horizon = horizon;
  }

  while (!stack.empty()) {
    Pending item = std::move(stack.back());
    stack.pop_back();
    Particle<T>& p = item.particle;
    const LifeEnd end = p.spine ? dyn.live_spine(p, horizon, key) : dyn.live(p, horizon, key);
    if (!end.fission) {
      if constexpr (requires { sink.snapshot; }) {
        sink(dyn, p);
        sink.snapshot.particles.back().birth_time = item.birth;
      } else {
        sink(dyn, p);
      }
      ++finished;
      if (p.spine && spine) {
        spine->terminal = {p.x, dyn.type_point(p.type)};
        spine->spine_label = p.label;
      }
      continue;
    }

    const std::uint64_t children = end.extra + 1;
    if (children > opts.cap || finished + stack.size() + children > opts.cap) detail::explode(opts.cap);

    std::uint64_t spine_child = 0;
    if (p.spine) {
      RandomStream choice(key, p.id, substream::kSpineChoice);
      spine_child = 1 + choice.below(children);
      spine->fission_times.push_back(p.time);
      spine->states_at_fission.push_back({p.x, dyn.type_point(p.type)});
      spine->extra_offspring.push_back(end.extra);
      spine->chosen_child.push_back(static_cast<std::uint32_t>(spine_child));
    }
    // Reverse push so that child 1 is processed first (lexicographic order).
    for (std::uint64_t i = children; i >= 1; --i) {
      const bool is_spine = p.spine && i == spine_child;
      if (p.spine && !is_spine && !opts.subtrees) continue;
      Particle<T> child;
      child.time = p.time;
      child.x = p.x;
      child.type = p.type;
      child.id = child_particle_id(p.id, static_cast<std::uint32_t>(i));
      if (opts.track_labels) child.label = p.label.child(static_cast<std::uint32_t>(i));
      child.spine = is_spine;
      stack.push_back({std::move(child), p.time});
    }
  }
  if constexpr (requires { sink.snapshot; }) {
    sink.snapshot.horizon = horizon;
    sink.snapshot.extinct = sink.snapshot.particles.empty();
  }
}

template <class Dyn, class T>
Snapshot grow_snapshot(const Dyn& dyn, Particle<T> root, double horizon, StreamKey key,
                       const SimOptions& opts, SpineRecord* spine = nullptr) {
  SnapshotSink sink;
  grow(dyn, std::move(root), horizon, key, opts, sink, spine);
  return std::move(sink.snapshot);
}

}  // namespace spinelab

#endif  // SPINELAB_ENGINE_HPP

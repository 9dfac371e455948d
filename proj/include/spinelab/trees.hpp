#ifndef SPINELAB_TREES_HPP
#define SPINELAB_TREES_HPP

// Ulam-Harris labels, population snapshots and spine skeletons shared by the
// three branching models.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "spinelab/errors.hpp"

namespace spinelab {

/// Ulam-Harris label: the path of child indices from the initial ancestor.
/// The empty path is the ancestor itself.
class Label {
 public:
  Label() = default;
  explicit Label(std::vector<std::uint32_t> path) : path_(std::move(path)) {
    require(std::ranges::all_of(path_, [](std::uint32_t i) { return i >= 1; }),
            "label entries are >= 1");
  }

  std::span<const std::uint32_t> path() const noexcept { return path_; }
  std::size_t generation() const noexcept { return path_.size(); }
  bool is_root() const noexcept { return path_.empty(); }

  Label child(std::uint32_t index) const {
    Label out = *this;
    require(index >= 1, "label entries are >= 1");
    out.path_.push_back(index);
    return out;
  }

  friend bool operator==(const Label&, const Label&) = default;
  friend auto operator<=>(const Label&, const Label&) = default;

 private:
  std::vector<std::uint32_t> path_;
};

inline Label concat(const Label& u, const Label& v) {
  std::vector<std::uint32_t> path(u.path().begin(), u.path().end());
  path.insert(path.end(), v.path().begin(), v.path().end());
  return Label(std::move(path));
}

/// True iff v is a strict prefix of u.
inline bool is_ancestor(const Label& v, const Label& u) {
  const auto vp = v.path();
  const auto up = u.path();
  return vp.size() < up.size() && std::equal(vp.begin(), vp.end(), up.begin());
}

/// Text form: dot-separated indices, the ancestor as "-".
inline std::string to_string(const Label& label) {
  if (label.is_root()) return "-";
  std::string out;
  for (std::size_t i = 0; i < label.path().size(); ++i) {
    if (i) out += '.';
    out += std::to_string(label.path()[i]);
  }
  return out;
}

inline Label parse_label(const std::string& text) {
  if (text == "-") return Label{};
  std::vector<std::uint32_t> path;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t dot = std::min(text.find('.', pos), text.size());
    const std::string part = text.substr(pos, dot - pos);
    require(!part.empty() && part.find_first_not_of("0123456789") == std::string::npos,
            "label is dot-separated positive integers or '-'");
    path.push_back(static_cast<std::uint32_t>(std::stoul(part)));
    pos = dot + 1;
  }
  return Label(std::move(path));
}

/// Probability that the uniform spine choice follows a given ancestry:
/// the product of 1/(1+A_v) over the strict ancestors v.
inline double spine_probability(std::span<const std::uint64_t> offspring_counts) {
  double prob = 1.0;
  for (std::uint64_t a : offspring_counts) prob /= 1.0 + static_cast<double>(a);
  return prob;
}

/// Type-space point: none (single-type), a finite type index, or a real (OU).
using TypePoint = std::variant<std::monostate, std::size_t, double>;

struct ParticleState {
  Label label;
  double position = 0.0;
  TypePoint type;
  double birth_time = 0.0;
};

/// Particles alive at the horizon. A particle is excluded at its own fission
/// time; its children are included from that instant.
struct Snapshot {
  double horizon = 0.0;
  std::vector<ParticleState> particles;
  bool extinct = false;

  std::size_t size() const noexcept { return particles.size(); }
};

struct SpineState {
  double position = 0.0;
  TypePoint type;
};

/// Fission skeleton of the spine on [0, horizon].
struct SpineRecord {
  double horizon = 0.0;
  std::vector<double> fission_times;
  std::vector<SpineState> states_at_fission;
  std::vector<std::uint64_t> extra_offspring;
  /// 1-based index of the child that continued the spine at each fission.
  std::vector<std::uint32_t> chosen_child;
  SpineState terminal;
  Label spine_label;

  std::size_t fission_count() const noexcept { return fission_times.size(); }
};

}  // namespace spinelab

#endif  // SPINELAB_TREES_HPP

#ifndef SPINELAB_OFFSPRING_HPP
#define SPINELAB_OFFSPRING_HPP

// Family-size laws. A fission produces 1 + A particles, A ~ OffspringDist.
//
// Two kinds are supported:
//   finite(p_0, ..., p_K)                 explicit probabilities
//   logtail(gamma, kmin[, mass])          p_k = mass * k^-2 (log k)^-gamma / S
//                                         for k >= kmin, p_0 = 1 - mass
// The log-power tail has a finite mean for gamma > 1, P(A log+ A) < inf iff
// gamma > 2, and P(A^p) = inf for every p > 1, so it reaches the divergent
// branches of the convergence classifiers.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>

#include "spinelab/errors.hpp"
#include "spinelab/random.hpp"

namespace spinelab {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

namespace detail {

/// Terms below this index are summed explicitly; beyond it an
/// Euler-Maclaurin remainder with a quadrature integral is used.
inline constexpr std::uint64_t kExplicitTerms = 1ull << 16;

inline bool power_log_series_converges(double sigma, double beta) {
  constexpr double eps = 1e-13;
  if (sigma < -1.0 - eps) return true;
  if (sigma > -1.0 + eps) return false;
  return beta < -1.0;
}

/// \int_N^\infty x^sigma (log x)^beta dx for a convergent integrand.
inline double power_log_integral(double sigma, double beta, double n) {
  const double log_n = std::log(n);
  if (std::abs(sigma + 1.0) <= 1e-13) return std::pow(log_n, beta + 1.0) / (-(beta + 1.0));
  const double kappa = -(sigma + 1.0);
  boost::math::quadrature::exp_sinh<double> integrator;
  const auto integrand = [&](double v) { return std::exp(-kappa * v) * std::pow(log_n + v, beta); };
  const double body = integrator.integrate(integrand, 1e-14);
  return std::exp(-kappa * log_n) * body;
}

/// \sum_{k >= n} k^sigma (log k)^beta for n >= kExplicitTerms (Euler-Maclaurin,
/// truncated after the first derivative term; the next term is O(n^(sigma-3))).
inline double power_log_tail_from(double sigma, double beta, double n) {
  const double log_n = std::log(n);
  const double f = std::pow(n, sigma) * std::pow(log_n, beta);
  const double df = std::pow(n, sigma - 1.0) * std::pow(log_n, beta - 1.0) * (sigma * log_n + beta);
  return power_log_integral(sigma, beta, n) + 0.5 * f - df / 12.0;
}

/// \sum_{k >= kmin} k^sigma (log k)^beta, or +inf when divergent. kmin >= 2.
inline double power_log_series(double sigma, double beta, std::uint64_t kmin) {
  if (!power_log_series_converges(sigma, beta)) return kInfinity;
  const std::uint64_t split = std::max(kmin, kExplicitTerms);
  double head = 0.0;
  // Smallest terms first.
  for (std::uint64_t k = split; k-- > kmin;) {
    const double x = static_cast<double>(k);
    head += std::pow(x, sigma) * std::pow(std::log(x), beta);
  }
  return head + power_log_tail_from(sigma, beta, static_cast<double>(split));
}

}  // namespace detail

class OffspringDist {
 public:
  /// Probabilities for A = 0, 1, ..., K.
  static OffspringDist finite(std::vector<double> probs) {
    require(!probs.empty(), "offspring probabilities nonempty");
    require(std::ranges::all_of(probs, [](double p) { return p >= 0.0 && std::isfinite(p); }),
            "offspring probabilities nonnegative");
    const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
    require(std::abs(total - 1.0) <= 1e-12, "offspring probabilities sum to 1");
    while (probs.size() > 1 && probs.back() == 0.0) probs.pop_back();
    OffspringDist d;
    d.head_ = std::move(probs);
    d.finish();
    return d;
  }

  static OffspringDist log_power_tail(double gamma, std::uint64_t kmin, double mass = 1.0) {
    require(gamma > 1.0, "logtail gamma > 1");
    require(kmin >= 2, "logtail kmin >= 2");
    require(mass > 0.0 && mass <= 1.0, "logtail mass in (0, 1]");
    require(kmin < detail::kExplicitTerms, "logtail kmin < 65536");
    OffspringDist d;
    d.head_.assign(1, 1.0 - mass);
    const double norm = detail::power_log_series(-2.0, -gamma, kmin);
    d.tail_ = Tail{kmin, gamma, {{mass / norm, -2.0}}, false};
    d.description_ = "logtail(gamma=" + fmt(gamma) + ", kmin=" + std::to_string(kmin) +
                     (mass != 1.0 ? ", mass=" + fmt(mass) : std::string{}) + ")";
    d.finish();
    return d;
  }

  bool has_tail() const noexcept { return tail_.has_value(); }
  bool is_size_biased() const noexcept { return tail_ && tail_->biased; }

  /// P(A = k).
  double probability(std::uint64_t k) const {
    double p = k < head_.size() ? head_[k] : 0.0;
    if (tail_ && k >= tail_->kmin) {
      const double x = static_cast<double>(k);
      for (const auto& [coef, power] : tail_->terms)
        p += coef * std::pow(x, power) * std::pow(std::log(x), -tail_->gamma);
    }
    return p;
  }

  double mean() const noexcept { return mean_; }

  /// P(A^p) for p > 0; +inf when the series diverges.
  double p_moment(double p) const {
    require(p > 0.0, "moment order p > 0");
    double total = 0.0;
    for (std::size_t k = 1; k < head_.size(); ++k)
      total += std::pow(static_cast<double>(k), p) * head_[k];
    if (tail_) {
      for (const auto& [coef, power] : tail_->terms)
        total += coef * detail::power_log_series(power + p, -tail_->gamma, tail_->kmin);
    }
    return total;
  }

  /// P(A log+ A); +inf when the series diverges.
  double xlogx() const {
    double total = 0.0;
    for (std::size_t k = 2; k < head_.size(); ++k) {
      const double x = static_cast<double>(k);
      total += x * std::log(x) * head_[k];
    }
    if (tail_) {
      for (const auto& [coef, power] : tail_->terms)
        total += coef * detail::power_log_series(power + 1.0, 1.0 - tail_->gamma, tail_->kmin);
    }
    return total;
  }

  /// The law (1+i) p_i / (1+m).
  OffspringDist size_biased() const {
    require(std::isfinite(mean_), "size-biasing needs a finite mean");
    OffspringDist d;
    const double scale = 1.0 / (1.0 + mean_);
    d.head_.resize(head_.size());
    for (std::size_t k = 0; k < head_.size(); ++k)
      d.head_[k] = static_cast<double>(k + 1) * head_[k] * scale;
    if (tail_) {
      Tail t{tail_->kmin, tail_->gamma, {}, true};
      // (k+1) k^s = k^(s+1) + k^s
      for (const auto& [coef, power] : tail_->terms) {
        t.terms.emplace_back(coef * scale, power + 1.0);
        t.terms.emplace_back(coef * scale, power);
      }
      d.tail_ = std::move(t);
      d.description_ = "size_biased(" + description_ + ")";
    }
    d.finish();
    return d;
  }

  /// Q(A~^q) = (P(A^(q+1)) + P(A^q)) / (m + 1) for q in (0, 1].
  double size_biased_q_moment(double q) const {
    require(q > 0.0 && q <= 1.0, "size-biased moment order q in (0, 1]");
    return (p_moment(q + 1.0) + p_moment(q)) / (mean_ + 1.0);
  }

  /// Draw A. Tail laws are truncated at the smallest K whose tail mass is
  /// below 1e-12 (capped at 2^53); mass beyond K is returned as K.
  std::uint64_t sample(RandomStream& rng) const {
    const auto& cdf = table_->cdf;
    if (cdf.size() == 1) return 0;
    if (single_atom_) return *single_atom_;
    const double u = rng.uniform();
    if (u <= cdf.back() || !tail_) {
      const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
      return static_cast<std::uint64_t>(std::min<std::ptrdiff_t>(it - cdf.begin(), cdf.size() - 1));
    }
    // Smallest k >= table end with P(A >= k+1) <= 1 - u.
    const double residual = 1.0 - u;
    std::uint64_t lo = cdf.size();
    std::uint64_t hi = table_->truncation;
    if (tail_mass_from(static_cast<double>(hi) + 1.0) > residual) return hi;
    while (lo < hi) {
      const std::uint64_t mid = lo + (hi - lo) / 2;
      if (tail_mass_from(static_cast<double>(mid) + 1.0) <= residual)
        hi = mid;
      else
        lo = mid + 1;
    }
    return lo;
  }

  /// Largest value sample() can return.
  std::uint64_t truncation() const noexcept { return table_->truncation; }

  const std::string& describe() const noexcept { return description_; }

 private:
  struct Tail {
    std::uint64_t kmin;
    double gamma;
    std::vector<std::pair<double, double>> terms;  // coef * k^power * (log k)^-gamma
    bool biased;
  };
  struct Table {
    std::vector<double> cdf;  // P(A <= k) for k < cdf.size()
    std::uint64_t truncation = 0;
  };

  static std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  }

  /// P(A >= k) for k beyond the explicit table.
  double tail_mass_from(double k) const {
    double total = 0.0;
    for (const auto& [coef, power] : tail_->terms)
      total += coef * detail::power_log_tail_from(power, -tail_->gamma, k);
    return total;
  }

  void finish() {
    mean_ = p_moment(1.0);
    auto table = std::make_shared<Table>();
    const std::size_t rows = tail_ ? detail::kExplicitTerms : head_.size();
    table->cdf.resize(rows);
    double acc = 0.0;
    for (std::size_t k = 0; k < rows; ++k) {
      acc += probability(k);
      table->cdf[k] = acc;
    }
    if (tail_) {
      constexpr double kTailCut = 1e-12;
      constexpr std::uint64_t kCap = 1ull << 53;
      std::uint64_t hi = rows;
      while (hi < kCap && tail_mass_from(static_cast<double>(hi) + 1.0) >= kTailCut) hi *= 2;
      std::uint64_t lo = rows;
      hi = std::min(hi, kCap);
      while (lo < hi) {
        const std::uint64_t mid = lo + (hi - lo) / 2;
        if (tail_mass_from(static_cast<double>(mid) + 1.0) < kTailCut)
          hi = mid;
        else
          lo = mid + 1;
      }
      table->truncation = lo;
    } else {
      table->cdf.back() = 1.0;
      table->truncation = head_.size() - 1;
      std::size_t support = 0;
      std::size_t atom = 0;
      for (std::size_t k = 0; k < head_.size(); ++k)
        if (head_[k] > 0.0) ++support, atom = k;
      if (support == 1) single_atom_ = atom;
      std::ostringstream os;
      os << "finite(";
      for (std::size_t k = 0; k < head_.size(); ++k) os << (k ? ", " : "") << fmt(head_[k]);
      os << ")";
      description_ = os.str();
    }
    table_ = std::move(table);
  }

  std::vector<double> head_;
  std::optional<Tail> tail_;
  double mean_ = 0.0;
  std::optional<std::uint64_t> single_atom_;
  std::shared_ptr<const Table> table_;
  std::string description_;
};

inline double mean(const OffspringDist& d) { return d.mean(); }
inline double p_moment(const OffspringDist& d, double p) { return d.p_moment(p); }
inline double xlogx(const OffspringDist& d) { return d.xlogx(); }
inline OffspringDist size_bias(const OffspringDist& d) { return d.size_biased(); }
inline double size_biased_q_moment(const OffspringDist& d, double q) { return d.size_biased_q_moment(q); }
inline std::uint64_t sample(const OffspringDist& d, RandomStream& rng) { return d.sample(rng); }

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline double parse_double(std::string_view text, const std::string& what) {
  text = trim(text);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  require(ec == std::errc{} && ptr == text.data() + text.size() && !text.empty(),
          what + " is a number (got '" + std::string(text) + "')");
  return value;
}

}  // namespace detail

/// Parses `finite(0.5, 0.5)` or `logtail(gamma=1.5, kmin=2[, mass=1])`.
inline OffspringDist parse_offspring(std::string_view text) {
  text = detail::trim(text);
  const auto open = text.find('(');
  require(open != std::string_view::npos && text.back() == ')',
          "offspring is finite(...) or logtail(...)");
  const auto kind = detail::trim(text.substr(0, open));
  const auto body = text.substr(open + 1, text.size() - open - 2);
  std::vector<std::string_view> args;
  for (std::size_t pos = 0; pos <= body.size();) {
    const auto comma = std::min(body.find(',', pos), body.size());
    args.push_back(detail::trim(body.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  if (kind == "finite") {
    std::vector<double> probs;
    for (auto a : args) probs.push_back(detail::parse_double(a, "offspring probability"));
    return OffspringDist::finite(std::move(probs));
  }
  require(kind == "logtail", "offspring is finite(...) or logtail(...)");
  std::optional<double> gamma;
  std::optional<double> kmin;
  double mass = 1.0;
  for (auto a : args) {
    const auto eq = a.find('=');
    require(eq != std::string_view::npos, "logtail arguments are key=value");
    const auto key = detail::trim(a.substr(0, eq));
    const double value = detail::parse_double(a.substr(eq + 1), std::string(key));
    if (key == "gamma") gamma = value;
    else if (key == "kmin") kmin = value;
    else if (key == "mass") mass = value;
    else require(false, "logtail keys are gamma, kmin, mass");
  }
  require(gamma && kmin, "logtail needs gamma and kmin");
  require(*kmin == std::floor(*kmin) && *kmin >= 2.0, "logtail kmin >= 2");
  return OffspringDist::log_power_tail(*gamma, static_cast<std::uint64_t>(*kmin), mass);
}

}  // namespace spinelab

#endif  // SPINELAB_OFFSPRING_HPP

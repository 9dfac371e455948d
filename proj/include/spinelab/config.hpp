#ifndef SPINELAB_CONFIG_HPP
#define SPINELAB_CONFIG_HPP

// Flat key-value configuration text.
//
//   # comment
//   model = typed
//   lambda = -0.5
//   [typed]
//   q = -1, 1; 1, -1
//   offspring = finite(0, 1); logtail(gamma=1.5, kmin=2)
//
// Keys below a [section] header are stored as "section.key". Lists are
// comma-separated, matrix rows and per-type entries are ';'-separated.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "spinelab/errors.hpp"
#include "spinelab/offspring.hpp"

namespace spinelab {

namespace detail {

/// Splits on `sep` outside parentheses.
inline std::vector<std::string_view> split_top(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  int depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || (text[i] == sep && depth == 0)) {
      parts.push_back(trim(text.substr(start, i - start)));
      start = i + 1;
    } else if (text[i] == '(') {
      ++depth;
    } else if (text[i] == ')') {
      --depth;
    }
  }
  return parts;
}

}  // namespace detail

class Config {
 public:
  static Config parse(std::string_view text) {
    Config cfg;
    std::string section;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    for (std::string raw; std::getline(in, raw);) {
      ++line_no;
      std::string_view line = raw;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const std::string where = "config line " + std::to_string(line_no);
      if (line.front() == '[') {
        require(line.back() == ']' && line.size() > 2, where + ": section header is [name]");
        section = std::string(detail::trim(line.substr(1, line.size() - 2)));
        continue;
      }
      const auto eq = line.find('=');
      require(eq != std::string_view::npos, where + ": expected key = value");
      const auto key = detail::trim(line.substr(0, eq));
      require(!key.empty(), where + ": empty key");
      const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
      require(!cfg.values_.count(full), where + ": duplicate key " + full);
      cfg.values_[full] = std::string(detail::trim(line.substr(eq + 1)));
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  const std::string& text(const std::string& key) const {
    const auto it = values_.find(key);
    require(it != values_.end(), "config key " + key + " is required");
    used_.insert(key);
    return it->second;
  }

  std::string text_or(const std::string& key, std::string fallback) const {
    return has(key) ? text(key) : std::move(fallback);
  }

  double number(const std::string& key) const { return detail::parse_double(text(key), key); }

  double number_or(const std::string& key, double fallback) const { return has(key) ? number(key) : fallback; }

  std::optional<double> maybe_number(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return number(key);
  }

  std::uint64_t count(const std::string& key) const {
    const double v = number(key);
    require(v >= 0.0 && v == std::floor(v) && v < 9.007199254740992e15, key + " is a nonnegative integer");
    return static_cast<std::uint64_t>(v);
  }

  std::uint64_t count_or(const std::string& key, std::uint64_t fallback) const {
    return has(key) ? count(key) : fallback;
  }

  std::vector<double> list(const std::string& key) const {
    std::vector<double> out;
    for (auto item : detail::split_top(text(key), ',')) out.push_back(detail::parse_double(item, key));
    return out;
  }

  std::vector<std::vector<double>> matrix(const std::string& key) const {
    std::vector<std::vector<double>> rows;
    for (auto row : detail::split_top(text(key), ';')) {
      std::vector<double> values;
      for (auto item : detail::split_top(row, ',')) values.push_back(detail::parse_double(item, key));
      rows.push_back(std::move(values));
    }
    return rows;
  }

  std::vector<OffspringDist> offspring_list(const std::string& key) const {
    std::vector<OffspringDist> out;
    for (auto item : detail::split_top(text(key), ';')) out.push_back(parse_offspring(item));
    return out;
  }

  /// Rejects keys that no reader asked for.
  void reject_unused() const {
    for (const auto& [key, value] : values_)
      require(used_.count(key) > 0, "unknown config key " + key);
  }

  /// Canonical text form, one `key = value` per line in key order.
  std::string resolved() const {
    std::string out;
    for (const auto& [key, value] : values_) out += key + " = " + value + "\n";
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace spinelab

#endif  // SPINELAB_CONFIG_HPP

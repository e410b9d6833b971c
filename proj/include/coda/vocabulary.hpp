#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "coda/errors.hpp"

namespace coda {

/// Superset category list with the seen (annotated) split.
struct Vocabulary {
  std::vector<std::string> names;
  std::vector<bool> seen;

  std::size_t size() const { return names.size(); }
  bool is_seen(std::size_t c) const { return c < seen.size() && seen[c]; }

  std::optional<std::size_t> index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    return std::nullopt;
  }

  std::vector<std::size_t> seen_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (seen[i]) out.push_back(i);
    return out;
  }

  void validate() const {
    if (names.size() != seen.size())
      throw ConfigError("vocabulary: names and seen mask differ in length");
    for (std::size_t i = 0; i < names.size(); ++i)
      for (std::size_t j = i + 1; j < names.size(); ++j)
        if (names[i] == names[j]) throw ConfigError("vocabulary: duplicate name '" + names[i] + "'");
  }

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;
};

}  // namespace coda

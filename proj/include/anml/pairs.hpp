#pragma once

#include <cstddef>
#include <vector>

namespace anml {

/// Per-query similar (S_i) and dissimilar (D_i) index lists.
struct PairSets {
  std::vector<std::vector<std::size_t>> similars;
  std::vector<std::vector<std::size_t>> dissimilars;
  /// Set when a requested similar count exceeded what a class could supply.
  bool truncated = false;

  std::size_t size() const noexcept { return similars.size(); }
};

}  // namespace anml

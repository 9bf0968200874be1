#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace s3m {

using Rng = std::mt19937_64;

/// Expands a root seed into an independent stream for a labelled stage, so a
/// stage can be rerun on its own and still draw the same numbers.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label);

/// Uniform integer in [0, n). Rejection sampling on the raw engine output so
/// the result does not depend on the standard library's distribution code.
std::size_t uniform_index(Rng& rng, std::size_t n);

template <typename T>
const T& uniform_choice(Rng& rng, std::span<const T> items) {
  return items[uniform_index(rng, items.size())];
}

template <typename T>
void shuffle_in_place(Rng& rng, std::vector<T>& items) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[uniform_index(rng, i)]);
  }
}

}  // namespace s3m

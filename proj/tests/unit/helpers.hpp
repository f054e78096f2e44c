#pragma once

#include <string>
#include <vector>

#include "raudit/units.hpp"

namespace testing {

// n units with ids u0..u{n-1}, d features filled by f(i, j).
template <class F>
raudit::UnitTable table(std::size_t n, std::size_t d, F f) {
  raudit::UnitTable u;
  for (std::size_t i = 0; i < n; ++i) u.ids.push_back("u" + std::to_string(i));
  for (std::size_t j = 0; j < d; ++j) u.feature_names.push_back("x" + std::to_string(j + 1));
  u.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) u.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f(i, j);
  return u;
}

inline raudit::UnitTable table(std::size_t n, std::size_t d = 1) {
  return table(n, d, [](std::size_t i, std::size_t j) { return static_cast<double>(i) + 0.1 * static_cast<double>(j); });
}

inline std::size_t ones(const raudit::Labels& y) {
  std::size_t s = 0;
  for (auto v : y) s += v;
  return s;
}

}  // namespace testing

#pragma once
// Trapezoid quadrature over explicit grids, for inference-time code that
// does not need gradients. Training-time counterparts live on the tape.

#include <stdexcept>
#include <vector>

namespace ghnn {

template <typename T>
std::vector<T> linspace(T lo, T hi, std::size_t n) {
  if (n < 2 || !(hi > lo)) throw std::invalid_argument("linspace: need n >= 2 and hi > lo");
  std::vector<T> g(n);
  T step = (hi - lo) / static_cast<T>(n - 1);
  for (std::size_t i = 0; i < n; ++i) g[i] = lo + step * static_cast<T>(i);
  g.back() = hi;  // exact endpoint regardless of rounding
  return g;
}

template <typename T>
T trapezoid(const std::vector<T>& values, const std::vector<T>& grid) {
  if (values.size() != grid.size() || grid.size() < 2)
    throw std::invalid_argument("trapezoid: need matching lengths >= 2");
  T acc = T(0);
  for (std::size_t i = 0; i + 1 < values.size(); ++i) {
    T dt = grid[i + 1] - grid[i];
    if (!(dt > T(0))) throw std::invalid_argument("trapezoid: grid must be strictly increasing");
    acc += dt * (values[i] + values[i + 1]) / T(2);
  }
  return acc;
}

template <typename T>
std::vector<T> cumulative_trapezoid(const std::vector<T>& values, const std::vector<T>& grid) {
  if (values.size() != grid.size() || grid.size() < 2)
    throw std::invalid_argument("cumulative_trapezoid: need matching lengths >= 2");
  std::vector<T> out(values.size(), T(0));
  for (std::size_t i = 1; i < values.size(); ++i) {
    T dt = grid[i] - grid[i - 1];
    if (!(dt > T(0)))
      throw std::invalid_argument("cumulative_trapezoid: grid must be strictly increasing");
    out[i] = out[i - 1] + dt * (values[i - 1] + values[i]) / T(2);
  }
  return out;
}

}  // namespace ghnn

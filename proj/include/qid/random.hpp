#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>

namespace qid {

// splitmix64 finalizer. Seed derivation below hashes a path of indices into
// one master seed so every trial is independently reproducible.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(master);
  for (std::uint64_t v : path) h = mix64(h ^ mix64(v));
  return h;
}

// Uniform draw on (0,1]; never returns 0 so log() stays finite.
inline double uniform_unit(std::mt19937_64& gen) {
  return (static_cast<double>(gen() >> 11) + 1.0) * 0x1.0p-53;
}

// Box-Muller, cosine branch only. Consumes exactly two engine draws per
// call, which keeps sequences reproducible independent of call order.
inline double standard_normal(std::mt19937_64& gen) {
  const double u1 = uniform_unit(gen);
  const double u2 = uniform_unit(gen);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

// Marsaglia-Tsang for shape >= 1, boosted for shape < 1.
inline double gamma_sample(std::mt19937_64& gen, double shape) {
  if (shape < 1.0) {
    const double u = uniform_unit(gen);
    return gamma_sample(gen, shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    const double x = standard_normal(gen);
    const double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    const double v3 = v * v * v;
    const double u = uniform_unit(gen);
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v3;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v3 + std::log(v3))) return d * v3;
  }
}

}  // namespace qid

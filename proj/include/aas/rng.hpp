#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace aas {

/// Seeded generator with portable conversions. std::*_distribution output is
/// implementation-defined, so uniform/normal draws are derived from raw bits here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

/// Independent stream seed for a labelled consumer, so adding a consumer never
/// shifts the others.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label);

inline Rng stream(std::uint64_t master, std::string_view label) { return Rng(derive_seed(master, label)); }

}  // namespace aas

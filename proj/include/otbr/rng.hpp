#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace otbr {

// Counter-based generator: every draw is a keyed hash of (key, counter), so
// streams are reproducible bit-for-bit on any platform and can be split by
// label without sharing state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  Rng split(std::string_view label) const;
  Rng split(std::uint64_t index) const;

  std::uint64_t next_u64();
  double uniform();               // [0, 1)
  float uniform_float();          // [0, 1)
  double uniform(double lo, double hi);
  std::uint64_t below(std::uint64_t n);  // unbiased in [0, n)
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace otbr

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace multirater {

// Deterministic random streams. A stream is a splitmix64 chain whose initial
// state is a hash of (root seed, key words), so streams for distinct keys are
// independent of each other and of the order in which they are consumed.
// Samplers are hand-rolled on top of the uniform stream: the standard
// library's distributions are implementation-defined, and dataset bytes must
// not depend on the toolchain.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t state) : state_(state) {}

  /// Stream keyed by (seed, key...); same key always yields the same stream.
  static RandomStream derive(std::uint64_t seed, std::initializer_list<std::uint64_t> key);

  std::uint64_t next_u64();

  /// Uniform on [0, 1).
  double uniform();

  /// Uniform on (0, 1].
  double uniform_pos();

  /// Standard normal via Box-Muller.
  double normal();

  /// Gamma(alpha, 1), alpha > 0 (Marsaglia-Tsang).
  double gamma(double alpha);

  /// Beta(a, b).
  double beta(double a, double b);

  /// Index drawn from an (unnormalized is not allowed) probability vector.
  int categorical(const Eigen::Ref<const Eigen::VectorXd>& probs);

  /// In-place Fisher-Yates shuffle.
  void shuffle(std::vector<int>& values);

 private:
  std::uint64_t state_;
};

/// splitmix64 finalizer; the basis of all stream derivation.
std::uint64_t mix64(std::uint64_t x);

}  // namespace multirater

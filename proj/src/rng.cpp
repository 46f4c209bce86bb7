#include "multirater/rng.hpp"

#include <cmath>
#include <numbers>

#include "multirater/errors.hpp"

namespace multirater {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RandomStream RandomStream::derive(std::uint64_t seed, std::initializer_list<std::uint64_t> key) {
  std::uint64_t state = mix64(seed ^ 0xa0761d6478bd642fULL);
  for (std::uint64_t word : key) {
    state = mix64(state ^ mix64(word + 0xe7037ed1a0b428dbULL));
  }
  return RandomStream(state);
}

std::uint64_t RandomStream::next_u64() {
  state_ += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double RandomStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomStream::uniform_pos() { return 1.0 - uniform(); }

double RandomStream::normal() {
  const double u1 = uniform_pos();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RandomStream::gamma(double alpha) {
  if (!(alpha > 0.0)) throw InputDomainError("gamma: alpha must be > 0");
  if (alpha < 1.0) {
    // Boost trick: Gamma(a) = Gamma(a+1) * U^{1/a}.
    return gamma(alpha + 1.0) * std::pow(uniform_pos(), 1.0 / alpha);
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform_pos();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double RandomStream::beta(double a, double b) {
  const double x = gamma(a);
  const double y = gamma(b);
  const double s = x + y;
  if (s <= 0.0) return 0.5;
  return x / s;
}

int RandomStream::categorical(const Eigen::Ref<const Eigen::VectorXd>& probs) {
  if (probs.size() == 0) throw InputDomainError("categorical: empty probability vector");
  if ((probs.array() < -1e-12).any() || std::abs(probs.sum() - 1.0) > 1e-6) {
    throw InputDomainError("categorical: probabilities must be nonnegative and sum to 1");
  }
  const double u = uniform();
  double cum = 0.0;
  for (int k = 0; k < probs.size(); ++k) {
    cum += probs[k];
    if (u < cum) return k;
  }
  return static_cast<int>(probs.size()) - 1;
}

void RandomStream::shuffle(std::vector<int>& values) {
  for (std::size_t i = values.size(); i > 1; --i) {
    const std::size_t j = next_u64() % i;
    std::swap(values[i - 1], values[j]);
  }
}

}  // namespace multirater

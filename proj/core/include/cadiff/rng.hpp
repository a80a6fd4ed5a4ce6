#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace cadiff {

using Rng = std::mt19937_64;

/// Deterministic seed splitting: derive_seed(master, stream, index) mixes the
/// three values with splitmix64 so that per-item generators never depend on
/// scheduling order.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index);

/// Named streams for derive_seed. Values are part of the reproducibility contract.
namespace streams {
inline constexpr std::uint64_t kProblemParams = 1;
inline constexpr std::uint64_t kInitialGuess = 2;
inline constexpr std::uint64_t kGtRecords = 3;
inline constexpr std::uint64_t kGtNoise = 4;
inline constexpr std::uint64_t kTrainShuffle = 5;
inline constexpr std::uint64_t kTrainDiffusion = 6;
inline constexpr std::uint64_t kTrainReverseNoise = 7;
inline constexpr std::uint64_t kSampleChain = 8;
inline constexpr std::uint64_t kModelInit = 9;
inline constexpr std::uint64_t kEvalInstances = 10;
inline constexpr std::uint64_t kPerSampleGt = 11;
}  // namespace streams

double standard_normal(Rng& rng);
double uniform(Rng& rng, double lo, double hi);

Eigen::VectorXd standard_normal_vector(Rng& rng, Eigen::Index n);

}  // namespace cadiff

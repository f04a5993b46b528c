#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include <Eigen/Dense>

namespace fmriagg {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; the building block for order-free seed derivation.
std::uint64_t mix64(std::uint64_t x);

/// Hashes a sequence of integers into one 64-bit key.
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts);

/// Uniform double in [0,1) from a 64-bit key (stateless).
inline double unit_uniform(std::uint64_t key) { return static_cast<double>(mix64(key) >> 11) * 0x1.0p-53; }

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev = 1.0);

/// Q factor of a Householder QR with column signs fixed so diag(R) > 0.
/// For a Gaussian input this is a Haar-distributed orthonormal basis.
Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& a);

/// v x k matrix with orthonormal columns from a seeded Gaussian.
Eigen::MatrixXd random_orthonormal(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed);

/// 64-bit FNV-1a; used for artifact fingerprints and mask checksums.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace fmriagg

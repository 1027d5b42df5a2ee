#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dsbp/network.hpp"

namespace dsbp::nn {

using GradientFn = std::function<std::vector<double>(std::span<const double>)>;

// Central-difference Hessian-vector product of an arbitrary gradient field:
// (grad(point + eps v) - grad(point - eps v)) / (2 eps), computed on the
// normalized direction and rescaled, so H(alpha v) = alpha Hv holds exactly.
std::vector<double> hvp_central(const GradientFn& grad, std::span<const double> point,
                                std::span<const double> direction, double eps);

// Same thing against the mean cross-entropy of the network on a batch.
// Network parameters are restored before returning.
std::vector<double> hessian_vector_product(Network& net, const Batch& batch,
                                           std::span<const double> direction, double eps = 1e-4);

struct HessianEigEstimate {
    double value = 0.0;
    std::vector<double> vector;
    double residual = 0.0;
    bool converged = false;  // residual <= 0.05 |value|
};

HessianEigEstimate top_hessian_eigenvalue(Network& net, const Batch& batch, std::size_t iters,
                                          std::uint64_t seed);

// Power iteration restricted to one layer's weight block (biases and other
// layers masked to zero): the top eigenvalue of that diagonal Hessian block.
HessianEigEstimate layer_hessian_eigenvalue(Network& net, const Batch& batch, std::size_t layer,
                                            std::size_t iters, std::uint64_t seed);

}  // namespace dsbp::nn

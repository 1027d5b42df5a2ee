#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dsbp/matrix.hpp"
#include "dsbp/rng.hpp"

namespace dsbp::linalg {

// Leading eigenpairs of a symmetric matrix. Row i of `vectors` holds the
// i-th eigenvector; `residuals[i]` is ||C e_i - values[i] e_i|| measured
// against the matrix the decomposition was computed from.
struct EigenPairs {
    DenseMatrix vectors;
    std::vector<double> values;
    std::vector<double> residuals;

    std::size_t count() const { return values.size(); }
};

// Gram matrix A^T A of a batch of row activations (no centering, no 1/n).
DenseMatrix activation_covariance(const DenseMatrix& activations);

// Top-k eigenpairs via power iteration with Hotelling deflation. Start
// vectors come from `warm_start` rows when given (and shape-compatible
// rows exist), otherwise from uniform [-1,1] draws on `rng`. Eigenvector
// signs are canonicalized: aligned with the warm start when one was used,
// otherwise largest-magnitude component made positive.
EigenPairs power_iteration_topk(const DenseMatrix& c, std::size_t k, std::size_t iters,
                                Rng& rng, const DenseMatrix* warm_start = nullptr);
EigenPairs power_iteration_topk(const DenseMatrix& c, std::size_t k, std::size_t iters,
                                std::uint64_t rng_seed);

// Full spectrum of a symmetric matrix by cyclic Jacobi rotations, sorted
// by descending eigenvalue. Intended as a reference for modest sizes.
EigenPairs jacobi_eig(const DenseMatrix& c);

// Projection of `grad` onto the span of the given row vectors applied on
// the left: sum_i e_i (e_i^T grad). Vectors must have grad.rows columns.
DenseMatrix project_onto_subspace(const DenseMatrix& grad, const DenseMatrix& vectors);

// Power iteration on an implicit symmetric operator y = apply(x). Returns
// the Rayleigh quotient after `iters` rounds; converges to the eigenvalue
// of largest magnitude. Optionally reports the final unit vector.
double operator_top_eigenvalue(std::size_t dim,
                               const std::function<void(std::span<const double>, std::span<double>)>& apply,
                               std::size_t iters, Rng& rng,
                               std::vector<double>* out_vector = nullptr);

}  // namespace dsbp::linalg

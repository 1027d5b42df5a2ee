#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dsbp/eigen.hpp"
#include "dsbp/matrix.hpp"
#include "dsbp/rng.hpp"

namespace dsbp::spectral {

inline constexpr std::size_t kLambdaWindow = 10;

// Per-layer snapshot of the activation-covariance spectrum plus a sliding
// window of recent top eigenvalues.
struct LayerSpectralState {
    linalg::EigenPairs eigenpairs;
    std::vector<double> lambda_history;  // at most kLambdaWindow entries
    std::size_t last_refresh_iter = 0;
    double covariance_trace = 0.0;  // full-spectrum eigenvalue sum
    bool initialized = false;
};

// Rebuilds the covariance spectrum from a fresh activation batch. Warm-starts
// power iteration from the previous eigenvectors and appends the new top
// eigenvalue to the sliding window.
void refresh_spectral_state(LayerSpectralState& state, const linalg::DenseMatrix& activations,
                            std::size_t k, std::size_t iters, Rng& rng, std::size_t iter);

// W <- W - eta * P(G) - min(1, beta*lambda1) * e1 (e1^T W), with the shrinkage
// factor computed against W before the gradient step. A complete basis
// (k == d_l) skips the projection so the step is bitwise a plain SGD step,
// and beta = 0 skips the shrinkage term entirely.
void dsbp_weight_update(linalg::DenseMatrix& w, const linalg::DenseMatrix& grad,
                        const LayerSpectralState& state, double eta, double beta);

struct PruneSchedule {
    double tau0 = 0.01;
    double beta = 0.1;
    std::size_t horizon = 1;
};

// tau_t = tau0 * exp(-beta * t / horizon); t beyond the horizon is an error.
double prune_threshold(const PruneSchedule& s, std::size_t t);

// tau0 scaled by a layer's share of the largest initial top eigenvalue.
double layer_threshold_scale(double tau0, double lambda_l1_init, double lambda_max_init);

struct PruneResult {
    linalg::DenseMatrix pruned;  // candidate weights with masked entries zeroed
    linalg::DenseMatrix mask;    // 1 kept, 0 zeroed
    double sparsity = 0.0;       // zeroed / total
};

// Per-entry mask on the top-k spectral reconstruction R = sum_i e_i (e_i^T W):
// entries with |R| < tau_t are zeroed. The caller decides whether to commit
// the candidate (see reconstruction_error_ok).
PruneResult spectral_prune(const linalg::DenseMatrix& w, const LayerSpectralState& state,
                           double tau_t);

// ||W - W_pruned||_F^2 <= 0.05 * sum(eigvalues); the pruning veto.
bool reconstruction_error_ok(const linalg::DenseMatrix& w, const linalg::DenseMatrix& w_pruned,
                             std::span<const double> eigvalues);

struct IntervalController {
    std::size_t p0 = 100;
    double alpha = 0.0;
};

// Population variance over the sliding window (denominator = sample count).
double window_variance(std::span<const double> history);

// p_t = floor(p0 / (1 + alpha * Var(window))), at least 1; fewer than two
// samples fall back to p0.
std::size_t dynamic_interval(const IntervalController& ctrl, std::span<const double> history);

}  // namespace dsbp::spectral

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dsbp/dataset.hpp"
#include "dsbp/hessian.hpp"
#include "dsbp/matrix.hpp"
#include "dsbp/metrics.hpp"
#include "dsbp/network.hpp"
#include "dsbp/spectral.hpp"

namespace dsbp::optim {

enum class BaselineKind { dsbp, sgd, sam, lie };

struct DsbpConfig {
    double eta = 0.01;
    std::size_t k = 10;   // eigenvectors kept per layer, clamped to the layer width
    std::size_t p0 = 100; // base refresh interval; 0 disables refreshes entirely
    double tau0 = 0.01;
    double beta = 0.1;
    double alpha = 0.1;
    std::size_t total_iters = 0; // T
    std::size_t power_iters = 5;
    std::uint64_t seed = 0;
    BaselineKind baseline_kind = BaselineKind::dsbp;

    // run plumbing
    std::size_t batch_size = 64;
    bool prune = false;
    double sam_rho = 0.05;
    std::size_t hessian_every = 0; // 0 = never measure the Hessian eigenvalue
    std::size_t test_every = 0;    // 0 = test accuracy only on the final record
    bool record_weight_hashes = false;
};

struct RefreshEvent {
    std::size_t iteration = 0;
    std::size_t layer = 0;
    double lambda1 = 0.0;
    std::size_t next_interval = 0; // p_t chosen right after this refresh
};

struct PruneEvent {
    std::size_t iteration = 0;
    std::size_t layer = 0;
    double threshold = 0.0;
    double candidate_sparsity = 0.0;
    double reconstruction_error = 0.0; // ||W - W_pruned||_F^2
    double budget = 0.0;               // 0.05 * eigenvalue sum
    bool committed = false;            // false = the veto kept the old weights/mask
};

struct TrainReport {
    std::vector<harness::MetricsRecord> records; // one per iteration
    nn::Network final_net;
    std::vector<double> epoch_wall_ms;
    std::vector<RefreshEvent> refresh_events;
    std::vector<PruneEvent> prune_events;
    std::vector<std::uint64_t> weight_hashes; // per iteration when enabled
    std::vector<double> initial_lambda1;      // per layer, from the first refresh
};

// Algorithm: every iteration the weight gradient is projected onto the
// layer's top-k covariance eigenvectors and the top component of W shrunk;
// every p_t iterations the spectrum is refreshed (and pruning applied when
// enabled, guarded by the reconstruction veto). Biases follow plain SGD.
TrainReport train_dsbp(nn::Network net, data::BatchSource& source, const DsbpConfig& cfg,
                       const data::Dataset* test = nullptr);
TrainReport train_sgd(nn::Network net, data::BatchSource& source, const DsbpConfig& cfg,
                      const data::Dataset* test = nullptr);
TrainReport train_sam(nn::Network net, data::BatchSource& source, const DsbpConfig& cfg,
                      double rho, const data::Dataset* test = nullptr);
TrainReport train_lie(nn::Network net, data::BatchSource& source, const DsbpConfig& cfg,
                      const data::Dataset* test = nullptr);
// dispatches on cfg.baseline_kind (sam uses cfg.sam_rho)
TrainReport train(nn::Network net, data::BatchSource& source, const DsbpConfig& cfg,
                  const data::Dataset* test = nullptr);

// Gradient evaluated at point + rho * g/||g|| where g = gradient(point): the
// two-step sharpness-aware direction. A zero gradient skips the perturbation.
std::vector<double> sam_effective_gradient(const nn::GradientFn& gradient,
                                           std::span<const double> point, double rho);

// Skew generator sum_i (lambda_i / sum lambda) (e_i ghat_i^T - ghat_i e_i^T)
// with ghat_i the normalized output-space direction G G^T e_i. Built as
// B - B^T, so skew-symmetry is exact.
linalg::DenseMatrix lie_generator(const spectral::LayerSpectralState& state,
                                  const linalg::DenseMatrix& grad);

// One classical RK4 step of dW/ds = -omega W over s in [0, eta].
void rk4_rotation_step(linalg::DenseMatrix& w, const linalg::DenseMatrix& omega, double eta);

// lie_generator + rk4_rotation_step, asserting skewness within 1e-12.
void lie_step(linalg::DenseMatrix& w, const spectral::LayerSpectralState& state,
              const linalg::DenseMatrix& grad, double eta);

}  // namespace dsbp::optim

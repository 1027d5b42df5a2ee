#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dsbp/dataset.hpp"
#include "dsbp/eigen.hpp"
#include "dsbp/matrix.hpp"
#include "dsbp/network.hpp"
#include "dsbp/optimizer.hpp"
#include "dsbp/spectral.hpp"

namespace dsbp::ext {

// ------------------------------------------------------- transfer anchoring

// One layer of a pre-trained spectral reference: the top-m covariance
// eigenvectors and their eigenvalue-proportional weights (w_i >= 0, sum 1).
struct LayerAnchor {
    linalg::EigenPairs pairs;
    std::vector<double> weights;
};

struct TransferAnchor {
    std::vector<LayerAnchor> layers;
    std::vector<double> layer_scale; // depth ramp: layer l gets (l+1)/L
    double clip_threshold = 1.0;     // cap on the correction Frobenius norm
};

// Snapshot the per-layer output-activation spectra of a (typically trained)
// network. Keeps min(m, layer width) vectors per layer.
TransferAnchor build_transfer_anchor(nn::Network& net, const nn::Batch& batch, std::size_t m,
                                     std::size_t power_iters, std::uint64_t seed);

// Weighted eigenvector mismatch sum_l sum_i w_i ||e_i^pre - s e_i||^2 with
// each sign s chosen to minimize the term, so the loss ignores sign flips.
// Zero exactly when every current vector matches its anchor up to sign.
double alignment_loss(const TransferAnchor& anchor,
                      const std::vector<linalg::EigenPairs>& current);

// Rotation-toward-anchor update: W + clip(strength * layer_scale *
// sum_i w_i (e_i^pre e_i^T - e_i e_i^pre^T) W) where the clip rescales the
// whole correction to Frobenius norm `clip_threshold` when it exceeds it.
// Current vectors are sign-matched to the anchor first, so the rotation
// always takes the short way round.
linalg::DenseMatrix transfer_correction(const linalg::DenseMatrix& w, const LayerAnchor& anchor,
                                        const linalg::EigenPairs& current, double strength,
                                        double layer_scale, double clip_threshold = 1.0);

// ------------------------------------------------------------ meta learning

// Eigenvectors carried across tasks, blended with momentum and kept unit
// length. Row i of each matrix is the running estimate of e_i.
struct SpectralMemoryBuffer {
    std::vector<linalg::DenseMatrix> layer_vectors;
    double momentum = 0.9;

    bool empty() const { return layer_vectors.empty(); }
};

// buffer <- normalize(momentum * buffer + (1 - momentum) * s * fresh) per
// vector, with s the sign that keeps the fresh vector on the buffer's side.
// An empty buffer adopts the fresh vectors outright.
void meta_buffer_blend(SpectralMemoryBuffer& buffer,
                       const std::vector<linalg::EigenPairs>& fresh);

// Mean absolute cosine between matched eigenvectors, averaged over layers:
// identical spectra give 1, orthogonal ones 0.
double task_similarity(const std::vector<linalg::EigenPairs>& a,
                       const std::vector<linalg::EigenPairs>& b, std::size_t k);

// Gradient 0.02 (W - W_pre) of the initialization penalty 0.01 ||W - W_pre||_F^2.
linalg::DenseMatrix init_regularizer_grad(const linalg::DenseMatrix& w,
                                          const linalg::DenseMatrix& w_pre);
double init_regularizer_loss(const linalg::DenseMatrix& w, const linalg::DenseMatrix& w_pre);

struct MetaConfig {
    optim::DsbpConfig inner;        // inner-loop step size, k, beta, power iters, seed
    std::size_t inner_steps = 5;
    std::size_t outer_steps = 100;
    double outer_step = 0.1;        // fraction moved toward the adapted weights
    std::size_t buffer_k = 5;       // eigenvectors kept per layer
    std::size_t hessian_every = 10; // outer steps between Hessian probes (0 = off)
};

struct AdaptResult {
    nn::Network net;
    double query_accuracy = 0.0;
    double query_loss = 0.0;
};

// Clones the network and runs `inner_steps` spectrally-projected gradient
// steps on the support set, each pulled toward the starting weights by the
// initialization penalty, then scores the query set.
AdaptResult meta_adapt(const nn::Network& net, const data::FewshotTask& task,
                       const MetaConfig& cfg, std::uint64_t episode_seed);

struct MetaEpisode {
    std::size_t outer_step = 0;
    double query_accuracy = 0.0;
    double query_loss = 0.0;
    double similarity = 0.0; // fresh spectra vs the buffer, before blending
    std::optional<double> hessian_top;
};

struct MetaReport {
    nn::Network meta_net;
    SpectralMemoryBuffer buffer;
    std::vector<MetaEpisode> episodes;
};

// First-order meta training: adapt to each sampled task, move the meta
// weights a fraction `outer_step` toward the adapted ones, and fold the
// task's spectra into the memory buffer.
MetaReport meta_train(const std::function<data::FewshotTask()>& tasks, nn::Network net,
                      const MetaConfig& cfg);

}  // namespace dsbp::ext

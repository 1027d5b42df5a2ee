#include "dsbp/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dsbp::spectral {

using linalg::DenseMatrix;

void refresh_spectral_state(LayerSpectralState& state, const DenseMatrix& activations,
                            std::size_t k, std::size_t iters, Rng& rng, std::size_t iter) {
    DenseMatrix cov = linalg::activation_covariance(activations);
    const DenseMatrix* warm = nullptr;
    if (state.initialized && state.eigenpairs.vectors.cols == cov.cols)
        warm = &state.eigenpairs.vectors;
    state.eigenpairs = linalg::power_iteration_topk(cov, k, iters, rng, warm);
    state.covariance_trace = linalg::trace(cov);
    state.lambda_history.push_back(state.eigenpairs.values.front());
    if (state.lambda_history.size() > kLambdaWindow)
        state.lambda_history.erase(state.lambda_history.begin());
    state.last_refresh_iter = iter;
    state.initialized = true;
}

void dsbp_weight_update(DenseMatrix& w, const DenseMatrix& grad, const LayerSpectralState& state,
                        double eta, double beta) {
    if (!grad.same_shape(w))
        throw std::invalid_argument("dsbp_weight_update: gradient shape " +
                                    std::to_string(grad.rows) + "x" + std::to_string(grad.cols) +
                                    " does not match weights");
    if (!state.initialized)
        throw std::invalid_argument("dsbp_weight_update: spectral state was never refreshed");
    if (state.eigenpairs.vectors.cols != w.rows)
        throw std::invalid_argument("dsbp_weight_update: eigenvectors live in dimension " +
                                    std::to_string(state.eigenpairs.vectors.cols) +
                                    " but weights have " + std::to_string(w.rows) + " rows");
    if (eta <= 0.0) throw std::invalid_argument("dsbp_weight_update: eta must be positive");
    if (beta < 0.0) throw std::invalid_argument("dsbp_weight_update: beta must be non-negative");

    const double lambda1 = std::max(0.0, state.eigenpairs.values.front());
    const double shrink = std::min(1.0, beta * lambda1);

    std::vector<double> top_row;  // e1^T W, measured before the gradient step
    if (shrink > 0.0) top_row = linalg::matvec_t(w, state.eigenpairs.vectors.row(0));

    if (state.eigenpairs.count() == w.rows) {
        linalg::add_scaled(w, -eta, grad);  // complete basis: projection is the identity
    } else {
        DenseMatrix projected = linalg::project_onto_subspace(grad, state.eigenpairs.vectors);
        linalg::add_scaled(w, -eta, projected);
    }

    if (shrink > 0.0)
        linalg::add_outer(w, -shrink, state.eigenpairs.vectors.row(0), top_row);
}

double prune_threshold(const PruneSchedule& s, std::size_t t) {
    if (s.tau0 <= 0.0) throw std::invalid_argument("prune_threshold: tau0 must be positive");
    if (s.beta < 0.0) throw std::invalid_argument("prune_threshold: beta must be non-negative");
    if (s.horizon < 1) throw std::invalid_argument("prune_threshold: horizon must be at least 1");
    if (t > s.horizon)
        throw std::invalid_argument("prune_threshold: t=" + std::to_string(t) +
                                    " beyond horizon " + std::to_string(s.horizon));
    return s.tau0 * std::exp(-s.beta * static_cast<double>(t) / static_cast<double>(s.horizon));
}

double layer_threshold_scale(double tau0, double lambda_l1_init, double lambda_max_init) {
    if (lambda_max_init <= 0.0)
        throw std::invalid_argument("layer_threshold_scale: maximal initial eigenvalue must be positive");
    return tau0 * lambda_l1_init / lambda_max_init;
}

PruneResult spectral_prune(const DenseMatrix& w, const LayerSpectralState& state, double tau_t) {
    if (tau_t <= 0.0) throw std::invalid_argument("spectral_prune: threshold must be positive");
    if (!state.initialized)
        throw std::invalid_argument("spectral_prune: spectral state was never refreshed");
    DenseMatrix recon = linalg::project_onto_subspace(w, state.eigenpairs.vectors);

    PruneResult out;
    out.pruned = w;
    out.mask = DenseMatrix(w.rows, w.cols, 1.0);
    std::size_t zeroed = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (std::abs(recon.data[i]) < tau_t) {
            out.pruned.data[i] = 0.0;
            out.mask.data[i] = 0.0;
            ++zeroed;
        }
    }
    out.sparsity = static_cast<double>(zeroed) / static_cast<double>(w.size());
    return out;
}

bool reconstruction_error_ok(const DenseMatrix& w, const DenseMatrix& w_pruned,
                             std::span<const double> eigvalues) {
    if (!w.same_shape(w_pruned))
        throw std::invalid_argument("reconstruction_error_ok: shape mismatch");
    double err = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double d = w.data[i] - w_pruned.data[i];
        err += d * d;
    }
    double budget = 0.0;
    for (double v : eigvalues) budget += v;
    return err <= 0.05 * budget;
}

double window_variance(std::span<const double> history) {
    if (history.size() < 2) return 0.0;
    // deviations are taken against the first sample before centering, so a
    // constant window comes out as exactly zero variance
    const double anchor = history[0];
    double mean_off = 0.0;
    for (double v : history) mean_off += v - anchor;
    mean_off /= static_cast<double>(history.size());
    double acc = 0.0;
    for (double v : history) {
        const double d = (v - anchor) - mean_off;
        acc += d * d;
    }
    return acc / static_cast<double>(history.size());
}

std::size_t dynamic_interval(const IntervalController& ctrl, std::span<const double> history) {
    if (ctrl.p0 < 1) throw std::invalid_argument("dynamic_interval: p0 must be at least 1");
    if (ctrl.alpha < 0.0) throw std::invalid_argument("dynamic_interval: alpha must be non-negative");
    if (history.size() < 2) return ctrl.p0;
    const double var = window_variance(history);
    const double raw = static_cast<double>(ctrl.p0) / (1.0 + ctrl.alpha * var);
    const auto floored = static_cast<std::size_t>(std::floor(raw));
    return std::max<std::size_t>(1, floored);
}

}  // namespace dsbp::spectral

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dsbp/dataset.hpp"
#include "dsbp/matrix.hpp"
#include "dsbp/network.hpp"
#include "dsbp/optimizer.hpp"

namespace dsbp::analysis {

// ---------------------------------------------------------------- SDE side

enum class SdeDiffusion { diagonal, zero };

struct SdeConfig {
    double eta = 0.01;    // learning-rate scale; noise enters as sqrt(eta)
    double horizon = 1.0; // total integration time
    std::size_t steps = 100;
    std::uint64_t noise_seed = 0;
    SdeDiffusion diffusion_mode = SdeDiffusion::diagonal;
};

struct SdePoint {
    double time = 0.0;
    double loss = 0.0;
    std::uint64_t state_hash = 0;
};

struct SdeTrajectory {
    std::vector<SdePoint> points; // steps + 1 entries, including t = 0
    std::vector<double> final_state;
};

// Generic Euler-Maruyama problem: dx = drift(x) dt + sqrt(eta) * diag(diffusion) dB.
// An empty diffusion vector means a deterministic flow. Noise increments come
// from a Brownian path keyed only by (noise_seed, horizon), so power-of-two
// step counts refine the same path (Brownian bridge consistency).
struct SdeProblem {
    std::function<std::vector<double>(std::span<const double>)> drift;
    std::function<double(std::span<const double>)> loss;
    std::vector<double> diffusion;
};

SdeTrajectory sde_path(const SdeProblem& problem, std::span<const double> x0,
                       const SdeConfig& cfg);

// Network flavour: drift = -grad f_S - beta * H u with u the per-layer top
// eigenvector embedded as a rank-one weight-block direction, diffusion a
// diagonal estimate of the gradient projection error over 8 minibatches,
// both refreshed every 10 steps.
SdeTrajectory sde_simulate(nn::Network net, const data::Dataset& data, const SdeConfig& cfg,
                           const optim::DsbpConfig& dsbp_cfg);

// ------------------------------------------------------------- weak order

// f(x) = 1/2 sum_i curvature_i x_i^2 with diagonal noise_scale (Sigma^{1/2}).
struct QuadraticToy {
    std::vector<double> curvature;
    std::vector<double> noise_scale;
    std::vector<double> start;
    double horizon = 1.0;
};

struct WeakErrorPoint {
    double eta = 0.0;
    double error = 0.0;     // |E[f(X_T)]_sde - E[f(W_T)]_discrete|
    double std_error = 0.0; // Monte-Carlo standard error of the discrete mean
};

// Discrete chains W <- W - eta (grad f + noise) against the closed-form
// Ornstein-Uhlenbeck expectation, one Monte-Carlo estimate per eta. Chains
// share underlying Gaussian increments across etas (common random numbers)
// when the step counts nest.
std::vector<WeakErrorPoint> weak_error_vs_eta(const QuadraticToy& toy,
                                              std::span<const double> etas, std::size_t seeds,
                                              std::uint64_t seed);

// -------------------------------------------------------------- bound side

struct BoundInputs {
    double empirical_loss = 0.0; // f_S
    std::size_t dim = 0;         // d
    double sigma = 0.0;
    double sum_top_eigs = 0.0;     // sum over layers of the top eigenvalue
    double third_deriv_bound = 0.0; // C
    double loss_bound = 0.0;        // L
    std::size_t sample_count = 0;   // n
    double confidence = 0.0;        // delta
    double weight_norm = 0.0;       // ||W||
};

struct BoundTerms {
    double empirical = 0.0;   // f_S
    double sharpness = 0.0;   // d sigma^2 / 2 * sum_top_eigs
    double third_order = 0.0; // C d^3 sigma^3 / 6
    double complexity = 0.0;  // L/(2 sqrt n) sqrt(d log(1 + ||W||^2/(d sigma^2)) + 2 log(1/delta))
    double total = 0.0;
};

BoundTerms pac_bayes_bound(const BoundInputs& in);

// ------------------------------------------------------------ flat metrics

// 1 - min over s in {-1,+1} of ||g/||g|| - s e||; lives in [1 - sqrt(2), 1].
// A zero gradient has no defined value and is reported as missing.
std::optional<double> alignment_metric(std::span<const double> g, std::span<const double> e);

// arccos(g.e / (||g|| ||e||)) in degrees, in [0, 180]; zero-norm input is missing.
std::optional<double> perturbation_angle(std::span<const double> g, std::span<const double> e);

// The same sliding-window population variance the dynamic refresh interval
// uses, applied per layer (last 10 samples of each history).
std::vector<double> spectral_variance_per_layer(const std::vector<std::vector<double>>& histories);

// --------------------------------------------------------------- landscape

struct LandscapeDirections {
    std::vector<double> dir1;
    std::vector<double> dir2;
};

// Orthonormal parameter-space slice directions: either the top-2 final-layer
// covariance eigenvectors embedded in the final weight block (column 0), or
// seeded random orthonormal directions.
LandscapeDirections default_landscape_directions(nn::Network& net, const nn::Batch& batch,
                                                 std::size_t power_iters, std::uint64_t seed,
                                                 bool random_directions);

// Loss at W + a dir1 + b dir2 over a grid x grid lattice with a, b in
// [-span, span]. Directions must be unit and mutually orthogonal within 1e-6.
linalg::DenseMatrix loss_landscape_slice(nn::Network& net, const nn::Batch& batch,
                                         std::span<const double> dir1,
                                         std::span<const double> dir2, double span_radius,
                                         std::size_t grid);

}  // namespace dsbp::analysis

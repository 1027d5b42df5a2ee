#include "dsbp/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

#include "dsbp/eigen.hpp"
#include "dsbp/hessian.hpp"
#include "dsbp/rng.hpp"
#include "dsbp/spectral.hpp"

namespace dsbp::analysis {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

void validate_sde_config(const SdeConfig& cfg) {
    if (cfg.steps < 1) throw std::invalid_argument("sde: steps must be at least 1");
    if (!(cfg.horizon > 0.0) || !std::isfinite(cfg.horizon)) {
        throw std::invalid_argument("sde: horizon must be positive");
    }
    if (cfg.eta < 0.0 || !std::isfinite(cfg.eta)) {
        throw std::invalid_argument("sde: eta must be finite and non-negative");
    }
}

// Gaussian increments of one Brownian path over [0, horizon]. For power-of-two
// step counts the path is built by recursive midpoint bisection with draws
// keyed to the (level, interval) node, so doubling `steps` under the same seed
// refines the same trajectory. Other step counts fall back to a plain
// sequential stream (still deterministic, just not refinement-consistent).
class BrownianPath {
  public:
    BrownianPath(std::uint64_t seed, std::size_t dim, double horizon, std::size_t steps)
        : dim_(dim), steps_(steps) {
        const bool dyadic = (steps & (steps - 1)) == 0;
        std::vector<std::vector<double>> values; // path value at grid points
        if (dyadic) {
            values.assign(2, std::vector<double>(dim, 0.0));
            Rng root = node_rng(seed, 0, 0);
            const double root_sd = std::sqrt(horizon);
            for (std::size_t i = 0; i < dim; ++i) values[1][i] = root_sd * root.normal();
            std::size_t level = 0;
            std::size_t intervals = 1;
            while (intervals < steps) {
                ++level;
                const double mid_sd = std::sqrt(horizon / static_cast<double>(intervals) / 4.0);
                std::vector<std::vector<double>> refined(2 * intervals + 1,
                                                         std::vector<double>(dim, 0.0));
                for (std::size_t j = 0; j < intervals; ++j) {
                    refined[2 * j] = values[j];
                    Rng node = node_rng(seed, level, j);
                    auto& mid = refined[2 * j + 1];
                    for (std::size_t i = 0; i < dim; ++i) {
                        mid[i] = 0.5 * (values[j][i] + values[j + 1][i]) + mid_sd * node.normal();
                    }
                }
                refined[2 * intervals] = values[intervals];
                values = std::move(refined);
                intervals *= 2;
            }
        } else {
            values.assign(steps + 1, std::vector<double>(dim, 0.0));
            Rng rng = Rng::stream(seed, "sde-noise");
            const double sd = std::sqrt(horizon / static_cast<double>(steps));
            for (std::size_t s = 1; s <= steps; ++s) {
                for (std::size_t i = 0; i < dim; ++i) {
                    values[s][i] = values[s - 1][i] + sd * rng.normal();
                }
            }
        }
        increments_.resize(steps);
        for (std::size_t s = 0; s < steps; ++s) {
            increments_[s].resize(dim);
            for (std::size_t i = 0; i < dim; ++i) {
                increments_[s][i] = values[s + 1][i] - values[s][i];
            }
        }
    }

    std::span<const double> increment(std::size_t step) const { return increments_.at(step); }

  private:
    static Rng node_rng(std::uint64_t seed, std::size_t level, std::size_t index) {
        const std::uint64_t tag =
            ((static_cast<std::uint64_t>(level) << 32) | static_cast<std::uint64_t>(index)) << 1;
        return Rng(mix_seed(mix_seed(seed, 0x62726964676ull), tag));
    }

    std::size_t dim_;
    std::size_t steps_;
    std::vector<std::vector<double>> increments_;
};

std::vector<double> flatten_gradients(const std::vector<nn::LayerGradients>& grads) {
    std::size_t total = 0;
    for (const auto& g : grads) total += g.weight.size() + g.bias.size();
    std::vector<double> flat;
    flat.reserve(total);
    for (const auto& g : grads) {
        flat.insert(flat.end(), g.weight.data.begin(), g.weight.data.end());
        flat.insert(flat.end(), g.bias.begin(), g.bias.end());
    }
    return flat;
}

}  // namespace

SdeTrajectory sde_path(const SdeProblem& problem, std::span<const double> x0,
                       const SdeConfig& cfg) {
    validate_sde_config(cfg);
    if (x0.empty()) throw std::invalid_argument("sde_path: empty initial state");
    if (!problem.drift || !problem.loss) {
        throw std::invalid_argument("sde_path: drift and loss callbacks are required");
    }
    const bool noisy = cfg.diffusion_mode == SdeDiffusion::diagonal &&
                       !problem.diffusion.empty() && cfg.eta > 0.0;
    if (!problem.diffusion.empty() && problem.diffusion.size() != x0.size()) {
        throw std::invalid_argument("sde_path: diffusion size does not match the state");
    }

    std::vector<double> x(x0.begin(), x0.end());
    const double dt = cfg.horizon / static_cast<double>(cfg.steps);
    const double sqrt_eta = std::sqrt(cfg.eta);

    std::unique_ptr<BrownianPath> path;
    if (noisy) {
        path = std::make_unique<BrownianPath>(cfg.noise_seed, x.size(), cfg.horizon, cfg.steps);
    }

    SdeTrajectory traj;
    traj.points.reserve(cfg.steps + 1);
    auto record = [&](std::size_t step) {
        const double loss = problem.loss(x);
        if (!std::isfinite(loss)) {
            throw std::runtime_error("sde diverged at step " + std::to_string(step));
        }
        const double time = cfg.horizon * static_cast<double>(step) /
                            static_cast<double>(cfg.steps);
        traj.points.push_back({time, loss, linalg::content_hash(std::span<const double>(x))});
    };

    record(0);
    for (std::size_t s = 0; s < cfg.steps; ++s) {
        const std::vector<double> d = problem.drift(x);
        if (d.size() != x.size()) {
            throw std::invalid_argument("sde_path: drift size does not match the state");
        }
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += dt * d[i];
        if (noisy) {
            const auto db = path->increment(s);
            for (std::size_t i = 0; i < x.size(); ++i) {
                x[i] += sqrt_eta * problem.diffusion[i] * db[i];
            }
        }
        if (!linalg::all_finite(std::span<const double>(x))) {
            throw std::runtime_error("sde state diverged at step " + std::to_string(s + 1));
        }
        record(s + 1);
    }
    traj.final_state = std::move(x);
    return traj;
}

SdeTrajectory sde_simulate(nn::Network net, const data::Dataset& data, const SdeConfig& cfg,
                           const optim::DsbpConfig& dsbp_cfg) {
    validate_sde_config(cfg);
    if (data.size() == 0) throw std::invalid_argument("sde_simulate: empty dataset");
    const std::size_t p = net.parameter_count();
    if (p > 100000) {
        throw std::invalid_argument("sde_simulate: network above the 1e5 parameter limit");
    }

    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), 0);
    const nn::Batch full = data::make_batch(data, all);

    data::EpochShuffleSource minibatches(data, dsbp_cfg.seed);
    Rng power_rng = Rng::stream(dsbp_cfg.seed, "power");
    std::vector<spectral::LayerSpectralState> states(net.layer_count());

    std::vector<double> x = net.parameter_vector();
    std::vector<double> sigma; // diagonal diffusion, refreshed with the spectrum
    const double dt = cfg.horizon / static_cast<double>(cfg.steps);
    const double sqrt_eta = std::sqrt(cfg.eta);
    const bool noisy = cfg.diffusion_mode == SdeDiffusion::diagonal && cfg.eta > 0.0;
    std::unique_ptr<BrownianPath> path;
    if (noisy) path = std::make_unique<BrownianPath>(cfg.noise_seed, p, cfg.horizon, cfg.steps);

    SdeTrajectory traj;
    traj.points.reserve(cfg.steps + 1);

    // projection error of a flattened gradient against the per-layer spectra
    auto projection_error = [&](const std::vector<nn::LayerGradients>& grads) {
        std::vector<double> err;
        err.reserve(p);
        for (std::size_t l = 0; l < net.layer_count(); ++l) {
            const auto& g = grads[l];
            if (states[l].initialized && states[l].eigenpairs.count() > 0 &&
                states[l].eigenpairs.count() < g.weight.rows) {
                const auto proj =
                    linalg::project_onto_subspace(g.weight, states[l].eigenpairs.vectors);
                for (std::size_t i = 0; i < g.weight.size(); ++i) {
                    err.push_back(g.weight.data[i] - proj.data[i]);
                }
            } else {
                err.insert(err.end(), g.weight.size(), 0.0);
            }
            err.insert(err.end(), g.bias.size(), 0.0); // biases are never projected
        }
        return err;
    };

    for (std::size_t s = 0; s < cfg.steps; ++s) {
        net.set_parameters(x);
        if (s % 10 == 0) {
            net.forward(full);
            for (std::size_t l = 0; l < net.layer_count(); ++l) {
                const std::size_t k_l =
                    std::min(dsbp_cfg.k, std::as_const(net).layer(l).weight.rows);
                spectral::refresh_spectral_state(states[l], net.activation(l + 1), k_l,
                                                 dsbp_cfg.power_iters, power_rng, s);
            }
            if (noisy) {
                constexpr std::size_t kNoiseSamples = 8;
                std::vector<std::vector<double>> errs;
                errs.reserve(kNoiseSamples);
                for (std::size_t j = 0; j < kNoiseSamples; ++j) {
                    const nn::Batch mb = minibatches.next(dsbp_cfg.batch_size);
                    net.forward(mb);
                    errs.push_back(projection_error(net.backward(mb)));
                }
                sigma.assign(p, 0.0);
                std::vector<double> mean(p, 0.0);
                for (const auto& e : errs) {
                    for (std::size_t i = 0; i < p; ++i) mean[i] += e[i];
                }
                for (std::size_t i = 0; i < p; ++i) mean[i] /= static_cast<double>(kNoiseSamples);
                for (const auto& e : errs) {
                    for (std::size_t i = 0; i < p; ++i) {
                        const double d = e[i] - mean[i];
                        sigma[i] += d * d;
                    }
                }
                for (std::size_t i = 0; i < p; ++i) {
                    sigma[i] = std::sqrt(sigma[i] / static_cast<double>(kNoiseSamples));
                }
            }
        }

        const nn::ForwardResult fwd = net.forward(full);
        if (!std::isfinite(fwd.loss)) {
            throw std::runtime_error("sde diverged at step " + std::to_string(s));
        }
        const double time = cfg.horizon * static_cast<double>(s) / static_cast<double>(cfg.steps);
        traj.points.push_back({time, fwd.loss, linalg::content_hash(std::span<const double>(x))});

        std::vector<double> drift = flatten_gradients(net.backward(full));
        for (double& v : drift) v = -v;

        if (dsbp_cfg.beta > 0.0) {
            // one Hessian-vector product along the summed per-layer rank-one
            // directions e1 rbar^T (each block normalized to unit length)
            std::vector<double> u(p, 0.0);
            bool any = false;
            for (std::size_t l = 0; l < net.layer_count(); ++l) {
                if (!states[l].initialized || states[l].eigenpairs.count() == 0) continue;
                const auto e1 = states[l].eigenpairs.vectors.row(0);
                const auto& input = net.activation(l); // n x d_in
                std::vector<double> rbar(input.cols, 0.0);
                for (std::size_t r = 0; r < input.rows; ++r) {
                    const auto row = input.row(r);
                    for (std::size_t c = 0; c < input.cols; ++c) rbar[c] += row[c];
                }
                for (double& v : rbar) v /= static_cast<double>(input.rows);
                if (linalg::normalize(rbar) == 0.0) continue;
                const auto [off, len] = net.weight_block(l);
                const std::size_t d_in = input.cols;
                for (std::size_t r = 0; r < e1.size(); ++r) {
                    for (std::size_t c = 0; c < d_in; ++c) {
                        u[off + r * d_in + c] = e1[r] * rbar[c];
                    }
                }
                any = true;
            }
            if (any && linalg::norm(u) > 0.0) {
                const std::vector<double> hv = nn::hessian_vector_product(net, full, u, 1e-4);
                for (std::size_t i = 0; i < p; ++i) drift[i] -= dsbp_cfg.beta * hv[i];
            }
        }

        for (std::size_t i = 0; i < p; ++i) x[i] += dt * drift[i];
        if (noisy) {
            const auto db = path->increment(s);
            for (std::size_t i = 0; i < p; ++i) x[i] += sqrt_eta * sigma[i] * db[i];
        }
        if (!linalg::all_finite(std::span<const double>(x))) {
            throw std::runtime_error("sde state diverged at step " + std::to_string(s + 1));
        }
    }

    net.set_parameters(x);
    const nn::ForwardResult last = net.forward(full);
    if (!std::isfinite(last.loss)) {
        throw std::runtime_error("sde diverged at step " + std::to_string(cfg.steps));
    }
    traj.points.push_back(
        {cfg.horizon, last.loss, linalg::content_hash(std::span<const double>(x))});
    traj.final_state = std::move(x);
    return traj;
}

std::vector<WeakErrorPoint> weak_error_vs_eta(const QuadraticToy& toy,
                                              std::span<const double> etas, std::size_t seeds,
                                              std::uint64_t seed) {
    const std::size_t dim = toy.curvature.size();
    if (dim == 0) throw std::invalid_argument("weak_error_vs_eta: empty toy problem");
    if (toy.noise_scale.size() != dim || toy.start.size() != dim) {
        throw std::invalid_argument("weak_error_vs_eta: toy field sizes disagree");
    }
    if (!(toy.horizon > 0.0)) throw std::invalid_argument("weak_error_vs_eta: horizon must be positive");
    if (etas.size() < 2) throw std::invalid_argument("weak_error_vs_eta: need at least 2 etas");
    if (seeds < 1) throw std::invalid_argument("weak_error_vs_eta: need at least 1 seed");

    std::vector<std::size_t> steps(etas.size());
    for (std::size_t j = 0; j < etas.size(); ++j) {
        if (!(etas[j] > 0.0)) throw std::invalid_argument("weak_error_vs_eta: etas must be positive");
        const double raw = toy.horizon / etas[j];
        steps[j] = static_cast<std::size_t>(std::llround(raw));
        if (steps[j] < 1 || std::abs(raw - static_cast<double>(steps[j])) > 1e-9 * raw) {
            throw std::invalid_argument(
                "weak_error_vs_eta: horizon must be an integer multiple of each eta");
        }
    }
    const std::size_t finest = *std::max_element(steps.begin(), steps.end());
    // common random numbers: all chains of one seed share the finest-grid
    // increments when the step counts nest
    bool nested = true;
    for (std::size_t n : steps) nested = nested && finest % n == 0;

    // closed-form Ornstein-Uhlenbeck expectation of f at the horizon
    auto exact_mean = [&](double eta) {
        double total = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            const double lam = toy.curvature[i];
            const double sig = toy.noise_scale[i];
            const double m = toy.start[i] * std::exp(-lam * toy.horizon);
            const double v = lam > 0.0
                                 ? eta * sig * sig * (1.0 - std::exp(-2.0 * lam * toy.horizon)) /
                                       (2.0 * lam)
                                 : eta * sig * sig * toy.horizon;
            total += 0.5 * lam * (m * m + v);
        }
        return total;
    };

    std::vector<WeakErrorPoint> out;
    out.reserve(etas.size());
    for (std::size_t j = 0; j < etas.size(); ++j) {
        const double eta = etas[j];
        const std::size_t n = steps[j];
        const std::size_t ratio = nested ? finest / n : 1;
        const double fine_sd = std::sqrt(toy.horizon / static_cast<double>(nested ? finest : n));
        std::vector<double> samples(seeds, 0.0);
        for (std::size_t s = 0; s < seeds; ++s) {
            Rng rng = Rng::stream(mix_seed(seed, s), nested ? "weak" : "weak-free");
            std::vector<double> w = toy.start;
            std::vector<double> db(dim);
            for (std::size_t step = 0; step < n; ++step) {
                std::fill(db.begin(), db.end(), 0.0);
                for (std::size_t r = 0; r < ratio; ++r) {
                    for (std::size_t i = 0; i < dim; ++i) db[i] += fine_sd * rng.normal();
                }
                for (std::size_t i = 0; i < dim; ++i) {
                    w[i] += -eta * toy.curvature[i] * w[i] +
                            std::sqrt(eta) * toy.noise_scale[i] * db[i];
                }
            }
            double f = 0.0;
            for (std::size_t i = 0; i < dim; ++i) f += 0.5 * toy.curvature[i] * w[i] * w[i];
            samples[s] = f;
        }
        double mean = 0.0;
        for (double f : samples) mean += f;
        mean /= static_cast<double>(seeds);
        double var = 0.0; // two-pass so identical samples give exactly zero
        for (double f : samples) var += (f - mean) * (f - mean);
        var /= static_cast<double>(seeds);
        out.push_back({eta, std::abs(mean - exact_mean(eta)),
                       std::sqrt(var / static_cast<double>(seeds))});
    }
    return out;
}

BoundTerms pac_bayes_bound(const BoundInputs& in) {
    if (!(in.sigma > 0.0)) throw std::invalid_argument("pac_bayes_bound: sigma must be positive");
    if (in.sample_count < 1) {
        throw std::invalid_argument("pac_bayes_bound: sample_count must be at least 1");
    }
    if (!(in.confidence > 0.0 && in.confidence < 1.0)) {
        throw std::invalid_argument("pac_bayes_bound: confidence must lie in (0, 1)");
    }
    if (!(in.loss_bound > 0.0)) {
        throw std::invalid_argument("pac_bayes_bound: loss_bound must be positive");
    }
    if (in.third_deriv_bound < 0.0) {
        throw std::invalid_argument("pac_bayes_bound: third_deriv_bound must be non-negative");
    }
    if (in.dim < 1) throw std::invalid_argument("pac_bayes_bound: dim must be at least 1");
    if (in.sum_top_eigs < 0.0) {
        throw std::invalid_argument("pac_bayes_bound: sum_top_eigs must be non-negative");
    }
    if (in.weight_norm < 0.0) {
        throw std::invalid_argument("pac_bayes_bound: weight_norm must be non-negative");
    }

    const double d = static_cast<double>(in.dim);
    const double n = static_cast<double>(in.sample_count);
    BoundTerms t;
    t.empirical = in.empirical_loss;
    t.sharpness = d * in.sigma * in.sigma / 2.0 * in.sum_top_eigs;
    t.third_order = in.third_deriv_bound * d * d * d * in.sigma * in.sigma * in.sigma / 6.0;
    const double ratio = in.weight_norm * in.weight_norm / (d * in.sigma * in.sigma);
    const double inner = d * std::log1p(ratio) + 2.0 * std::log(1.0 / in.confidence);
    t.complexity = in.loss_bound / (2.0 * std::sqrt(n)) * std::sqrt(inner);
    t.total = t.empirical + t.sharpness + t.third_order + t.complexity;
    return t;
}

std::optional<double> alignment_metric(std::span<const double> g, std::span<const double> e) {
    if (g.size() != e.size()) {
        throw std::invalid_argument("alignment_metric: dimension mismatch");
    }
    const double gn = linalg::norm(g);
    if (gn == 0.0) return std::nullopt;
    // ||g/||g|| - s e||^2 = 1 + ||e||^2 - 2 s (g.e)/||g||; the minimum picks s = sign(g.e)
    const double ue = linalg::dot(g, e) / gn;
    const double dist_sq = 1.0 + linalg::dot(e, e) - 2.0 * std::abs(ue);
    return 1.0 - std::sqrt(std::max(0.0, dist_sq));
}

std::optional<double> perturbation_angle(std::span<const double> g, std::span<const double> e) {
    if (g.size() != e.size()) {
        throw std::invalid_argument("perturbation_angle: dimension mismatch");
    }
    const double gn = linalg::norm(g);
    const double en = linalg::norm(e);
    if (gn == 0.0 || en == 0.0) return std::nullopt;
    const double c = std::clamp(linalg::dot(g, e) / (gn * en), -1.0, 1.0);
    return std::acos(c) * 180.0 / kPi;
}

std::vector<double> spectral_variance_per_layer(
    const std::vector<std::vector<double>>& histories) {
    std::vector<double> out;
    out.reserve(histories.size());
    for (const auto& h : histories) {
        if (h.size() < 2) {
            throw std::invalid_argument(
                "spectral_variance_per_layer: each history needs at least 2 samples");
        }
        const std::size_t window = std::min(h.size(), spectral::kLambdaWindow);
        out.push_back(spectral::window_variance(
            std::span<const double>(h.data() + (h.size() - window), window)));
    }
    return out;
}

LandscapeDirections default_landscape_directions(nn::Network& net, const nn::Batch& batch,
                                                 std::size_t power_iters, std::uint64_t seed,
                                                 bool random_directions) {
    const std::size_t p = net.parameter_count();
    LandscapeDirections dirs;
    dirs.dir1.assign(p, 0.0);
    dirs.dir2.assign(p, 0.0);
    if (random_directions) {
        Rng rng = Rng::stream(seed, "landscape");
        for (double& v : dirs.dir1) v = rng.normal();
        for (double& v : dirs.dir2) v = rng.normal();
    } else {
        net.forward(batch);
        const std::size_t last = net.layer_count() - 1;
        const auto cov = linalg::activation_covariance(net.activation(last + 1));
        if (cov.rows < 2) {
            throw std::invalid_argument(
                "default_landscape_directions: need at least 2 output units");
        }
        Rng rng = Rng::stream(seed, "landscape");
        const auto pairs =
            linalg::power_iteration_topk(cov, 2, std::max<std::size_t>(power_iters, 1), rng);
        const auto block = net.weight_block(last);
        const std::size_t d_in = std::as_const(net).layer(last).weight.cols;
        for (std::size_t r = 0; r < cov.rows; ++r) {
            dirs.dir1[block.first + r * d_in] = pairs.vectors(0, r);
            dirs.dir2[block.first + r * d_in] = pairs.vectors(1, r);
        }
    }
    if (linalg::normalize(dirs.dir1) == 0.0) {
        throw std::invalid_argument("default_landscape_directions: first direction vanished");
    }
    const double overlap = linalg::dot(dirs.dir1, dirs.dir2);
    linalg::add_scaled(std::span<double>(dirs.dir2), -overlap,
                       std::span<const double>(dirs.dir1));
    if (linalg::normalize(dirs.dir2) == 0.0) {
        throw std::invalid_argument("default_landscape_directions: directions are parallel");
    }
    return dirs;
}

linalg::DenseMatrix loss_landscape_slice(nn::Network& net, const nn::Batch& batch,
                                         std::span<const double> dir1,
                                         std::span<const double> dir2, double span_radius,
                                         std::size_t grid) {
    const std::size_t p = net.parameter_count();
    if (dir1.size() != p || dir2.size() != p) {
        throw std::invalid_argument("loss_landscape_slice: direction size mismatch");
    }
    if (grid < 1) throw std::invalid_argument("loss_landscape_slice: grid must be at least 1");
    if (!(span_radius >= 0.0) || !std::isfinite(span_radius)) {
        throw std::invalid_argument("loss_landscape_slice: span must be finite and non-negative");
    }
    if (std::abs(linalg::norm(dir1) - 1.0) > 1e-6 || std::abs(linalg::norm(dir2) - 1.0) > 1e-6 ||
        std::abs(linalg::dot(dir1, dir2)) > 1e-6) {
        throw std::invalid_argument("loss_landscape_slice: directions must be orthonormal");
    }

    const std::vector<double> theta0 = net.parameter_vector();
    std::vector<double> theta(p);
    linalg::DenseMatrix out(grid, grid);
    auto offset = [&](std::size_t i) {
        if (grid == 1) return 0.0;
        return span_radius * ((2.0 * static_cast<double>(i)) / static_cast<double>(grid - 1) - 1.0);
    };
    for (std::size_t i = 0; i < grid; ++i) {
        const double a = offset(i);
        for (std::size_t j = 0; j < grid; ++j) {
            const double b = offset(j);
            for (std::size_t idx = 0; idx < p; ++idx) {
                theta[idx] = theta0[idx] + a * dir1[idx] + b * dir2[idx];
            }
            net.set_parameters(theta);
            out(i, j) = net.forward(batch).loss;
        }
    }
    net.set_parameters(theta0);
    return out;
}

}  // namespace dsbp::analysis

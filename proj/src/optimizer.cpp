#include "dsbp/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>

#include "dsbp/analysis.hpp"
#include "dsbp/eigen.hpp"
#include "dsbp/rng.hpp"

namespace dsbp::optim {

namespace {

using linalg::DenseMatrix;

void validate_config(const DsbpConfig& cfg) {
    if (cfg.eta < 0.0 || !std::isfinite(cfg.eta)) {
        throw std::invalid_argument("train: eta must be finite and non-negative");
    }
    if (cfg.k < 1) throw std::invalid_argument("train: k must be at least 1");
    if (cfg.total_iters < 1) throw std::invalid_argument("train: total_iters must be at least 1");
    if (cfg.power_iters < 1) throw std::invalid_argument("train: power_iters must be at least 1");
    if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be at least 1");
}

[[noreturn]] void abort_divergence(const nn::Network& net, std::size_t iter) {
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        const auto& layer = net.layer(l);
        if (!linalg::all_finite(layer.weight) || !linalg::all_finite(layer.bias)) {
            throw std::runtime_error("training diverged at iteration " + std::to_string(iter) +
                                     ": non-finite parameters in layer " + std::to_string(l));
        }
    }
    throw std::runtime_error("training diverged at iteration " + std::to_string(iter) +
                             ": non-finite loss with finite parameters (logit overflow)");
}

std::vector<nn::LayerGradients> unflatten_gradients(const nn::Network& net,
                                                    std::span<const double> flat) {
    std::vector<nn::LayerGradients> grads(net.layer_count());
    std::size_t pos = 0;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        const auto& layer = net.layer(l);
        grads[l].weight = DenseMatrix(layer.weight.rows, layer.weight.cols);
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), layer.weight.size(),
                    grads[l].weight.data.begin());
        pos += layer.weight.size();
        grads[l].bias.assign(flat.begin() + static_cast<std::ptrdiff_t>(pos),
                             flat.begin() + static_cast<std::ptrdiff_t>(pos + layer.bias.size()));
        pos += layer.bias.size();
    }
    return grads;
}

void apply_mask(DenseMatrix& w, const DenseMatrix& mask) {
    for (std::size_t i = 0; i < w.data.size(); ++i) w.data[i] *= mask.data[i];
}

double zero_fraction(const DenseMatrix& w) {
    if (w.empty()) return 0.0;
    std::size_t zeros = 0;
    for (double v : w.data) {
        if (v == 0.0) ++zeros;
    }
    return static_cast<double>(zeros) / static_cast<double>(w.size());
}

std::uint64_t network_hash(const nn::Network& net) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        const auto& layer = net.layer(l);
        h = mix_seed(h, linalg::content_hash(layer.weight));
        h = mix_seed(h, linalg::content_hash(std::span<const double>(layer.bias)));
    }
    return h;
}

double evaluate_accuracy(nn::Network& net, const nn::Batch& batch) {
    return net.forward(batch).accuracy;
}

struct SpectralBook {
    std::vector<spectral::LayerSpectralState> states;
    std::vector<std::size_t> next_refresh; // iteration of the next refresh, 0 = never
    std::vector<DenseMatrix> masks;        // empty until a prune commits
    std::vector<spectral::PruneSchedule> schedules;
    bool schedules_ready = false;
};

TrainReport run_training(nn::Network net, data::BatchSource& source, const DsbpConfig& cfg,
                         BaselineKind kind, double rho, const data::Dataset* test) {
    validate_config(cfg);
    if (kind == BaselineKind::sam && !(rho > 0.0)) {
        throw std::invalid_argument("train_sam: rho must be positive");
    }

    const std::size_t layers = net.layer_count();
    const std::size_t samples = source.sample_count();
    if (samples == 0) throw std::invalid_argument("train: data source is empty");
    const std::size_t epoch_len =
        std::max<std::size_t>(1, (samples + cfg.batch_size - 1) / cfg.batch_size);

    const bool spectral_mode = kind == BaselineKind::dsbp || kind == BaselineKind::lie;

    TrainReport report;
    report.records.reserve(cfg.total_iters);

    SpectralBook book;
    Rng power_rng = Rng::stream(cfg.seed, "power");
    spectral::IntervalController interval{cfg.p0, cfg.alpha};
    if (spectral_mode) {
        book.states.resize(layers);
        book.next_refresh.assign(layers, cfg.p0); // 0 keeps refreshes disabled
        book.masks.resize(layers);
        book.schedules.resize(layers);
    }

    nn::Batch test_batch;
    if (test != nullptr) {
        std::vector<std::size_t> idx(test->size());
        std::iota(idx.begin(), idx.end(), 0);
        test_batch = data::make_batch(*test, idx);
    }

    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed_ms = [&t0]() {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    };
    double epoch_start_ms = 0.0;

    for (std::size_t t = 1; t <= cfg.total_iters; ++t) {
        nn::Batch batch = source.next(cfg.batch_size);

        // spectrum refresh + pruning, before the gradient for this iteration
        std::vector<std::size_t> refreshed;
        if (spectral_mode && cfg.p0 > 0) {
            for (std::size_t l = 0; l < layers; ++l) {
                if (book.next_refresh[l] == t) refreshed.push_back(l);
            }
        }
        if (!refreshed.empty()) {
            net.forward(batch);
            for (std::size_t l : refreshed) {
                const std::size_t k_l = std::min(cfg.k, std::as_const(net).layer(l).weight.rows);
                spectral::refresh_spectral_state(book.states[l], net.activation(l + 1), k_l,
                                                 cfg.power_iters, power_rng, t);
                const std::size_t p_next =
                    spectral::dynamic_interval(interval, book.states[l].lambda_history);
                book.next_refresh[l] = t + p_next;
                report.refresh_events.push_back(
                    {t, l, book.states[l].lambda_history.back(), p_next});
            }
            if (!book.schedules_ready &&
                std::all_of(book.states.begin(), book.states.end(),
                            [](const spectral::LayerSpectralState& s) { return s.initialized; })) {
                report.initial_lambda1.resize(layers);
                double lam_max = 0.0;
                for (std::size_t l = 0; l < layers; ++l) {
                    report.initial_lambda1[l] = book.states[l].lambda_history.front();
                    lam_max = std::max(lam_max, report.initial_lambda1[l]);
                }
                for (std::size_t l = 0; l < layers; ++l) {
                    book.schedules[l] = {
                        spectral::layer_threshold_scale(cfg.tau0, report.initial_lambda1[l],
                                                        lam_max),
                        cfg.beta, cfg.total_iters};
                }
                book.schedules_ready = true;
            }
            if (cfg.prune && book.schedules_ready) {
                for (std::size_t l : refreshed) {
                    const double tau = spectral::prune_threshold(book.schedules[l], t);
                    const auto& w = std::as_const(net).layer(l).weight;
                    auto candidate = spectral::spectral_prune(w, book.states[l], tau);
                    double err = 0.0;
                    for (std::size_t i = 0; i < w.data.size(); ++i) {
                        const double d = w.data[i] - candidate.pruned.data[i];
                        err += d * d;
                    }
                    const double budget = 0.05 * book.states[l].covariance_trace;
                    const bool ok = spectral::reconstruction_error_ok(
                        w, candidate.pruned,
                        std::span<const double>(&book.states[l].covariance_trace, 1));
                    if (ok) {
                        net.layer(l).weight = std::move(candidate.pruned);
                        book.masks[l] = std::move(candidate.mask);
                    }
                    report.prune_events.push_back(
                        {t, l, tau, candidate.sparsity, err, budget, ok});
                }
            }
        }

        const nn::ForwardResult fwd = net.forward(batch);
        if (!std::isfinite(fwd.loss)) abort_divergence(net, t);

        std::vector<nn::LayerGradients> grads;
        if (kind == BaselineKind::sam) {
            const std::vector<double> theta = net.parameter_vector();
            nn::GradientFn gfn = [&](std::span<const double> point) {
                net.set_parameters(point);
                return net.gradient_vector(batch);
            };
            const std::vector<double> g = sam_effective_gradient(gfn, theta, rho);
            net.set_parameters(theta);
            grads = unflatten_gradients(net, g);
        } else {
            grads = net.backward(batch);
        }

        // weight updates per layer; biases always take the plain SGD step
        for (std::size_t l = 0; l < layers; ++l) {
            auto& layer = net.layer(l);
            switch (kind) {
                case BaselineKind::sgd:
                case BaselineKind::sam:
                    linalg::add_scaled(layer.weight, -cfg.eta, grads[l].weight);
                    break;
                case BaselineKind::dsbp:
                    if (book.states[l].initialized) {
                        spectral::dsbp_weight_update(layer.weight, grads[l].weight,
                                                     book.states[l], cfg.eta, cfg.beta);
                    } else {
                        linalg::add_scaled(layer.weight, -cfg.eta, grads[l].weight);
                    }
                    break;
                case BaselineKind::lie:
                    if (book.states[l].initialized) {
                        lie_step(layer.weight, book.states[l], grads[l].weight, cfg.eta);
                    }
                    break;
            }
            linalg::add_scaled(std::span<double>(layer.bias), -cfg.eta,
                               std::span<const double>(grads[l].bias));
            if (spectral_mode && !book.masks[l].empty()) apply_mask(layer.weight, book.masks[l]);
        }

        // logging
        harness::MetricsRecord rec;
        rec.iteration = static_cast<std::int64_t>(t);
        rec.epoch = static_cast<std::int64_t>((t - 1) / epoch_len);
        rec.train_loss = fwd.loss;
        rec.lambda_top.assign(layers, std::nullopt);
        rec.lambda_top_scaled.assign(layers, std::nullopt);
        rec.sparsity.resize(layers);
        for (std::size_t l = 0; l < layers; ++l) {
            rec.sparsity[l] = zero_fraction(std::as_const(net).layer(l).weight);
            if (spectral_mode && book.states[l].initialized &&
                book.states[l].eigenpairs.count() > 0) {
                const double lam = book.states[l].eigenpairs.values[0];
                rec.lambda_top[l] = lam;
                rec.lambda_top_scaled[l] = lam / static_cast<double>(cfg.batch_size);
            }
        }
        const std::size_t last = layers - 1;
        if (spectral_mode && book.states[last].initialized &&
            book.states[last].eigenpairs.count() > 0) {
            const auto e1 = book.states[last].eigenpairs.vectors.row(0);
            rec.alignment = analysis::alignment_metric(grads[last].bias, e1);
            rec.angle_degrees = analysis::perturbation_angle(grads[last].bias, e1);
        }
        if (cfg.hessian_every > 0 && (t % cfg.hessian_every == 0 || t == cfg.total_iters)) {
            rec.hessian_top =
                nn::top_hessian_eigenvalue(net, batch, 20, mix_seed(cfg.seed, t)).value;
        }
        if (test != nullptr &&
            ((cfg.test_every > 0 && t % cfg.test_every == 0) || t == cfg.total_iters)) {
            rec.test_accuracy = evaluate_accuracy(net, test_batch);
        }
        rec.wall_clock_ms = elapsed_ms();
        report.records.push_back(std::move(rec));

        if (cfg.record_weight_hashes) report.weight_hashes.push_back(network_hash(net));

        if (t % epoch_len == 0 || t == cfg.total_iters) {
            const double now = elapsed_ms();
            report.epoch_wall_ms.push_back(now - epoch_start_ms);
            epoch_start_ms = now;
        }
    }

    report.final_net = std::move(net);
    return report;
}

}  // namespace

TrainReport train_dsbp(nn::Network net, data::BatchSource& source, const DsbpConfig& cfg,
                       const data::Dataset* test) {
    return run_training(std::move(net), source, cfg, BaselineKind::dsbp, 0.0, test);
}

TrainReport train_sgd(nn::Network net, data::BatchSource& source, const DsbpConfig& cfg,
                      const data::Dataset* test) {
    return run_training(std::move(net), source, cfg, BaselineKind::sgd, 0.0, test);
}

TrainReport train_sam(nn::Network net, data::BatchSource& source, const DsbpConfig& cfg,
                      double rho, const data::Dataset* test) {
    return run_training(std::move(net), source, cfg, BaselineKind::sam, rho, test);
}

TrainReport train_lie(nn::Network net, data::BatchSource& source, const DsbpConfig& cfg,
                      const data::Dataset* test) {
    return run_training(std::move(net), source, cfg, BaselineKind::lie, 0.0, test);
}

TrainReport train(nn::Network net, data::BatchSource& source, const DsbpConfig& cfg,
                  const data::Dataset* test) {
    switch (cfg.baseline_kind) {
        case BaselineKind::dsbp:
            return train_dsbp(std::move(net), source, cfg, test);
        case BaselineKind::sgd:
            return train_sgd(std::move(net), source, cfg, test);
        case BaselineKind::sam:
            return train_sam(std::move(net), source, cfg, cfg.sam_rho, test);
        case BaselineKind::lie:
            return train_lie(std::move(net), source, cfg, test);
    }
    throw std::invalid_argument("train: unknown baseline kind");
}

std::vector<double> sam_effective_gradient(const nn::GradientFn& gradient,
                                           std::span<const double> point, double rho) {
    if (!(rho > 0.0)) throw std::invalid_argument("sam_effective_gradient: rho must be positive");
    std::vector<double> g = gradient(point);
    if (g.size() != point.size()) {
        throw std::invalid_argument("sam_effective_gradient: gradient size mismatch");
    }
    const double n = linalg::norm(g);
    if (n == 0.0) return g;
    std::vector<double> perturbed(point.begin(), point.end());
    const double step = rho / n;
    for (std::size_t i = 0; i < perturbed.size(); ++i) perturbed[i] += step * g[i];
    return gradient(perturbed);
}

linalg::DenseMatrix lie_generator(const spectral::LayerSpectralState& state,
                                  const linalg::DenseMatrix& grad) {
    if (!state.initialized) {
        throw std::invalid_argument("lie_generator: spectral state is not initialized");
    }
    const std::size_t d_out = grad.rows;
    if (state.eigenpairs.count() == 0 || state.eigenpairs.vectors.cols != d_out) {
        throw std::invalid_argument("lie_generator: eigenvector dimension " +
                                    std::to_string(state.eigenpairs.vectors.cols) +
                                    " does not match gradient rows " + std::to_string(d_out));
    }

    double lam_sum = 0.0;
    for (double v : state.eigenpairs.values) lam_sum += std::max(0.0, v);

    DenseMatrix b(d_out, d_out);
    if (lam_sum > 0.0) {
        for (std::size_t i = 0; i < state.eigenpairs.count(); ++i) {
            const double lam = std::max(0.0, state.eigenpairs.values[i]);
            if (lam == 0.0) continue;
            const auto e = state.eigenpairs.vectors.row(i);
            std::vector<double> gt = linalg::matvec_t(grad, e); // G^T e
            std::vector<double> ghat = linalg::matvec(grad, gt); // G G^T e
            if (linalg::normalize(ghat) == 0.0) continue;
            linalg::add_outer(b, lam / lam_sum, e, ghat);
        }
    }
    DenseMatrix omega(d_out, d_out);
    for (std::size_t a = 0; a < d_out; ++a) {
        for (std::size_t c = 0; c < d_out; ++c) {
            omega(a, c) = b(a, c) - b(c, a);
        }
    }
    return omega;
}

void rk4_rotation_step(linalg::DenseMatrix& w, const linalg::DenseMatrix& omega, double eta) {
    if (omega.rows != omega.cols || omega.rows != w.rows) {
        throw std::invalid_argument("rk4_rotation_step: generator shape does not match weights");
    }
    if (linalg::max_abs(omega) == 0.0) return;
    auto apply = [&omega](const DenseMatrix& x) {
        DenseMatrix y = linalg::matmul(omega, x);
        linalg::scale(y, -1.0);
        return y;
    };
    const DenseMatrix k1 = apply(w);
    DenseMatrix tmp = w;
    linalg::add_scaled(tmp, eta / 2.0, k1);
    const DenseMatrix k2 = apply(tmp);
    tmp = w;
    linalg::add_scaled(tmp, eta / 2.0, k2);
    const DenseMatrix k3 = apply(tmp);
    tmp = w;
    linalg::add_scaled(tmp, eta, k3);
    const DenseMatrix k4 = apply(tmp);
    linalg::add_scaled(w, eta / 6.0, k1);
    linalg::add_scaled(w, eta / 3.0, k2);
    linalg::add_scaled(w, eta / 3.0, k3);
    linalg::add_scaled(w, eta / 6.0, k4);
}

void lie_step(linalg::DenseMatrix& w, const spectral::LayerSpectralState& state,
              const linalg::DenseMatrix& grad, double eta) {
    if (!grad.same_shape(w)) {
        throw std::invalid_argument("lie_step: gradient shape does not match weights");
    }
    const DenseMatrix omega = lie_generator(state, grad);
    double skew = 0.0;
    for (std::size_t a = 0; a < omega.rows; ++a) {
        for (std::size_t c = a; c < omega.cols; ++c) {
            skew = std::max(skew, std::abs(omega(a, c) + omega(c, a)));
        }
    }
    if (skew > 1e-12) {
        throw std::logic_error("lie_step: generator lost skew-symmetry");
    }
    rk4_rotation_step(w, omega, eta);
}

}  // namespace dsbp::optim

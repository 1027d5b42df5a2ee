#include "dsbp/extensions.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "dsbp/hessian.hpp"
#include "dsbp/rng.hpp"

namespace dsbp::ext {

using linalg::DenseMatrix;
using linalg::EigenPairs;

namespace {

double dot_rows(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// sign that keeps `v` on the same side as `ref` (ties keep +1)
double side_sign(std::span<const double> ref, std::span<const double> v) {
    return dot_rows(ref, v) < 0.0 ? -1.0 : 1.0;
}

}  // namespace

TransferAnchor build_transfer_anchor(nn::Network& net, const nn::Batch& batch, std::size_t m,
                                     std::size_t power_iters, std::uint64_t seed) {
    if (m == 0) throw std::invalid_argument("build_transfer_anchor: m must be positive");
    if (power_iters == 0)
        throw std::invalid_argument("build_transfer_anchor: power_iters must be positive");

    net.forward(batch);
    const std::size_t layers = net.layer_count();
    Rng rng = Rng::stream(seed, "anchor");

    TransferAnchor anchor;
    anchor.layers.resize(layers);
    anchor.layer_scale.resize(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        const auto cov = linalg::activation_covariance(net.activation(l + 1));
        const std::size_t m_l = std::min(m, cov.rows);
        auto pairs = linalg::power_iteration_topk(cov, m_l, power_iters, rng);

        std::vector<double> w(pairs.count(), 0.0);
        double total = 0.0;
        for (std::size_t i = 0; i < pairs.count(); ++i) {
            w[i] = std::max(0.0, pairs.values[i]);
            total += w[i];
        }
        if (total > 0.0) {
            for (double& v : w) v /= total;
        } else {
            // fully degenerate spectrum: fall back to equal weights
            std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(w.size()));
        }
        anchor.layers[l] = {std::move(pairs), std::move(w)};
        anchor.layer_scale[l] = static_cast<double>(l + 1) / static_cast<double>(layers);
    }
    return anchor;
}

double alignment_loss(const TransferAnchor& anchor,
                      const std::vector<EigenPairs>& current) {
    if (anchor.layers.size() != current.size()) {
        throw std::invalid_argument("alignment_loss: layer counts differ (" +
                                    std::to_string(anchor.layers.size()) + " vs " +
                                    std::to_string(current.size()) + ")");
    }
    double total = 0.0;
    for (std::size_t l = 0; l < current.size(); ++l) {
        const auto& pre = anchor.layers[l].pairs;
        const auto& fine = current[l];
        if (pre.count() != fine.count() || pre.vectors.cols != fine.vectors.cols) {
            throw std::invalid_argument("alignment_loss: eigenvector shapes differ at layer " +
                                        std::to_string(l));
        }
        for (std::size_t i = 0; i < pre.count(); ++i) {
            const auto ep = pre.vectors.row(i);
            const auto ef = fine.vectors.row(i);
            double plus = 0.0, minus = 0.0;
            for (std::size_t c = 0; c < ep.size(); ++c) {
                const double dp = ep[c] - ef[c];
                const double dm = ep[c] + ef[c];
                plus += dp * dp;
                minus += dm * dm;
            }
            total += anchor.layers[l].weights[i] * std::min(plus, minus);
        }
    }
    return total;
}

DenseMatrix transfer_correction(const DenseMatrix& w, const LayerAnchor& anchor,
                                const EigenPairs& current, double strength, double layer_scale,
                                double clip_threshold) {
    if (strength < 0.0)
        throw std::invalid_argument("transfer_correction: strength must be non-negative");
    if (anchor.pairs.count() != current.count() ||
        anchor.pairs.vectors.cols != current.vectors.cols ||
        anchor.weights.size() != anchor.pairs.count()) {
        throw std::invalid_argument("transfer_correction: anchor and current shapes differ");
    }
    const std::size_t d = w.rows;
    if (current.vectors.cols != d) {
        throw std::invalid_argument("transfer_correction: eigenvectors do not match weight rows");
    }

    // generator sum_i w_i (e_i^pre e_i^T - e_i e_i^pre^T), skew by construction
    DenseMatrix gen(d, d);
    for (std::size_t i = 0; i < current.count(); ++i) {
        const auto ep = anchor.pairs.vectors.row(i);
        const auto ef = current.vectors.row(i);
        const double s = side_sign(ep, ef);
        const double wi = anchor.weights[i];
        for (std::size_t a = 0; a < d; ++a) {
            for (std::size_t b = 0; b < d; ++b) {
                gen(a, b) += wi * (ep[a] * s * ef[b] - s * ef[a] * ep[b]);
            }
        }
    }

    DenseMatrix correction = linalg::matmul(gen, w);
    const double scale = strength * layer_scale;
    for (double& v : correction.data) v *= scale;
    const double norm = linalg::frobenius_norm(correction);
    if (norm > clip_threshold) {
        const double shrink = clip_threshold / norm;
        for (double& v : correction.data) v *= shrink;
    }

    DenseMatrix out = w;
    linalg::add_scaled(out, 1.0, correction);
    return out;
}

void meta_buffer_blend(SpectralMemoryBuffer& buffer, const std::vector<EigenPairs>& fresh) {
    if (buffer.empty()) {
        buffer.layer_vectors.reserve(fresh.size());
        for (const auto& pairs : fresh) {
            DenseMatrix rows = pairs.vectors;
            for (std::size_t i = 0; i < rows.rows; ++i) {
                auto r = rows.row(i);
                const double n = std::sqrt(dot_rows(r, r));
                if (n > 0.0) {
                    for (double& v : r) v /= n;
                }
            }
            buffer.layer_vectors.push_back(std::move(rows));
        }
        return;
    }
    if (buffer.layer_vectors.size() != fresh.size()) {
        throw std::invalid_argument("meta_buffer_blend: layer counts differ");
    }
    const double m = buffer.momentum;
    for (std::size_t l = 0; l < fresh.size(); ++l) {
        auto& held = buffer.layer_vectors[l];
        const auto& inc = fresh[l].vectors;
        if (held.rows != inc.rows || held.cols != inc.cols) {
            throw std::invalid_argument("meta_buffer_blend: vector shapes differ at layer " +
                                        std::to_string(l));
        }
        for (std::size_t i = 0; i < held.rows; ++i) {
            auto b = held.row(i);
            const auto f = inc.row(i);
            const double s = side_sign(b, f);
            double norm_sq = 0.0;
            for (std::size_t c = 0; c < b.size(); ++c) {
                b[c] = m * b[c] + (1.0 - m) * s * f[c];
                norm_sq += b[c] * b[c];
            }
            const double n = std::sqrt(norm_sq);
            if (n > 0.0) {
                for (double& v : b) v /= n;
            }
        }
    }
}

double task_similarity(const std::vector<EigenPairs>& a, const std::vector<EigenPairs>& b,
                       std::size_t k) {
    if (a.size() != b.size() || a.empty()) {
        throw std::invalid_argument("task_similarity: layer counts differ or are empty");
    }
    if (k == 0) throw std::invalid_argument("task_similarity: k must be positive");
    double total = 0.0;
    for (std::size_t l = 0; l < a.size(); ++l) {
        if (a[l].count() < k || b[l].count() < k || a[l].vectors.cols != b[l].vectors.cols) {
            throw std::invalid_argument("task_similarity: layer " + std::to_string(l) +
                                        " has fewer than k vectors or mismatched dims");
        }
        double layer_sim = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            layer_sim += std::abs(dot_rows(a[l].vectors.row(i), b[l].vectors.row(i)));
        }
        total += layer_sim / static_cast<double>(k);
    }
    return total / static_cast<double>(a.size());
}

DenseMatrix init_regularizer_grad(const DenseMatrix& w, const DenseMatrix& w_pre) {
    if (w.rows != w_pre.rows || w.cols != w_pre.cols) {
        throw std::invalid_argument("init_regularizer_grad: shapes differ");
    }
    DenseMatrix g(w.rows, w.cols);
    for (std::size_t i = 0; i < w.data.size(); ++i) {
        g.data[i] = 0.02 * (w.data[i] - w_pre.data[i]);
    }
    return g;
}

double init_regularizer_loss(const DenseMatrix& w, const DenseMatrix& w_pre) {
    if (w.rows != w_pre.rows || w.cols != w_pre.cols) {
        throw std::invalid_argument("init_regularizer_loss: shapes differ");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < w.data.size(); ++i) {
        const double d = w.data[i] - w_pre.data[i];
        s += d * d;
    }
    return 0.01 * s;
}

AdaptResult meta_adapt(const nn::Network& net, const data::FewshotTask& task,
                       const MetaConfig& cfg, std::uint64_t episode_seed) {
    const auto& inner = cfg.inner;
    if (!(inner.eta >= 0.0) || !std::isfinite(inner.eta)) {
        throw std::invalid_argument("meta_adapt: eta must be finite and non-negative");
    }
    if (inner.k == 0) throw std::invalid_argument("meta_adapt: k must be positive");
    if (inner.power_iters == 0)
        throw std::invalid_argument("meta_adapt: power_iters must be positive");

    nn::Network adapted = net;
    const std::size_t layers = adapted.layer_count();
    std::vector<DenseMatrix> w_pre(layers);
    for (std::size_t l = 0; l < layers; ++l) w_pre[l] = adapted.layer(l).weight;

    std::vector<spectral::LayerSpectralState> states(layers);
    Rng power_rng = Rng::stream(mix_seed(inner.seed, episode_seed), "power");

    for (std::size_t step = 1; step <= cfg.inner_steps; ++step) {
        const nn::ForwardResult fwd = adapted.forward(task.support);
        if (!std::isfinite(fwd.loss)) {
            throw std::runtime_error("meta_adapt: support loss diverged at inner step " +
                                     std::to_string(step));
        }
        // refresh at the first step, then on the configured cadence
        const bool due = step == 1 || (inner.p0 > 0 && (step - 1) % inner.p0 == 0);
        if (due) {
            for (std::size_t l = 0; l < layers; ++l) {
                const std::size_t k_l =
                    std::min(inner.k, std::as_const(adapted).layer(l).weight.rows);
                spectral::refresh_spectral_state(states[l], adapted.activation(l + 1), k_l,
                                                 inner.power_iters, power_rng, step);
            }
        }
        const auto grads = adapted.backward(task.support);
        for (std::size_t l = 0; l < layers; ++l) {
            auto& layer = adapted.layer(l);
            DenseMatrix g = grads[l].weight;
            linalg::add_scaled(g, 1.0, init_regularizer_grad(layer.weight, w_pre[l]));
            if (states[l].initialized) {
                spectral::dsbp_weight_update(layer.weight, g, states[l], inner.eta, inner.beta);
            } else {
                linalg::add_scaled(layer.weight, -inner.eta, g);
            }
            linalg::add_scaled(std::span<double>(layer.bias), -inner.eta,
                               std::span<const double>(grads[l].bias));
        }
    }

    const nn::ForwardResult q = adapted.forward(task.query);
    return {std::move(adapted), q.accuracy, q.loss};
}

MetaReport meta_train(const std::function<data::FewshotTask()>& tasks, nn::Network net,
                      const MetaConfig& cfg) {
    if (!tasks) throw std::invalid_argument("meta_train: empty task stream");
    if (cfg.outer_steps == 0)
        throw std::invalid_argument("meta_train: outer_steps must be positive");
    if (!(cfg.outer_step >= 0.0) || cfg.outer_step > 1.0) {
        throw std::invalid_argument("meta_train: outer_step must lie in [0, 1]");
    }
    if (cfg.buffer_k == 0) throw std::invalid_argument("meta_train: buffer_k must be positive");

    MetaReport report;
    report.buffer.layer_vectors.clear();
    report.episodes.reserve(cfg.outer_steps);

    for (std::size_t t = 1; t <= cfg.outer_steps; ++t) {
        data::FewshotTask task = tasks();
        AdaptResult ar = meta_adapt(net, task, cfg, t);

        // fresh spectra of the adapted network on the support set
        ar.net.forward(task.support);
        Rng buf_rng = Rng::stream(mix_seed(cfg.inner.seed, t), "buffer");
        std::vector<EigenPairs> fresh(ar.net.layer_count());
        for (std::size_t l = 0; l < ar.net.layer_count(); ++l) {
            const auto cov = linalg::activation_covariance(ar.net.activation(l + 1));
            const std::size_t k_l = std::min(cfg.buffer_k, cov.rows);
            const DenseMatrix* warm =
                report.buffer.empty() ? nullptr : &report.buffer.layer_vectors[l];
            fresh[l] = linalg::power_iteration_topk(cov, k_l, cfg.inner.power_iters, buf_rng, warm);
        }

        double sim = 1.0; // the very first task defines the buffer
        if (!report.buffer.empty()) {
            std::vector<EigenPairs> held(report.buffer.layer_vectors.size());
            std::size_t k_sim = cfg.buffer_k;
            for (std::size_t l = 0; l < held.size(); ++l) {
                held[l].vectors = report.buffer.layer_vectors[l];
                held[l].values.assign(held[l].vectors.rows, 0.0);
                held[l].residuals.assign(held[l].vectors.rows, 0.0);
                k_sim = std::min({k_sim, held[l].vectors.rows, fresh[l].count()});
            }
            sim = task_similarity(held, fresh, k_sim);
        }
        meta_buffer_blend(report.buffer, fresh);

        // first-order outer move toward the adapted weights
        std::vector<double> meta_theta = net.parameter_vector();
        const std::vector<double> adapted_theta = ar.net.parameter_vector();
        for (std::size_t i = 0; i < meta_theta.size(); ++i) {
            meta_theta[i] += cfg.outer_step * (adapted_theta[i] - meta_theta[i]);
        }
        net.set_parameters(meta_theta);

        MetaEpisode ep;
        ep.outer_step = t;
        ep.query_accuracy = ar.query_accuracy;
        ep.query_loss = ar.query_loss;
        ep.similarity = sim;
        if (cfg.hessian_every > 0 && t % cfg.hessian_every == 0) {
            ep.hessian_top =
                nn::top_hessian_eigenvalue(ar.net, task.support, 20, mix_seed(cfg.inner.seed, t))
                    .value;
        }
        report.episodes.push_back(std::move(ep));
    }

    report.meta_net = std::move(net);
    return report;
}

}  // namespace dsbp::ext

#include "dsbp/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "dsbp/rng.hpp"

namespace dsbp::nn {

using linalg::DenseMatrix;

namespace {

double row_logsumexp(std::span<const double> z) {
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    return m + std::log(s);
}

std::size_t row_argmax(std::span<const double> z) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < z.size(); ++j)
        if (z[j] > z[best]) best = j;
    return best;
}

}  // namespace

Network::Network(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
    check_architecture();
}

void Network::check_architecture() const {
    if (layers_.empty()) throw std::invalid_argument("network: needs at least one layer");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& layer = layers_[l];
        if (layer.weight.rows == 0 || layer.weight.cols == 0)
            throw std::invalid_argument("network: layer " + std::to_string(l) + " has empty weight");
        if (layer.bias.size() != layer.weight.rows)
            throw std::invalid_argument("network: layer " + std::to_string(l) +
                                        " bias length does not match output width");
        if (l + 1 < layers_.size() && layers_[l + 1].weight.cols != layer.weight.rows)
            throw std::invalid_argument("network: layer " + std::to_string(l + 1) +
                                        " input width does not chain with previous output");
        if (layer.activation == ActivationKind::softmax_output && l + 1 != layers_.size())
            throw std::invalid_argument("network: softmax_output is only allowed on the final layer");
        linalg::require_finite(layer.weight, "network layer weight");
        if (!linalg::all_finite(layer.bias))
            throw std::invalid_argument("network: layer bias contains non-finite values");
    }
}

Network Network::mlp(const std::vector<std::size_t>& dims, std::uint64_t seed) {
    if (dims.size() < 2) throw std::invalid_argument("mlp: need at least input and output widths");
    Rng rng = Rng::stream(seed, "init");
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        DenseLayer layer;
        layer.weight = DenseMatrix(dims[l + 1], dims[l]);
        const double s = std::sqrt(2.0 / static_cast<double>(dims[l]));
        for (auto& w : layer.weight.data) w = rng.uniform(-s, s);
        layer.bias.assign(dims[l + 1], 0.0);
        layer.activation =
            (l + 2 == dims.size()) ? ActivationKind::softmax_output : ActivationKind::relu;
        layers.push_back(std::move(layer));
    }
    return Network(std::move(layers));
}

DenseLayer& Network::layer(std::size_t l) {
    has_cache_ = false;
    return layers_.at(l);
}

ForwardResult Network::forward(const Batch& batch) {
    const std::size_t n = batch.inputs.rows;
    if (n == 0) throw std::invalid_argument("forward: empty batch");
    if (batch.inputs.cols != input_dim())
        throw std::invalid_argument("forward: batch width " + std::to_string(batch.inputs.cols) +
                                    " does not match first layer input " +
                                    std::to_string(input_dim()));
    if (batch.labels.size() != n)
        throw std::invalid_argument("forward: label count does not match batch rows");
    const int classes = static_cast<int>(output_dim());
    for (int y : batch.labels)
        if (y < 0 || y >= classes)
            throw std::invalid_argument("forward: label " + std::to_string(y) +
                                        " outside [0, " + std::to_string(classes) + ")");

    cached_.assign(layers_.size() + 1, DenseMatrix());
    cached_[0] = batch.inputs;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& layer = layers_[l];
        DenseMatrix z = linalg::matmul_nt(cached_[l], layer.weight);  // n x d_l
        for (std::size_t i = 0; i < z.rows; ++i) {
            double* zp = z.row_ptr(i);
            for (std::size_t j = 0; j < z.cols; ++j) zp[j] += layer.bias[j];
        }
        switch (layer.activation) {
            case ActivationKind::relu:
                for (auto& v : z.data) v = v > 0.0 ? v : 0.0;
                cached_[l + 1] = std::move(z);
                break;
            case ActivationKind::identity:
                cached_[l + 1] = std::move(z);
                break;
            case ActivationKind::softmax_output:
                logits_ = z;
                cached_[l + 1] = softmax_rows(z);
                break;
        }
    }
    if (layers_.back().activation != ActivationKind::softmax_output)
        logits_ = cached_.back();

    double loss = mean_cross_entropy(logits_, batch.labels);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (row_argmax(logits_.row(i)) == static_cast<std::size_t>(batch.labels[i])) ++hits;
    has_cache_ = true;
    return {loss, static_cast<double>(hits) / static_cast<double>(n)};
}

std::vector<LayerGradients> Network::backward(const Batch& batch) const {
    if (!has_cache_)
        throw std::logic_error("backward: no cached activations; run forward on this batch first");
    const std::size_t n = batch.inputs.rows;
    if (cached_[0].rows != n || cached_[0].cols != batch.inputs.cols ||
        batch.labels.size() != n)
        throw std::logic_error("backward: cached activations do not match this batch");

    // delta at the logits: (softmax - onehot) / n, exact for mean cross-entropy
    DenseMatrix delta = softmax_rows(logits_);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        double* dp = delta.row_ptr(i);
        dp[static_cast<std::size_t>(batch.labels[i])] -= 1.0;
        for (std::size_t j = 0; j < delta.cols; ++j) dp[j] *= inv_n;
    }

    std::vector<LayerGradients> grads(layers_.size());
    for (std::size_t li = layers_.size(); li-- > 0;) {
        const auto& layer = layers_[li];
        // final-layer relu/identity act on the logits themselves
        if (li + 1 == layers_.size() && layer.activation == ActivationKind::relu) {
            for (std::size_t i = 0; i < delta.size(); ++i)
                if (logits_.data[i] <= 0.0) delta.data[i] = 0.0;
        }
        grads[li].weight = linalg::matmul_tn(delta, cached_[li]);  // d_l x d_{l-1}
        grads[li].bias.assign(layer.weight.rows, 0.0);
        for (std::size_t i = 0; i < delta.rows; ++i) {
            const double* dp = delta.row_ptr(i);
            for (std::size_t j = 0; j < delta.cols; ++j) grads[li].bias[j] += dp[j];
        }
        if (li == 0) break;
        DenseMatrix next = linalg::matmul(delta, layer.weight);  // n x d_{l-1}
        if (layers_[li - 1].activation == ActivationKind::relu) {
            const DenseMatrix& act = cached_[li];
            for (std::size_t i = 0; i < next.size(); ++i)
                if (act.data[i] <= 0.0) next.data[i] = 0.0;
        }
        delta = std::move(next);
    }
    return grads;
}

const DenseMatrix& Network::activation(std::size_t l) const {
    if (!has_cache_) throw std::logic_error("activation: no cached forward pass");
    return cached_.at(l);
}

const DenseMatrix& Network::logits() const {
    if (!has_cache_) throw std::logic_error("logits: no cached forward pass");
    return logits_;
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
    return n;
}

std::vector<double> Network::parameter_vector() const {
    std::vector<double> theta;
    theta.reserve(parameter_count());
    for (const auto& layer : layers_) {
        theta.insert(theta.end(), layer.weight.data.begin(), layer.weight.data.end());
        theta.insert(theta.end(), layer.bias.begin(), layer.bias.end());
    }
    return theta;
}

void Network::set_parameters(std::span<const double> theta) {
    if (theta.size() != parameter_count())
        throw std::invalid_argument("set_parameters: expected " + std::to_string(parameter_count()) +
                                    " values, got " + std::to_string(theta.size()));
    std::size_t pos = 0;
    for (auto& layer : layers_) {
        std::copy(theta.begin() + pos, theta.begin() + pos + layer.weight.size(),
                  layer.weight.data.begin());
        pos += layer.weight.size();
        std::copy(theta.begin() + pos, theta.begin() + pos + layer.bias.size(),
                  layer.bias.begin());
        pos += layer.bias.size();
    }
    has_cache_ = false;
}

std::pair<std::size_t, std::size_t> Network::weight_block(std::size_t l) const {
    if (l >= layers_.size()) throw std::invalid_argument("weight_block: layer index out of range");
    std::size_t pos = 0;
    for (std::size_t i = 0; i < l; ++i) pos += layers_[i].weight.size() + layers_[i].bias.size();
    return {pos, layers_[l].weight.size()};
}

std::vector<double> Network::gradient_vector(const Batch& batch) {
    forward(batch);
    auto grads = backward(batch);
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for (const auto& g : grads) {
        flat.insert(flat.end(), g.weight.data.begin(), g.weight.data.end());
        flat.insert(flat.end(), g.bias.begin(), g.bias.end());
    }
    return flat;
}

std::size_t Network::output_dim() const { return layers_.back().weight.rows; }
std::size_t Network::input_dim() const { return layers_.front().weight.cols; }

double mean_cross_entropy(const DenseMatrix& logits, const std::vector<int>& labels) {
    if (logits.rows != labels.size())
        throw std::invalid_argument("mean_cross_entropy: label count does not match logit rows");
    double total = 0.0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        auto z = logits.row(i);
        total += row_logsumexp(z) - z[static_cast<std::size_t>(labels[i])];
    }
    return total / static_cast<double>(logits.rows);
}

DenseMatrix softmax_rows(const DenseMatrix& logits) {
    DenseMatrix probs(logits.rows, logits.cols);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        auto z = logits.row(i);
        const double lse = row_logsumexp(z);
        double* p = probs.row_ptr(i);
        for (std::size_t j = 0; j < logits.cols; ++j) p[j] = std::exp(z[j] - lse);
    }
    return probs;
}

}  // namespace dsbp::nn

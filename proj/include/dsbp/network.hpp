#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "dsbp/matrix.hpp"

namespace dsbp::nn {

enum class ActivationKind { relu, identity, softmax_output };

struct DenseLayer {
    linalg::DenseMatrix weight;  // d_out x d_in
    std::vector<double> bias;    // d_out
    ActivationKind activation = ActivationKind::relu;
};

struct Batch {
    linalg::DenseMatrix inputs;  // n x d0
    std::vector<int> labels;     // n entries in [0, classes)
};

struct LayerGradients {
    linalg::DenseMatrix weight;
    std::vector<double> bias;
};

struct ForwardResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

// Dense MLP with cached post-activations. The loss is always the mean
// cross-entropy of the final logits; a softmax_output final layer caches
// the probabilities as its activation, other final activations feed their
// output straight into the loss as logits.
class Network {
  public:
    Network() = default;
    explicit Network(std::vector<DenseLayer> layers);

    // relu hidden layers, softmax output, uniform(-s, s) weights with
    // s = sqrt(2 / fan_in), zero biases, drawn from the "init" stream.
    static Network mlp(const std::vector<std::size_t>& dims, std::uint64_t seed);

    std::size_t layer_count() const { return layers_.size(); }
    const DenseLayer& layer(std::size_t l) const { return layers_.at(l); }
    // mutable access invalidates cached activations
    DenseLayer& layer(std::size_t l);

    ForwardResult forward(const Batch& batch);
    std::vector<LayerGradients> backward(const Batch& batch) const;

    bool has_cache() const { return has_cache_; }
    // post-activation of layer l in [0, layer_count]; index 0 is the input batch
    const linalg::DenseMatrix& activation(std::size_t l) const;
    const linalg::DenseMatrix& logits() const;

    std::size_t parameter_count() const;
    std::vector<double> parameter_vector() const;
    void set_parameters(std::span<const double> theta);
    // offset and length of layer l's weight block inside the parameter vector
    std::pair<std::size_t, std::size_t> weight_block(std::size_t l) const;

    // forward + backward flattened into parameter order (weights then bias per layer)
    std::vector<double> gradient_vector(const Batch& batch);

    std::size_t output_dim() const;
    std::size_t input_dim() const;

  private:
    void check_architecture() const;

    std::vector<DenseLayer> layers_;
    std::vector<linalg::DenseMatrix> cached_;  // cached_[0] = inputs
    linalg::DenseMatrix logits_;
    bool has_cache_ = false;
};

double mean_cross_entropy(const linalg::DenseMatrix& logits, const std::vector<int>& labels);
linalg::DenseMatrix softmax_rows(const linalg::DenseMatrix& logits);

}  // namespace dsbp::nn

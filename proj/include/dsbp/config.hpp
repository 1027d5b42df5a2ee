#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dsbp::harness {

// Parse or validation failure; what() carries the line number and field.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// [data] — where the samples come from. kind selects which fields matter:
//   blobs  : classes/per_class/test_per_class/dims/separation
//   digits : count/test_count (synthetic 28x28 digit renders)
//   idx    : the four explicit file paths
struct DataConfig {
    std::string kind = "blobs";
    std::uint64_t seed = 0;  // 0 = derive from the run seed
    std::size_t classes = 4;
    std::size_t per_class = 100;
    std::size_t test_per_class = 25;
    std::size_t dims = 8;
    double separation = 4.0;
    std::size_t count = 1000;
    std::size_t test_count = 200;
    std::string train_images;
    std::string train_labels;
    std::string test_images;
    std::string test_labels;

    bool operator==(const DataConfig&) const = default;
};

// [model]
struct ModelConfig {
    std::vector<std::size_t> layers = {8, 16, 4};
    std::string hidden = "relu";  // relu | identity (output is always softmax)

    bool operator==(const ModelConfig&) const = default;
};

// [optimizer]
struct OptimizerSection {
    std::string method = "dsbp";  // sgd | sam | dsbp | lie
    double eta = 0.01;
    std::size_t k = 10;
    std::size_t p0 = 100;
    double tau0 = 0.01;
    double beta = 0.1;
    double alpha = 0.1;
    std::size_t power_iters = 5;
    std::size_t batch_size = 64;
    std::size_t epochs = 1;
    std::size_t total_iters = 0;  // 0 = epochs * ceil(n / batch_size)
    bool prune = false;
    double sam_rho = 0.05;

    bool operator==(const OptimizerSection&) const = default;
};

// [metrics]
struct MetricsSection {
    std::size_t hessian_every = 200;
    std::size_t test_every = 0;  // 0 = once per epoch

    bool operator==(const MetricsSection&) const = default;
};

// [meta]
struct MetaSection {
    std::size_t n_way = 3;
    std::size_t k_shot = 5;
    std::size_t query_per_class = 10;
    std::size_t inner_steps = 5;
    std::size_t outer_steps = 100;
    double outer_step = 0.1;
    std::size_t buffer_k = 5;
    std::size_t hessian_every = 10;
    std::size_t eval_episodes = 0;  // > 0 = paired evaluation vs from-scratch

    bool operator==(const MetaSection&) const = default;
};

// [sde]
struct SdeSection {
    double eta = 0.01;
    double horizon = 1.0;
    std::size_t steps = 100;
    std::string diffusion = "diagonal";  // diagonal | zero
    // weak-order sweep on the quadratic toy; runs when weak_etas is nonempty
    std::vector<double> weak_etas;
    std::size_t weak_seeds = 64;
    std::vector<double> weak_curvature = {1.0, 0.5};
    std::vector<double> weak_noise = {0.1, 0.1};
    std::vector<double> weak_start = {1.0, -2.0};
    double weak_horizon = 1.0;

    bool operator==(const SdeSection&) const = default;
};

// [bound] — evaluated against a trained run's summary file
struct BoundSection {
    std::string summary;  // path to summary.txt of a trained run
    std::vector<double> sigma = {0.1};
    std::vector<double> third_deriv = {1.0};
    double loss_bound = 1.0;
    double confidence = 0.05;

    bool operator==(const BoundSection&) const = default;
};

// [plot]
struct PlotSection {
    std::size_t grid = 15;
    double span = 1.0;
    std::size_t power_iters = 30;
    bool random_directions = false;
    std::size_t batch = 256;  // samples behind the landscape slice
    bool svg = true;

    bool operator==(const PlotSection&) const = default;
};

struct ExperimentConfig {
    std::string run_name = "run";  // [run] name
    std::uint64_t seed = 1;        // [run] seed
    std::size_t threads = 1;       // [run] threads
    DataConfig data;
    ModelConfig model;
    OptimizerSection optimizer;
    MetricsSection metrics;
    MetaSection meta;
    SdeSection sde;
    BoundSection bound;
    PlotSection plot;

    bool operator==(const ExperimentConfig&) const = default;
};

// Grammar (documented in README.md): '#' lines are comments, sections are
// "[name]", entries are "key = value". Unknown sections, unknown keys,
// duplicate keys, and malformed values are hard errors naming the line.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

// Canonical form: every section, every key, doubles with enough digits to
// round-trip exactly. parse(serialize(parse(x))) == parse(x).
std::string serialize_config(const ExperimentConfig& cfg);

// Cross-field checks (enum values, layer widths, positive sizes). Called by
// parse_config; public so programmatically built configs can be checked too.
void validate_config(const ExperimentConfig& cfg);

// Shortest decimal string that parses back to exactly the same double; the
// rendering behind every serialized floating-point value.
std::string format_exact(double v);

}  // namespace dsbp::harness

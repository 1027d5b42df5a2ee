#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace dsbp::harness {

// One logging event of a training run. Optional fields are metrics that are
// only computed on a cadence or that a method does not produce at all; file
// writers must render absent values explicitly (NA), never as zero.
struct MetricsRecord {
    std::int64_t iteration = 0;
    std::int64_t epoch = 0;
    double train_loss = 0.0;
    std::optional<double> test_accuracy;
    std::optional<double> hessian_top;  // cadenced, costly to measure
    // per-layer top covariance eigenvalue, raw A^T A scale and divided by the
    // number of batch rows that produced it
    std::vector<std::optional<double>> lambda_top;
    std::vector<std::optional<double>> lambda_top_scaled;
    // output-space gradient vs. top eigenvector of the final layer
    std::optional<double> alignment;
    std::optional<double> angle_degrees;
    std::vector<double> sparsity;        // per-layer zero fraction
    std::optional<double> wall_clock_ms; // elapsed since run start; kept out of metric files
};

}  // namespace dsbp::harness

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dsbp/matrix.hpp"
#include "dsbp/network.hpp"
#include "dsbp/rng.hpp"

namespace dsbp::data {

struct Dataset {
    linalg::DenseMatrix features;  // n x d, entries in [0, 1]
    std::vector<int> labels;
    int class_count = 0;

    std::size_t size() const { return features.rows; }
};

// IDX containers (big-endian magic 0x00000803 images / 0x00000801 labels).
// Pixels are scaled by 1/255 on load.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
void write_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path,
               std::size_t rows, std::size_t cols);

// Gaussian class clusters: means on seeded random unit directions scaled by
// `separation`, unit-variance noise, per-dimension affine rescale into [0,1].
Dataset gaussian_blobs(std::uint64_t seed, std::size_t n_per_class, std::size_t dims, int classes,
                       double separation);

// Synthetic 28x28 digit corpus: scaled 5x7 glyphs at jittered positions with
// a guaranteed blank border. Labels cycle 0..9 so classes stay balanced.
Dataset render_digits(std::uint64_t seed, std::size_t count);

nn::Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices);

class BatchSource {
  public:
    virtual ~BatchSource() = default;
    virtual nn::Batch next(std::size_t batch_size) = 0;
    // samples in one pass of the underlying data (defines an epoch)
    virtual std::size_t sample_count() const = 0;
};

// Shuffled full epochs; reshuffles whenever fewer than batch_size samples
// remain. Draws from the "shuffle" stream of the given seed.
class EpochShuffleSource : public BatchSource {
  public:
    EpochShuffleSource(const Dataset& dataset, std::uint64_t seed);
    nn::Batch next(std::size_t batch_size) override;
    std::size_t sample_count() const override { return data_->size(); }

  private:
    const Dataset* data_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

struct DriftSchedule {
    std::size_t segment_length = 1;  // iterations per segment
    double angle = 0.0;              // radians advanced at each boundary
};

// Batch stream whose feature space rotates inside a seeded coordinate plane:
// segment s applies a rotation by s*angle to the chosen coordinate pair of
// the base features, then renormalizes those two coordinates into [0,1].
class NonstationaryStream : public BatchSource {
  public:
    NonstationaryStream(const Dataset& base, DriftSchedule drift, std::uint64_t seed);
    nn::Batch next(std::size_t batch_size) override;
    std::size_t sample_count() const override { return base_->size(); }

    std::size_t segment_of(std::size_t iteration) const;
    std::pair<std::size_t, std::size_t> plane() const { return {axis_i_, axis_j_}; }

  private:
    void build_segment(std::size_t seg);

    const Dataset* base_;
    Dataset rotated_;
    const Dataset* active_;
    DriftSchedule drift_;
    std::size_t axis_i_ = 0, axis_j_ = 1;
    std::size_t iteration_ = 0;
    std::size_t built_segment_ = static_cast<std::size_t>(-1);
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

struct FewshotTask {
    nn::Batch support;
    nn::Batch query;
    std::vector<int> class_ids;  // original labels of the episode classes
};

// Seeded episode generator: each episode picks n_way classes and disjoint
// support/query examples per class, with labels remapped to 0..n_way-1.
class FewshotSampler {
  public:
    FewshotSampler(const Dataset& base, std::size_t n_way, std::size_t k_shot,
                   std::size_t query_per_class, std::uint64_t seed);
    FewshotTask next();

  private:
    const Dataset* base_;
    std::size_t n_way_, k_shot_, query_per_class_;
    Rng rng_;
    std::vector<int> usable_classes_;
    std::vector<std::vector<std::size_t>> by_class_;
};

}  // namespace dsbp::data

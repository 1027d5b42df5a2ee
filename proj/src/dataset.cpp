#include "dsbp/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

namespace dsbp::data {

using linalg::DenseMatrix;

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("idx: cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_u32_be(const std::vector<unsigned char>& buf, std::size_t off) {
    return (static_cast<std::uint32_t>(buf[off]) << 24) |
           (static_cast<std::uint32_t>(buf[off + 1]) << 16) |
           (static_cast<std::uint32_t>(buf[off + 2]) << 8) |
           static_cast<std::uint32_t>(buf[off + 3]);
}

void write_u32_be(std::ofstream& out, std::uint32_t v) {
    const unsigned char bytes[4] = {static_cast<unsigned char>(v >> 24),
                                    static_cast<unsigned char>(v >> 16),
                                    static_cast<unsigned char>(v >> 8),
                                    static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

std::string hex_bytes(const std::vector<unsigned char>& buf, std::size_t off, std::size_t n) {
    std::string s;
    char piece[8];
    for (std::size_t i = 0; i < n && off + i < buf.size(); ++i) {
        std::snprintf(piece, sizeof piece, "%02x", buf[off + i]);
        if (!s.empty()) s += ' ';
        s += piece;
    }
    return s;
}

void check_length(const std::string& path, const std::vector<unsigned char>& buf,
                  std::size_t expected) {
    if (buf.size() != expected)
        throw std::runtime_error("idx: " + path + " truncated or padded: expected " +
                                 std::to_string(expected) + " bytes, found " +
                                 std::to_string(buf.size()));
}

// 5x7 digit glyphs, row strings top to bottom
constexpr std::array<std::array<const char*, 7>, 10> kGlyphs = {{
    {"01110", "10001", "10011", "10101", "11001", "10001", "01110"},
    {"00100", "01100", "00100", "00100", "00100", "00100", "01110"},
    {"01110", "10001", "00001", "00010", "00100", "01000", "11111"},
    {"11111", "00010", "00100", "00010", "00001", "10001", "01110"},
    {"00010", "00110", "01010", "10010", "11111", "00010", "00010"},
    {"11111", "10000", "11110", "00001", "00001", "10001", "01110"},
    {"00110", "01000", "10000", "11110", "10001", "10001", "01110"},
    {"11111", "00001", "00010", "00100", "01000", "01000", "01000"},
    {"01110", "10001", "10001", "01110", "10001", "10001", "01110"},
    {"01110", "10001", "10001", "01111", "00001", "00010", "01100"},
}};

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    auto ibuf = read_file(images_path);
    if (ibuf.size() < 16)
        throw std::runtime_error("idx: " + images_path + " truncated: expected at least 16 header bytes, found " +
                                 std::to_string(ibuf.size()));
    if (read_u32_be(ibuf, 0) != kImagesMagic)
        throw std::runtime_error("idx: " + images_path + " has bad image magic bytes [" +
                                 hex_bytes(ibuf, 0, 4) + "], expected [00 00 08 03]");
    const std::size_t n = read_u32_be(ibuf, 4);
    const std::size_t rows = read_u32_be(ibuf, 8);
    const std::size_t cols = read_u32_be(ibuf, 12);
    check_length(images_path, ibuf, 16 + n * rows * cols);

    auto lbuf = read_file(labels_path);
    if (lbuf.size() < 8)
        throw std::runtime_error("idx: " + labels_path + " truncated: expected at least 8 header bytes, found " +
                                 std::to_string(lbuf.size()));
    if (read_u32_be(lbuf, 0) != kLabelsMagic)
        throw std::runtime_error("idx: " + labels_path + " has bad label magic bytes [" +
                                 hex_bytes(lbuf, 0, 4) + "], expected [00 00 08 01]");
    const std::size_t ln = read_u32_be(lbuf, 4);
    check_length(labels_path, lbuf, 8 + ln);
    if (ln != n)
        throw std::runtime_error("idx: image count " + std::to_string(n) +
                                 " does not match label count " + std::to_string(ln));

    Dataset ds;
    ds.features = DenseMatrix(n, rows * cols);
    for (std::size_t i = 0; i < n * rows * cols; ++i)
        ds.features.data[i] = static_cast<double>(ibuf[16 + i]) / 255.0;
    ds.labels.resize(n);
    int max_label = -1;
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = static_cast<int>(lbuf[8 + i]);
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.class_count = max_label + 1;
    return ds;
}

void write_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path,
               std::size_t rows, std::size_t cols) {
    if (rows * cols != ds.features.cols)
        throw std::invalid_argument("write_idx: rows*cols = " + std::to_string(rows * cols) +
                                    " does not match feature width " +
                                    std::to_string(ds.features.cols));
    std::ofstream iout(images_path, std::ios::binary);
    if (!iout) throw std::runtime_error("idx: cannot write " + images_path);
    write_u32_be(iout, kImagesMagic);
    write_u32_be(iout, static_cast<std::uint32_t>(ds.size()));
    write_u32_be(iout, static_cast<std::uint32_t>(rows));
    write_u32_be(iout, static_cast<std::uint32_t>(cols));
    for (double v : ds.features.data) {
        double scaled = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
        unsigned char byte = static_cast<unsigned char>(scaled);
        iout.write(reinterpret_cast<const char*>(&byte), 1);
    }

    std::ofstream lout(labels_path, std::ios::binary);
    if (!lout) throw std::runtime_error("idx: cannot write " + labels_path);
    write_u32_be(lout, kLabelsMagic);
    write_u32_be(lout, static_cast<std::uint32_t>(ds.size()));
    for (int y : ds.labels) {
        unsigned char byte = static_cast<unsigned char>(y);
        lout.write(reinterpret_cast<const char*>(&byte), 1);
    }
}

Dataset gaussian_blobs(std::uint64_t seed, std::size_t n_per_class, std::size_t dims, int classes,
                       double separation) {
    if (dims == 0 || classes <= 0) throw std::invalid_argument("gaussian_blobs: empty geometry");
    if (separation <= 0.0) throw std::invalid_argument("gaussian_blobs: separation must be positive");
    Rng rng = Rng::stream(seed, "blobs");

    const std::size_t c = static_cast<std::size_t>(classes);
    std::vector<std::vector<double>> means(c, std::vector<double>(dims));
    for (auto& m : means) {
        for (auto& x : m) x = rng.normal();
        linalg::normalize(std::span<double>(m));
        for (auto& x : m) x *= separation;
    }

    Dataset ds;
    ds.class_count = classes;
    ds.features = DenseMatrix(n_per_class * c, dims);
    ds.labels.resize(n_per_class * c);
    std::size_t row = 0;
    for (std::size_t cls = 0; cls < c; ++cls) {
        for (std::size_t s = 0; s < n_per_class; ++s, ++row) {
            double* f = ds.features.row_ptr(row);
            for (std::size_t d = 0; d < dims; ++d) f[d] = means[cls][d] + rng.normal();
            ds.labels[row] = static_cast<int>(cls);
        }
    }
    if (ds.size() == 0) return ds;

    for (std::size_t d = 0; d < dims; ++d) {
        double lo = ds.features(0, d), hi = lo;
        for (std::size_t i = 1; i < ds.size(); ++i) {
            lo = std::min(lo, ds.features(i, d));
            hi = std::max(hi, ds.features(i, d));
        }
        const double span = hi - lo;
        for (std::size_t i = 0; i < ds.size(); ++i)
            ds.features(i, d) = span > 0.0 ? (ds.features(i, d) - lo) / span : 0.0;
    }
    return ds;
}

Dataset render_digits(std::uint64_t seed, std::size_t count) {
    constexpr std::size_t kSide = 28, kMargin = 3;
    Rng rng = Rng::stream(seed, "digits");

    Dataset ds;
    ds.class_count = 10;
    ds.features = DenseMatrix(count, kSide * kSide);
    ds.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const int digit = static_cast<int>(i % 10);
        ds.labels[i] = digit;
        const std::size_t scale = 2 + rng.index(2);
        const std::size_t gw = 5 * scale, gh = 7 * scale;
        // centered placement with +-2 px jitter, mirroring the centre-of-mass
        // normalisation of scanned digit corpora; clamped so the blank margin
        // survives at every scale
        const auto jittered = [&](std::size_t extent) {
            const std::size_t range = kSide - 2 * kMargin - extent + 1;
            const long centre = static_cast<long>((range - 1) / 2);
            const long shift = static_cast<long>(rng.index(5)) - 2;
            const long v = std::clamp(centre + shift, 0L, static_cast<long>(range - 1));
            return kMargin + static_cast<std::size_t>(v);
        };
        const std::size_t x_off = jittered(gw);
        const std::size_t y_off = jittered(gh);
        double* img = ds.features.row_ptr(i);
        const auto& glyph = kGlyphs[static_cast<std::size_t>(digit)];
        for (std::size_t gy = 0; gy < 7; ++gy) {
            for (std::size_t gx = 0; gx < 5; ++gx) {
                if (glyph[gy][gx] != '1') continue;
                // stroke dropout: skip a cell now and then so samples of one
                // class differ by more than placement and brightness
                if (rng.uniform() < 0.07) continue;
                const double intensity = 0.7 + 0.3 * rng.uniform();
                for (std::size_t sy = 0; sy < scale; ++sy)
                    for (std::size_t sx = 0; sx < scale; ++sx) {
                        const std::size_t py = y_off + gy * scale + sy;
                        const std::size_t px = x_off + gx * scale + sx;
                        img[py * kSide + px] = intensity;
                    }
            }
        }
    }
    return ds;
}

nn::Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
    nn::Batch b;
    b.inputs = DenseMatrix(indices.size(), ds.features.cols);
    b.labels.resize(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::size_t src = indices[i];
        if (src >= ds.size()) throw std::invalid_argument("make_batch: index out of range");
        std::copy(ds.features.row_ptr(src), ds.features.row_ptr(src) + ds.features.cols,
                  b.inputs.row_ptr(i));
        b.labels[i] = ds.labels[src];
    }
    return b;
}

EpochShuffleSource::EpochShuffleSource(const Dataset& dataset, std::uint64_t seed)
    : data_(&dataset), rng_(Rng::stream(seed, "shuffle")) {
    if (dataset.size() == 0) throw std::invalid_argument("batch source: empty dataset");
    order_.resize(dataset.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    rng_.shuffle(order_);
}

nn::Batch EpochShuffleSource::next(std::size_t batch_size) {
    if (batch_size == 0 || batch_size > data_->size())
        throw std::invalid_argument("batch source: batch size " + std::to_string(batch_size) +
                                    " unavailable from " + std::to_string(data_->size()) +
                                    " samples");
    if (cursor_ + batch_size > order_.size()) {
        rng_.shuffle(order_);
        cursor_ = 0;
    }
    nn::Batch b = make_batch(*data_, std::span<const std::size_t>(order_).subspan(cursor_, batch_size));
    cursor_ += batch_size;
    return b;
}

NonstationaryStream::NonstationaryStream(const Dataset& base, DriftSchedule drift,
                                         std::uint64_t seed)
    : base_(&base), active_(&base), drift_(drift), rng_(Rng::stream(seed, "shuffle")) {
    if (base.size() == 0) throw std::invalid_argument("nonstationary stream: empty dataset");
    if (base.features.cols < 2)
        throw std::invalid_argument("nonstationary stream: need at least two feature dimensions");
    if (drift.segment_length < 1)
        throw std::invalid_argument("nonstationary stream: segment length must be at least 1");

    Rng plane_rng = Rng::stream(seed, "plane");
    const std::size_t d = base.features.cols;
    axis_i_ = plane_rng.index(d);
    axis_j_ = plane_rng.index(d - 1);
    if (axis_j_ >= axis_i_) ++axis_j_;
    if (axis_i_ > axis_j_) std::swap(axis_i_, axis_j_);

    order_.resize(base.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    rng_.shuffle(order_);
    build_segment(0);
}

std::size_t NonstationaryStream::segment_of(std::size_t iteration) const {
    return iteration / drift_.segment_length;
}

void NonstationaryStream::build_segment(std::size_t seg) {
    built_segment_ = seg;
    const double theta = drift_.angle * static_cast<double>(seg);
    if (theta == 0.0) {
        active_ = base_;
        return;
    }
    rotated_ = *base_;
    const double c = std::cos(theta), s = std::sin(theta);
    double lo_i = 0.0, hi_i = 0.0, lo_j = 0.0, hi_j = 0.0;
    for (std::size_t r = 0; r < rotated_.size(); ++r) {
        double* f = rotated_.features.row_ptr(r);
        const double xi = f[axis_i_], xj = f[axis_j_];
        f[axis_i_] = c * xi - s * xj;
        f[axis_j_] = s * xi + c * xj;
        if (r == 0) {
            lo_i = hi_i = f[axis_i_];
            lo_j = hi_j = f[axis_j_];
        } else {
            lo_i = std::min(lo_i, f[axis_i_]);
            hi_i = std::max(hi_i, f[axis_i_]);
            lo_j = std::min(lo_j, f[axis_j_]);
            hi_j = std::max(hi_j, f[axis_j_]);
        }
    }
    const double span_i = hi_i - lo_i, span_j = hi_j - lo_j;
    for (std::size_t r = 0; r < rotated_.size(); ++r) {
        double* f = rotated_.features.row_ptr(r);
        f[axis_i_] = span_i > 0.0 ? (f[axis_i_] - lo_i) / span_i : 0.0;
        f[axis_j_] = span_j > 0.0 ? (f[axis_j_] - lo_j) / span_j : 0.0;
    }
    active_ = &rotated_;
}

nn::Batch NonstationaryStream::next(std::size_t batch_size) {
    if (batch_size == 0 || batch_size > active_->size())
        throw std::invalid_argument("nonstationary stream: batch size " +
                                    std::to_string(batch_size) + " unavailable from " +
                                    std::to_string(active_->size()) + " samples");
    const std::size_t seg = segment_of(iteration_);
    if (seg != built_segment_) build_segment(seg);
    if (cursor_ + batch_size > order_.size()) {
        rng_.shuffle(order_);
        cursor_ = 0;
    }
    nn::Batch b =
        make_batch(*active_, std::span<const std::size_t>(order_).subspan(cursor_, batch_size));
    cursor_ += batch_size;
    ++iteration_;
    return b;
}

FewshotSampler::FewshotSampler(const Dataset& base, std::size_t n_way, std::size_t k_shot,
                               std::size_t query_per_class, std::uint64_t seed)
    : base_(&base),
      n_way_(n_way),
      k_shot_(k_shot),
      query_per_class_(query_per_class),
      rng_(Rng::stream(seed, "episodes")) {
    if (n_way < 1 || k_shot < 1)
        throw std::invalid_argument("fewshot: need n_way >= 1 and k_shot >= 1");
    by_class_.assign(static_cast<std::size_t>(base.class_count), {});
    for (std::size_t i = 0; i < base.size(); ++i)
        by_class_[static_cast<std::size_t>(base.labels[i])].push_back(i);
    for (int c = 0; c < base.class_count; ++c)
        if (by_class_[static_cast<std::size_t>(c)].size() >= k_shot + query_per_class)
            usable_classes_.push_back(c);
    if (usable_classes_.size() < n_way)
        throw std::invalid_argument("fewshot: only " + std::to_string(usable_classes_.size()) +
                                    " classes hold " + std::to_string(k_shot + query_per_class) +
                                    " examples; need " + std::to_string(n_way));
}

FewshotTask FewshotSampler::next() {
    std::vector<int> classes = usable_classes_;
    rng_.shuffle(classes);
    classes.resize(n_way_);

    FewshotTask task;
    task.class_ids = classes;
    std::vector<std::size_t> support_idx, query_idx;
    std::vector<int> support_labels, query_labels;
    for (std::size_t c = 0; c < n_way_; ++c) {
        std::vector<std::size_t> pool = by_class_[static_cast<std::size_t>(classes[c])];
        rng_.shuffle(pool);
        for (std::size_t i = 0; i < k_shot_; ++i) {
            support_idx.push_back(pool[i]);
            support_labels.push_back(static_cast<int>(c));
        }
        for (std::size_t i = 0; i < query_per_class_; ++i) {
            query_idx.push_back(pool[k_shot_ + i]);
            query_labels.push_back(static_cast<int>(c));
        }
    }
    task.support = make_batch(*base_, support_idx);
    task.support.labels = std::move(support_labels);
    task.query = make_batch(*base_, query_idx);
    task.query.labels = std::move(query_labels);
    return task;
}

}  // namespace dsbp::data

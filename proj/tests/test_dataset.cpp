#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "dsbp/dataset.hpp"
#include "dsbp/eigen.hpp"

using namespace dsbp;
using namespace dsbp::data;
using linalg::DenseMatrix;

namespace {

std::string temp_path(const std::string& name) {
    return "/tmp/dsbp_test_" + name;
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> be32(std::uint32_t v) {
    return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
            static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
}

void append(std::vector<unsigned char>& dst, const std::vector<unsigned char>& src) {
    dst.insert(dst.end(), src.begin(), src.end());
}

}  // namespace

TEST_CASE("idx loader parses a hand-written fixture byte for byte") {
    std::vector<unsigned char> images;
    append(images, be32(0x00000803));
    append(images, be32(2));  // two images
    append(images, be32(2));  // 2x2
    append(images, be32(2));
    for (unsigned char b : {0, 255, 128, 64, 10, 20, 30, 40}) images.push_back(b);
    std::vector<unsigned char> labels;
    append(labels, be32(0x00000801));
    append(labels, be32(2));
    labels.push_back(1);
    labels.push_back(0);

    const std::string ip = temp_path("fixture_images.idx"), lp = temp_path("fixture_labels.idx");
    write_bytes(ip, images);
    write_bytes(lp, labels);

    Dataset ds = load_idx(ip, lp);
    CHECK(ds.size() == 2);
    CHECK(ds.features.cols == 4);
    CHECK(ds.class_count == 2);
    CHECK(ds.features(0, 0) == 0.0);
    CHECK(ds.features(0, 1) == 1.0);
    CHECK(ds.features(0, 2) == doctest::Approx(128.0 / 255.0).epsilon(1e-15));
    CHECK(ds.features(0, 3) == doctest::Approx(64.0 / 255.0).epsilon(1e-15));
    CHECK(ds.features(1, 0) == doctest::Approx(10.0 / 255.0).epsilon(1e-15));
    CHECK(ds.labels[0] == 1);
    CHECK(ds.labels[1] == 0);
}

TEST_CASE("idx loader accepts an empty dataset and rejects malformed files") {
    std::vector<unsigned char> images;
    append(images, be32(0x00000803));
    append(images, be32(0));
    append(images, be32(2));
    append(images, be32(2));
    std::vector<unsigned char> labels;
    append(labels, be32(0x00000801));
    append(labels, be32(0));
    const std::string ip = temp_path("empty_images.idx"), lp = temp_path("empty_labels.idx");
    write_bytes(ip, images);
    write_bytes(lp, labels);
    Dataset empty = load_idx(ip, lp);
    CHECK(empty.size() == 0);

    // bad magic names the observed bytes
    std::vector<unsigned char> bad = images;
    bad[3] = 0x07;
    const std::string bp = temp_path("bad_magic.idx");
    write_bytes(bp, bad);
    try {
        load_idx(bp, lp);
        FAIL("expected a format error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("00 00 08 07") != std::string::npos);
    }

    // truncated payload reports expected vs actual
    std::vector<unsigned char> trunc;
    append(trunc, be32(0x00000803));
    append(trunc, be32(2));
    append(trunc, be32(2));
    append(trunc, be32(2));
    trunc.push_back(9);  // 1 byte instead of 8
    const std::string tp = temp_path("trunc.idx");
    write_bytes(tp, trunc);
    try {
        load_idx(tp, lp);
        FAIL("expected a truncation error");
    } catch (const std::runtime_error& e) {
        std::string msg = e.what();
        CHECK(msg.find("24") != std::string::npos);
        CHECK(msg.find("17") != std::string::npos);
    }

    // image/label count mismatch
    std::vector<unsigned char> one_label;
    append(one_label, be32(0x00000801));
    append(one_label, be32(1));
    one_label.push_back(0);
    const std::string mp = temp_path("mismatch_labels.idx");
    write_bytes(mp, one_label);
    std::vector<unsigned char> two_images;
    append(two_images, be32(0x00000803));
    append(two_images, be32(2));
    append(two_images, be32(1));
    append(two_images, be32(1));
    two_images.push_back(3);
    two_images.push_back(4);
    const std::string tip = temp_path("mismatch_images.idx");
    write_bytes(tip, two_images);
    CHECK_THROWS_AS(load_idx(tip, mp), std::runtime_error);
}

TEST_CASE("idx write/load round-trips byte-representable features exactly") {
    Dataset ds;
    ds.features = DenseMatrix(3, 6);
    Rng rng = Rng::stream(5, "test");
    for (auto& v : ds.features.data) v = static_cast<double>(rng.index(256)) / 255.0;
    ds.labels = {2, 0, 1};
    ds.class_count = 3;

    const std::string ip = temp_path("rt_images.idx"), lp = temp_path("rt_labels.idx");
    write_idx(ds, ip, lp, 2, 3);
    Dataset back = load_idx(ip, lp);
    CHECK(back.size() == 3);
    CHECK(back.labels == ds.labels);
    CHECK(linalg::content_hash(back.features) == linalg::content_hash(ds.features));

    CHECK_THROWS_AS(write_idx(ds, ip, lp, 2, 2), std::invalid_argument);
}

TEST_CASE("well-separated blobs are linearly separable") {
    Dataset ds = gaussian_blobs(11, 200, 2, 2, 10.0);
    REQUIRE(ds.size() == 400);
    for (double v : ds.features.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // nearest-class-mean oracle
    std::vector<std::vector<double>> means(2, std::vector<double>(2, 0.0));
    std::vector<std::size_t> counts(2, 0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto cls = static_cast<std::size_t>(ds.labels[i]);
        for (std::size_t d = 0; d < 2; ++d) means[cls][d] += ds.features(i, d);
        ++counts[cls];
    }
    for (std::size_t c = 0; c < 2; ++c)
        for (auto& m : means[c]) m /= static_cast<double>(counts[c]);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        double d0 = 0.0, d1 = 0.0;
        for (std::size_t d = 0; d < 2; ++d) {
            d0 += (ds.features(i, d) - means[0][d]) * (ds.features(i, d) - means[0][d]);
            d1 += (ds.features(i, d) - means[1][d]) * (ds.features(i, d) - means[1][d]);
        }
        int pred = d0 <= d1 ? 0 : 1;
        if (pred == ds.labels[i]) ++hits;
    }
    CHECK(static_cast<double>(hits) / static_cast<double>(ds.size()) >= 0.99);
}

TEST_CASE("blob generation is a pure function of the seed") {
    Dataset a = gaussian_blobs(7, 50, 3, 4, 5.0);
    Dataset b = gaussian_blobs(7, 50, 3, 4, 5.0);
    Dataset c = gaussian_blobs(8, 50, 3, 4, 5.0);
    CHECK(linalg::content_hash(a.features) == linalg::content_hash(b.features));
    CHECK(a.labels == b.labels);
    CHECK(linalg::content_hash(a.features) != linalg::content_hash(c.features));

    Dataset empty = gaussian_blobs(7, 0, 3, 4, 5.0);
    CHECK(empty.size() == 0);
    CHECK(empty.class_count == 4);
}

TEST_CASE("epoch shuffle source covers every sample once per epoch") {
    Dataset ds = gaussian_blobs(13, 10, 2, 3, 4.0);  // 30 samples
    EpochShuffleSource src(ds, 99);
    std::vector<int> seen(30, 0);
    for (int b = 0; b < 6; ++b) {
        nn::Batch batch = src.next(5);
        for (std::size_t i = 0; i < 5; ++i) {
            // recover the sample identity by exact feature match
            for (std::size_t s = 0; s < ds.size(); ++s) {
                if (std::equal(batch.inputs.row_ptr(i), batch.inputs.row_ptr(i) + 2,
                               ds.features.row_ptr(s))) {
                    ++seen[s];
                    break;
                }
            }
        }
    }
    for (int count : seen) CHECK(count == 1);

    EpochShuffleSource again(ds, 99);
    nn::Batch b1 = EpochShuffleSource(ds, 99).next(7);
    nn::Batch b2 = again.next(7);
    CHECK(linalg::content_hash(b1.inputs) == linalg::content_hash(b2.inputs));
    CHECK(b1.labels == b2.labels);

    CHECK_THROWS_AS(src.next(31), std::invalid_argument);
}

TEST_CASE("zero-angle stream reproduces plain batch sampling bitwise") {
    Dataset ds = gaussian_blobs(17, 40, 4, 3, 4.0);
    EpochShuffleSource plain(ds, 123);
    NonstationaryStream stream(ds, DriftSchedule{10, 0.0}, 123);
    for (int i = 0; i < 25; ++i) {
        nn::Batch a = plain.next(16);
        nn::Batch b = stream.next(16);
        CHECK(linalg::content_hash(a.inputs) == linalg::content_hash(b.inputs));
        CHECK(a.labels == b.labels);
    }
}

TEST_CASE("quarter-turn drift rotates the coordinate pair exactly") {
    Dataset ds = gaussian_blobs(19, 60, 2, 2, 6.0);
    NonstationaryStream stream(ds, DriftSchedule{1, std::acos(-1.0) / 2.0}, 7);
    auto [ai, aj] = stream.plane();
    CHECK(ai == 0);
    CHECK(aj == 1);

    stream.next(ds.size());  // segment 0: identity
    nn::Batch rotated = stream.next(ds.size());  // segment 1: quarter turn

    // expected transform of the whole dataset: (x, y) -> ((-y - lo)/span, x)
    double lo = -1.0, hi = 0.0;
    bool first = true;
    std::vector<double> rx(ds.size()), ry(ds.size());
    const double c = std::cos(std::acos(-1.0) / 2.0), s = std::sin(std::acos(-1.0) / 2.0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        double x = ds.features(i, 0), y = ds.features(i, 1);
        rx[i] = c * x - s * y;
        ry[i] = s * x + c * y;
        if (first) {
            lo = hi = rx[i];
            first = false;
        } else {
            lo = std::min(lo, rx[i]);
            hi = std::max(hi, rx[i]);
        }
    }
    double lo_j = ry[0], hi_j = ry[0];
    for (double v : ry) {
        lo_j = std::min(lo_j, v);
        hi_j = std::max(hi_j, v);
    }
    // match each batch row to its source sample through the second coordinate
    for (std::size_t r = 0; r < rotated.inputs.rows; ++r) {
        double u = rotated.inputs(r, 0), v = rotated.inputs(r, 1);
        bool matched = false;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            double want_u = (rx[i] - lo) / (hi - lo);
            double want_v = (ry[i] - lo_j) / (hi_j - lo_j);
            if (std::abs(want_v - v) < 1e-12 && std::abs(want_u - u) < 1e-12) {
                matched = true;
                CHECK(rotated.labels[r] == ds.labels[i]);
                break;
            }
        }
        CHECK(matched);
    }
}

TEST_CASE("drift raises the top-eigenvalue variance across a segment boundary") {
    Dataset ds = gaussian_blobs(23, 300, 6, 3, 5.0);
    NonstationaryStream stream(ds, DriftSchedule{5, 1.0}, 31);

    // fixed probe layer
    Rng wrng = Rng::stream(77, "probe");
    DenseMatrix w(8, 6);
    for (auto& x : w.data) x = wrng.uniform(-1.0, 1.0);

    // full-dataset probe batches: within a segment the covariance is
    // permutation-invariant, so the across-boundary jump dominates
    std::vector<double> lambdas;
    for (int i = 0; i < 10; ++i) {
        nn::Batch b = stream.next(ds.size());
        DenseMatrix z = linalg::matmul_nt(b.inputs, w);
        for (auto& v : z.data) v = std::max(v, 0.0);
        lambdas.push_back(linalg::jacobi_eig(linalg::activation_covariance(z)).values[0]);
    }
    auto variance = [](std::span<const double> xs) {
        double mean = 0.0;
        for (double v : xs) mean += v;
        mean /= static_cast<double>(xs.size());
        double acc = 0.0;
        for (double v : xs) acc += (v - mean) * (v - mean);
        return acc / static_cast<double>(xs.size());
    };
    double within = variance(std::span<const double>(lambdas).subspan(0, 5));
    double across = variance(std::span<const double>(lambdas).subspan(3, 5));  // spans the boundary
    CHECK(across > within);
}

TEST_CASE("fewshot episodes have the right shape and disjoint splits") {
    Dataset ds = gaussian_blobs(29, 20, 3, 10, 5.0);
    FewshotSampler sampler(ds, 5, 5, 5, 41);
    for (int e = 0; e < 4; ++e) {
        FewshotTask task = sampler.next();
        CHECK(task.support.inputs.rows == 25);
        CHECK(task.query.inputs.rows == 25);
        CHECK(task.class_ids.size() == 5);
        for (int y : task.support.labels) {
            CHECK(y >= 0);
            CHECK(y < 5);
        }
        // disjointness via exact feature-row comparison
        for (std::size_t q = 0; q < task.query.inputs.rows; ++q)
            for (std::size_t s = 0; s < task.support.inputs.rows; ++s)
                CHECK_FALSE(std::equal(task.query.inputs.row_ptr(q),
                                       task.query.inputs.row_ptr(q) + 3,
                                       task.support.inputs.row_ptr(s)));
    }

    FewshotSampler a(ds, 5, 5, 5, 41), b(ds, 5, 5, 5, 41);
    for (int e = 0; e < 3; ++e) {
        FewshotTask ta = a.next(), tb = b.next();
        CHECK(linalg::content_hash(ta.support.inputs) == linalg::content_hash(tb.support.inputs));
        CHECK(linalg::content_hash(ta.query.inputs) == linalg::content_hash(tb.query.inputs));
        CHECK(ta.class_ids == tb.class_ids);
    }

    // single covering episode: every class, every sample used
    Dataset small = gaussian_blobs(31, 6, 2, 3, 5.0);
    FewshotSampler covering(small, 3, 4, 2, 43);
    FewshotTask t = covering.next();
    CHECK(t.support.inputs.rows == 12);
    CHECK(t.query.inputs.rows == 6);

    CHECK_THROWS_AS(FewshotSampler(small, 3, 7, 0, 43), std::invalid_argument);
    CHECK_THROWS_AS(FewshotSampler(small, 4, 2, 2, 43), std::invalid_argument);
}

TEST_CASE("rendered digits stay inside the canvas with a blank border") {
    Dataset ds = render_digits(3, 200);
    CHECK(ds.size() == 200);
    CHECK(ds.class_count == 10);
    CHECK(ds.features.cols == 784);
    for (double v : ds.features.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // labels cycle for balance
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(ds.labels[i] == static_cast<int>(i % 10));
    // margin rows/columns are always empty
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const double* img = ds.features.row_ptr(i);
        for (std::size_t p = 0; p < 28; ++p) {
            for (std::size_t m = 0; m < 3; ++m) {
                CHECK(img[m * 28 + p] == 0.0);           // top rows
                CHECK(img[(27 - m) * 28 + p] == 0.0);    // bottom rows
                CHECK(img[p * 28 + m] == 0.0);           // left columns
                CHECK(img[p * 28 + (27 - m)] == 0.0);    // right columns
            }
        }
    }
    // determinism
    Dataset again = render_digits(3, 200);
    CHECK(linalg::content_hash(ds.features) == linalg::content_hash(again.features));

    // classes are distinguishable by a crude nearest-mean oracle
    std::vector<std::vector<double>> means(10, std::vector<double>(784, 0.0));
    std::vector<std::size_t> counts(10, 0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto c = static_cast<std::size_t>(ds.labels[i]);
        for (std::size_t d = 0; d < 784; ++d) means[c][d] += ds.features(i, d);
        ++counts[c];
    }
    for (std::size_t c = 0; c < 10; ++c)
        for (auto& m : means[c]) m /= static_cast<double>(counts[c]);
    Dataset probe = render_digits(4, 100);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        double best = 1e300;
        int pred = -1;
        for (int c = 0; c < 10; ++c) {
            double dist = 0.0;
            for (std::size_t d = 0; d < 784; ++d) {
                double diff = probe.features(i, d) - means[static_cast<std::size_t>(c)][d];
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                pred = c;
            }
        }
        if (pred == probe.labels[i]) ++hits;
    }
    CHECK(hits >= 30);  // crude oracle clears chance (10%) by a wide margin
}

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "dsbp/dataset.hpp"
#include "dsbp/matrix.hpp"
#include "dsbp/network.hpp"
#include "dsbp/optimizer.hpp"
#include "dsbp/rng.hpp"
#include "dsbp/spectral.hpp"

using namespace dsbp;
using linalg::DenseMatrix;

namespace {

data::Dataset blob_toy() { return data::gaussian_blobs(7, 100, 4, 2, 4.0); }

double full_accuracy(nn::Network& net, const data::Dataset& ds) {
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    const nn::Batch batch = data::make_batch(ds, idx);
    return net.forward(batch).accuracy;
}

spectral::LayerSpectralState toy_state(std::size_t dim) {
    spectral::LayerSpectralState st;
    st.eigenpairs.vectors = DenseMatrix(2, dim);
    st.eigenpairs.vectors(0, 0) = 1.0;
    st.eigenpairs.vectors(1, 1) = 1.0;
    st.eigenpairs.values = {2.0, 1.0};
    st.eigenpairs.residuals = {0.0, 0.0};
    st.lambda_history = {2.0};
    st.covariance_trace = 3.0;
    st.initialized = true;
    return st;
}

}  // namespace

TEST_CASE("config validation rejects bad hyper-parameters") {
    auto ds = blob_toy();
    data::EpochShuffleSource src(ds, 1);
    auto net = nn::Network::mlp({4, 8, 2}, 1);
    optim::DsbpConfig cfg;
    cfg.total_iters = 5;

    optim::DsbpConfig bad = cfg;
    bad.eta = -0.1;
    CHECK_THROWS_AS(optim::train_sgd(net, src, bad), std::invalid_argument);
    bad = cfg;
    bad.k = 0;
    CHECK_THROWS_AS(optim::train_dsbp(net, src, bad), std::invalid_argument);
    bad = cfg;
    bad.total_iters = 0;
    CHECK_THROWS_AS(optim::train_sgd(net, src, bad), std::invalid_argument);
    bad = cfg;
    bad.power_iters = 0;
    CHECK_THROWS_AS(optim::train_dsbp(net, src, bad), std::invalid_argument);
    bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS_AS(optim::train_sgd(net, src, bad), std::invalid_argument);
    CHECK_THROWS_AS(optim::train_sam(net, src, cfg, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(optim::train_sam(net, src, cfg, -0.2), std::invalid_argument);
}

TEST_CASE("sgd with zero learning rate keeps the network frozen") {
    auto ds = blob_toy();
    auto net = nn::Network::mlp({4, 8, 2}, 5);
    const auto before = net.parameter_vector();
    optim::DsbpConfig cfg;
    cfg.eta = 0.0;
    cfg.total_iters = 40;
    cfg.batch_size = ds.size();
    cfg.seed = 2;
    data::EpochShuffleSource src(ds, 2);
    auto rep = optim::train_sgd(std::move(net), src, cfg);
    CHECK(rep.final_net.parameter_vector() == before);
    for (const auto& r : rep.records) {
        CHECK(r.train_loss == doctest::Approx(rep.records.front().train_loss).epsilon(1e-12));
    }
}

TEST_CASE("sgd descends monotonically on a convex single-layer problem") {
    auto ds = blob_toy();
    nn::DenseLayer out;
    out.weight = DenseMatrix(2, 4);
    out.bias = {0.0, 0.0};
    out.activation = nn::ActivationKind::softmax_output;
    nn::Network net({out});

    optim::DsbpConfig cfg;
    cfg.eta = 0.05;
    cfg.total_iters = 150;
    cfg.batch_size = ds.size(); // full batch: the objective is fixed and convex
    cfg.seed = 3;
    data::EpochShuffleSource src(ds, 3);
    auto rep = optim::train_sgd(std::move(net), src, cfg);
    for (std::size_t i = 1; i < rep.records.size(); ++i) {
        CHECK(rep.records[i].train_loss <= rep.records[i - 1].train_loss + 1e-12);
    }
}

TEST_CASE("sgd separates the blob toy within 500 iterations") {
    auto ds = blob_toy();
    auto net = nn::Network::mlp({4, 16, 2}, 3);
    optim::DsbpConfig cfg;
    cfg.eta = 0.1;
    cfg.total_iters = 500;
    cfg.batch_size = 32;
    cfg.seed = 11;
    data::EpochShuffleSource src(ds, 11);
    auto rep = optim::train_sgd(std::move(net), src, cfg);
    CHECK(full_accuracy(rep.final_net, ds) >= 0.99);
}

TEST_CASE("dsbp separates the blob toy within 500 iterations") {
    auto ds = blob_toy();
    auto net = nn::Network::mlp({4, 16, 2}, 3);
    optim::DsbpConfig cfg;
    cfg.eta = 0.1;
    cfg.total_iters = 500;
    cfg.batch_size = 32;
    cfg.seed = 11;
    cfg.k = 5;
    cfg.p0 = 50;
    cfg.beta = 0.1;
    data::EpochShuffleSource src(ds, 11);
    auto rep = optim::train_dsbp(std::move(net), src, cfg);
    CHECK(full_accuracy(rep.final_net, ds) >= 0.99);
    CHECK(!rep.refresh_events.empty());
    CHECK(rep.initial_lambda1.size() == 2);
}

TEST_CASE("dsbp reduces to sgd bitwise when the spectral terms are inert") {
    auto ds = blob_toy();
    auto net = nn::Network::mlp({4, 16, 2}, 3);
    optim::DsbpConfig cfg;
    cfg.eta = 0.05;
    cfg.total_iters = 120;
    cfg.batch_size = 32;
    cfg.seed = 11;
    cfg.record_weight_hashes = true;

    data::EpochShuffleSource s1(ds, 11);
    auto sgd = optim::train_sgd(net, s1, cfg);

    // complete basis, no shrinkage, no pruning: refreshes happen but every
    // update stays a plain gradient step
    optim::DsbpConfig inert = cfg;
    inert.beta = 0.0;
    inert.k = 64;
    inert.p0 = 25;
    inert.prune = false;
    data::EpochShuffleSource s2(ds, 11);
    auto dsbp = optim::train_dsbp(net, s2, inert);
    REQUIRE(sgd.weight_hashes.size() == dsbp.weight_hashes.size());
    CHECK(sgd.weight_hashes == dsbp.weight_hashes);
    for (std::size_t i = 0; i < sgd.records.size(); ++i) {
        CHECK(sgd.records[i].train_loss == dsbp.records[i].train_loss);
    }

    // refreshes disabled outright
    optim::DsbpConfig sentinel = inert;
    sentinel.p0 = 0;
    sentinel.beta = 0.1;
    sentinel.k = 2;
    sentinel.prune = true;
    data::EpochShuffleSource s3(ds, 11);
    auto frozen = optim::train_dsbp(net, s3, sentinel);
    CHECK(sgd.weight_hashes == frozen.weight_hashes);
    CHECK(frozen.refresh_events.empty());
    CHECK(frozen.prune_events.empty());
}

TEST_CASE("sam collapses to sgd as rho approaches zero") {
    auto ds = blob_toy();
    auto net = nn::Network::mlp({4, 12, 2}, 9);
    optim::DsbpConfig cfg;
    cfg.eta = 0.05;
    cfg.total_iters = 50;
    cfg.batch_size = 32;
    cfg.seed = 4;
    data::EpochShuffleSource s1(ds, 4);
    data::EpochShuffleSource s2(ds, 4);
    auto sgd = optim::train_sgd(net, s1, cfg);
    auto sam = optim::train_sam(net, s2, cfg, 1e-12);
    const auto a = sgd.final_net.parameter_vector();
    const auto b = sam.final_net.parameter_vector();
    double max_diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) max_diff = std::max(max_diff, std::abs(a[i] - b[i]));
    CHECK(max_diff <= 1e-6);
}

TEST_CASE("sam keeps pace with sgd on the blob toy") {
    auto ds = blob_toy();
    auto net = nn::Network::mlp({4, 16, 2}, 3);
    optim::DsbpConfig cfg;
    cfg.eta = 0.1;
    cfg.total_iters = 500;
    cfg.batch_size = 32;
    cfg.seed = 11;
    data::EpochShuffleSource s1(ds, 11);
    data::EpochShuffleSource s2(ds, 11);
    auto sgd = optim::train_sgd(net, s1, cfg);
    auto sam = optim::train_sam(net, s2, cfg, 0.05);
    const double acc_sgd = full_accuracy(sgd.final_net, ds);
    const double acc_sam = full_accuracy(sam.final_net, ds);
    CHECK(acc_sam >= acc_sgd - 0.02);
}

TEST_CASE("sam effective gradient matches the quadratic closed form") {
    const std::vector<double> d = {3.0, 1.0, 2.0};
    nn::GradientFn quad = [&d](std::span<const double> p) {
        std::vector<double> g(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) g[i] = d[i] * p[i];
        return g;
    };
    const std::vector<double> w = {1.0, 2.0, -1.0};
    const double rho = 0.05;
    const auto got = optim::sam_effective_gradient(quad, w, rho);

    std::vector<double> dw(3);
    for (std::size_t i = 0; i < 3; ++i) dw[i] = d[i] * w[i];
    const double n = std::sqrt(dw[0] * dw[0] + dw[1] * dw[1] + dw[2] * dw[2]);
    for (std::size_t i = 0; i < 3; ++i) {
        const double expected = dw[i] + rho / n * d[i] * dw[i]; // (I + rho/||Dw|| D) Dw
        CHECK(got[i] == doctest::Approx(expected).epsilon(1e-8));
    }

    // zero gradient skips the perturbation
    const std::vector<double> origin = {0.0, 0.0, 0.0};
    const auto flat = optim::sam_effective_gradient(quad, origin, rho);
    for (double v : flat) CHECK(v == 0.0);

    CHECK_THROWS_AS(optim::sam_effective_gradient(quad, w, 0.0), std::invalid_argument);
}

TEST_CASE("lie generator is exactly skew and vanishes on zero gradients") {
    auto st = toy_state(3);
    const DenseMatrix zero(3, 5);
    CHECK(linalg::max_abs(optim::lie_generator(st, zero)) == 0.0);

    Rng rng(9);
    DenseMatrix g(3, 5);
    for (double& v : g.data) v = rng.uniform(-1.0, 1.0);
    const auto omega = optim::lie_generator(st, g);
    for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(omega(a, c) == -omega(c, a)); // exact by construction
        }
    }

    CHECK_THROWS_AS(optim::lie_generator(st, DenseMatrix(4, 5)), std::invalid_argument);
    spectral::LayerSpectralState uninit;
    CHECK_THROWS_AS(optim::lie_generator(uninit, g), std::invalid_argument);
}

TEST_CASE("lie generator matches a hand-built single-vector case") {
    spectral::LayerSpectralState st;
    st.eigenpairs.vectors = DenseMatrix(1, 2);
    st.eigenpairs.vectors(0, 0) = 1.0;
    st.eigenpairs.values = {5.0};
    st.eigenpairs.residuals = {0.0};
    st.initialized = true;

    const auto g = DenseMatrix::from_rows({{1.0, 1.0}, {1.0, 0.0}});
    // G G^T e1 = (2, 1); normalized ghat = (2, 1)/sqrt(5); omega = e ghat^T - ghat e^T
    const auto omega = optim::lie_generator(st, g);
    const double s5 = std::sqrt(5.0);
    CHECK(omega(0, 0) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(omega(0, 1) == doctest::Approx(1.0 / s5).epsilon(1e-12));
    CHECK(omega(1, 0) == doctest::Approx(-1.0 / s5).epsilon(1e-12));
    CHECK(omega(1, 1) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("rk4 rotation step matches the closed-form rotation") {
    const double theta = 0.5;
    const double eta = 0.2; // eta * theta = 0.1
    DenseMatrix omega(2, 2);
    omega(0, 1) = -theta;
    omega(1, 0) = theta;

    Rng rng(12);
    DenseMatrix w(2, 3);
    for (double& v : w.data) v = rng.uniform(-1.0, 1.0);
    const DenseMatrix w0 = w;
    const double norm0 = linalg::frobenius_norm(w0);

    optim::rk4_rotation_step(w, omega, eta);

    const double a = eta * theta;
    const double c = std::cos(a);
    const double s = std::sin(a);
    for (std::size_t j = 0; j < 3; ++j) {
        const double top = c * w0(0, j) + s * w0(1, j);
        const double bot = -s * w0(0, j) + c * w0(1, j);
        CHECK(w(0, j) == doctest::Approx(top).epsilon(1e-6));
        CHECK(w(1, j) == doctest::Approx(bot).epsilon(1e-6));
    }
    CHECK(std::abs(linalg::frobenius_norm(w) - norm0) <= 1e-6);

    CHECK_THROWS_AS(optim::rk4_rotation_step(w, DenseMatrix(3, 3), eta), std::invalid_argument);
}

TEST_CASE("repeated lie steps conserve the weight norm") {
    auto st = toy_state(8);
    Rng rng(21);
    DenseMatrix w(8, 5);
    for (double& v : w.data) v = rng.uniform(-1.0, 1.0);
    const double norm0 = linalg::frobenius_norm(w);

    for (int step = 0; step < 157; ++step) { // one epoch-sized stretch of updates
        DenseMatrix g(8, 5);
        for (double& v : g.data) v = rng.uniform(-1.0, 1.0);
        optim::lie_step(w, st, g, 0.1);
    }
    const double drift = std::abs(linalg::frobenius_norm(w) - norm0) / norm0;
    CHECK(drift <= 1e-3);

    DenseMatrix bad(7, 5);
    CHECK_THROWS_AS(optim::lie_step(bad, st, DenseMatrix(8, 5), 0.1), std::invalid_argument);
}

TEST_CASE("lie training with zero step size leaves the network unchanged") {
    auto ds = blob_toy();
    auto net = nn::Network::mlp({4, 8, 2}, 6);
    const auto before = net.parameter_vector();
    optim::DsbpConfig cfg;
    cfg.eta = 0.0;
    cfg.total_iters = 40;
    cfg.batch_size = 32;
    cfg.seed = 6;
    cfg.p0 = 10; // rotations do run, the integration interval is just empty
    data::EpochShuffleSource src(ds, 6);
    auto rep = optim::train_lie(std::move(net), src, cfg);
    const auto after = rep.final_net.parameter_vector();
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(after[i] == doctest::Approx(before[i]).epsilon(1e-15));
    }
}

TEST_CASE("lie training fits the blob toy") {
    auto ds = blob_toy();
    auto net = nn::Network::mlp({4, 16, 2}, 3);
    optim::DsbpConfig cfg;
    cfg.eta = 0.3;
    cfg.total_iters = 1000;
    cfg.batch_size = 32;
    cfg.seed = 11;
    cfg.k = 16;
    cfg.p0 = 10;
    data::EpochShuffleSource src(ds, 11);
    auto rep = optim::train_lie(std::move(net), src, cfg);
    CHECK(full_accuracy(rep.final_net, ds) >= 0.95);
}

TEST_CASE("divergence aborts with the iteration in the message") {
    // conflicting labels keep gradients bounded away from zero even when the
    // softmax saturates, and the linear hidden layer makes them scale with the
    // weights, so a huge step size must blow the parameters up
    data::Dataset ds;
    ds.features = DenseMatrix::from_rows({{1.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {0.0, 1.0}});
    ds.labels = {0, 1, 0, 1};
    ds.class_count = 2;

    Rng init(41);
    nn::DenseLayer hidden;
    hidden.weight = DenseMatrix(8, 2);
    for (double& v : hidden.weight.data) v = init.uniform(-0.7, 0.7);
    hidden.bias.assign(8, 0.0);
    hidden.activation = nn::ActivationKind::identity;
    nn::DenseLayer out;
    out.weight = DenseMatrix(2, 8);
    for (double& v : out.weight.data) v = init.uniform(-0.7, 0.7);
    out.bias.assign(2, 0.0);
    out.activation = nn::ActivationKind::softmax_output;
    nn::Network net({hidden, out});

    optim::DsbpConfig cfg;
    cfg.eta = 1e8;
    cfg.total_iters = 50;
    cfg.batch_size = 4;
    cfg.seed = 8;
    data::EpochShuffleSource src(ds, 8);
    try {
        optim::train_sgd(std::move(net), src, cfg);
        FAIL("expected divergence");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("diverged at iteration") != std::string::npos);
    }
}

TEST_CASE("pruning logs events and the veto is always respected") {
    auto ds = blob_toy();
    auto net = nn::Network::mlp({4, 16, 2}, 3);
    optim::DsbpConfig cfg;
    cfg.eta = 0.05;
    cfg.total_iters = 200;
    cfg.batch_size = 32;
    cfg.seed = 13;
    cfg.k = 8;
    cfg.p0 = 20;
    cfg.tau0 = 0.05;
    cfg.prune = true;
    data::EpochShuffleSource src(ds, 13);
    auto rep = optim::train_dsbp(std::move(net), src, cfg);

    REQUIRE(!rep.prune_events.empty());
    std::vector<double> last_threshold(2, 1e300);
    std::vector<double> last_committed_sparsity(2, 0.0);
    for (const auto& ev : rep.prune_events) {
        CHECK(ev.committed == (ev.reconstruction_error <= ev.budget));
        CHECK(ev.threshold <= last_threshold[ev.layer] + 1e-15); // non-increasing per layer
        last_threshold[ev.layer] = ev.threshold;
        CHECK(ev.candidate_sparsity >= 0.0);
        CHECK(ev.candidate_sparsity <= 1.0);
        if (ev.committed) last_committed_sparsity[ev.layer] = ev.candidate_sparsity;
    }
    // committed masks persist: zeroed entries stay zeroed through later updates
    const auto& final_rec = rep.records.back();
    for (std::size_t l = 0; l < 2; ++l) {
        CHECK(final_rec.sparsity[l] >= last_committed_sparsity[l] - 1e-12);
    }
}

TEST_CASE("metrics records follow the logging contract") {
    auto ds = blob_toy();
    data::Dataset test = data::gaussian_blobs(17, 30, 4, 2, 4.0);
    auto net = nn::Network::mlp({4, 8, 2}, 2);
    optim::DsbpConfig cfg;
    cfg.eta = 0.05;
    cfg.total_iters = 55;
    cfg.batch_size = 20; // epoch length 10
    cfg.seed = 5;
    cfg.p0 = 10;
    cfg.k = 4;
    cfg.hessian_every = 25;
    cfg.test_every = 10;

    data::EpochShuffleSource src(ds, 5);
    auto rep = optim::train_dsbp(net, src, cfg, &test);

    REQUIRE(rep.records.size() == 55);
    for (std::size_t i = 0; i < rep.records.size(); ++i) {
        const auto& r = rep.records[i];
        CHECK(r.iteration == static_cast<std::int64_t>(i + 1));
        CHECK(r.epoch == static_cast<std::int64_t>(i / 10));
        CHECK(r.sparsity.size() == 2);
        CHECK(r.lambda_top.size() == 2);
        CHECK(r.wall_clock_ms.has_value());
        const bool hessian_due = (i + 1) % 25 == 0 || i + 1 == 55;
        CHECK(r.hessian_top.has_value() == hessian_due);
        const bool test_due = (i + 1) % 10 == 0 || i + 1 == 55;
        CHECK(r.test_accuracy.has_value() == test_due);
        const bool spectral_ready = i + 1 >= 10;
        CHECK(r.lambda_top[0].has_value() == spectral_ready);
        CHECK(r.lambda_top_scaled[0].has_value() == spectral_ready);
        if (spectral_ready) {
            CHECK(*r.lambda_top_scaled[0] ==
                  doctest::Approx(*r.lambda_top[0] / 20.0).epsilon(1e-12));
        }
        CHECK(r.alignment.has_value() == spectral_ready);
        if (r.alignment.has_value()) {
            CHECK(*r.alignment >= 1.0 - std::sqrt(2.0) - 1e-12);
            CHECK(*r.alignment <= 1.0 + 1e-12);
        }
        if (r.angle_degrees.has_value()) {
            CHECK(*r.angle_degrees >= 0.0);
            CHECK(*r.angle_degrees <= 180.0);
        }
    }
    CHECK(rep.epoch_wall_ms.size() == 6); // five full epochs plus the partial tail

    // final test accuracy is reproducible from the final network
    nn::Network& final_net = rep.final_net;
    CHECK(*rep.records.back().test_accuracy == doctest::Approx(full_accuracy(final_net, test)));

    // sgd produces no spectral metrics at all
    data::EpochShuffleSource src2(ds, 5);
    auto sgd = optim::train_sgd(net, src2, cfg, &test);
    for (const auto& r : sgd.records) {
        CHECK(!r.lambda_top[0].has_value());
        CHECK(!r.lambda_top[1].has_value());
        CHECK(!r.alignment.has_value());
        CHECK(!r.angle_degrees.has_value());
    }
}

TEST_CASE("refresh events honor the base interval when alpha is zero") {
    auto ds = blob_toy();
    auto net = nn::Network::mlp({4, 8, 2}, 2);
    optim::DsbpConfig cfg;
    cfg.eta = 0.05;
    cfg.total_iters = 100;
    cfg.batch_size = 25;
    cfg.seed = 5;
    cfg.p0 = 20;
    cfg.alpha = 0.0; // variance feedback disabled: p_t = p0 exactly
    data::EpochShuffleSource src(ds, 5);
    auto rep = optim::train_dsbp(std::move(net), src, cfg);
    REQUIRE(!rep.refresh_events.empty());
    for (const auto& ev : rep.refresh_events) {
        CHECK(ev.next_interval == 20);
        CHECK(ev.iteration % 20 == 0);
    }
    // both layers refresh on the same schedule here: 20, 40, 60, 80, 100
    CHECK(rep.refresh_events.size() == 10);
}

TEST_CASE("train dispatches on the configured baseline kind") {
    auto ds = blob_toy();
    auto net = nn::Network::mlp({4, 8, 2}, 2);
    optim::DsbpConfig cfg;
    cfg.eta = 0.05;
    cfg.total_iters = 30;
    cfg.batch_size = 32;
    cfg.seed = 5;
    cfg.record_weight_hashes = true;

    cfg.baseline_kind = optim::BaselineKind::sgd;
    data::EpochShuffleSource s1(ds, 5);
    data::EpochShuffleSource s2(ds, 5);
    auto direct = optim::train_sgd(net, s1, cfg);
    auto routed = optim::train(net, s2, cfg);
    CHECK(direct.weight_hashes == routed.weight_hashes);

    cfg.baseline_kind = optim::BaselineKind::sam;
    cfg.sam_rho = 0.05;
    data::EpochShuffleSource s3(ds, 5);
    data::EpochShuffleSource s4(ds, 5);
    auto sam_direct = optim::train_sam(net, s3, cfg, 0.05);
    auto sam_routed = optim::train(net, s4, cfg);
    CHECK(sam_direct.weight_hashes == sam_routed.weight_hashes);
}

TEST_CASE("an empty data source is rejected") {
    data::Dataset empty;
    empty.features = DenseMatrix(0, 4);
    empty.class_count = 2;
    CHECK_THROWS_AS(data::EpochShuffleSource(empty, 1), std::invalid_argument);

    // training also guards against sources that report no samples
    struct HollowSource : data::BatchSource {
        nn::Batch next(std::size_t) override { return {}; }
        std::size_t sample_count() const override { return 0; }
    } hollow;
    auto net = nn::Network::mlp({4, 8, 2}, 1);
    optim::DsbpConfig cfg;
    cfg.total_iters = 5;
    CHECK_THROWS_AS(optim::train_sgd(std::move(net), hollow, cfg), std::invalid_argument);
}

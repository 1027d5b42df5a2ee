#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "dsbp/spectral.hpp"

using namespace dsbp;
using namespace dsbp::spectral;
using linalg::DenseMatrix;

namespace {

DenseMatrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    Rng rng = Rng::stream(seed, "test");
    DenseMatrix m(r, c);
    for (auto& x : m.data) x = rng.uniform(-1.0, 1.0);
    return m;
}

// orthonormal rows from the spectrum of a random SPD matrix
DenseMatrix orthonormal_rows(std::size_t d, std::uint64_t seed) {
    DenseMatrix b = random_matrix(d + 2, d, seed);
    return linalg::jacobi_eig(linalg::activation_covariance(b)).vectors;
}

LayerSpectralState state_from(const DenseMatrix& vectors, std::vector<double> values) {
    LayerSpectralState st;
    st.eigenpairs.vectors = vectors;
    st.eigenpairs.values = values;
    st.eigenpairs.residuals.assign(values.size(), 0.0);
    double tr = 0.0;
    for (double v : values) tr += v;
    st.covariance_trace = tr;
    st.initialized = true;
    return st;
}

}  // namespace

TEST_CASE("refresh on rank-1 activations recovers the direction and eigenvalue n") {
    const std::size_t n = 7, d = 5;
    std::vector<double> u(d);
    Rng rng = Rng::stream(3, "test");
    for (auto& x : u) x = rng.uniform(-1.0, 1.0);
    linalg::normalize(std::span<double>(u));
    DenseMatrix a(n, d);
    for (std::size_t i = 0; i < n; ++i) std::copy(u.begin(), u.end(), a.row_ptr(i));

    LayerSpectralState st;
    Rng prng = Rng::stream(3, "power");
    refresh_spectral_state(st, a, 1, 10, prng, 0);
    CHECK(st.eigenpairs.values[0] == doctest::Approx(static_cast<double>(n)).epsilon(1e-9));
    CHECK(std::abs(linalg::dot(st.eigenpairs.vectors.row(0), u)) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(st.lambda_history.size() == 1);
    CHECK(st.covariance_trace == doctest::Approx(static_cast<double>(n)).epsilon(1e-12));
}

TEST_CASE("refresh twice on the same activations is a warm-start fixed point") {
    DenseMatrix a = random_matrix(12, 6, 5);
    LayerSpectralState st;
    Rng prng = Rng::stream(9, "power");
    refresh_spectral_state(st, a, 3, 100, prng, 0);
    auto vectors = st.eigenpairs.vectors;
    auto values = st.eigenpairs.values;
    refresh_spectral_state(st, a, 3, 5, prng, 100);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(st.eigenpairs.values[i] == doctest::Approx(values[i]).epsilon(1e-9));
        CHECK(linalg::dot(st.eigenpairs.vectors.row(i), vectors.row(i)) ==
              doctest::Approx(1.0).epsilon(1e-9));
    }
    CHECK(st.lambda_history.size() == 2);
    CHECK(st.last_refresh_iter == 100);
}

TEST_CASE("refresh matches the full-spectrum oracle and caps the history ring") {
    DenseMatrix a = random_matrix(15, 8, 13);
    auto oracle = linalg::jacobi_eig(linalg::activation_covariance(a));
    LayerSpectralState st;
    Rng prng = Rng::stream(13, "power");
    for (int i = 0; i < 14; ++i) refresh_spectral_state(st, a, 2, 50, prng, i);
    CHECK(st.eigenpairs.values[0] == doctest::Approx(oracle.values[0]).epsilon(1e-4));
    CHECK(st.lambda_history.size() == kLambdaWindow);
}

TEST_CASE("update with beta 0 and a complete basis is bitwise plain SGD") {
    const std::size_t d = 6;
    DenseMatrix w = random_matrix(d, 4, 17);
    DenseMatrix g = random_matrix(d, 4, 19);
    LayerSpectralState st = state_from(orthonormal_rows(d, 21), std::vector<double>(d, 1.0));

    DenseMatrix sgd = w;
    linalg::add_scaled(sgd, -0.05, g);
    DenseMatrix updated = w;
    dsbp_weight_update(updated, g, st, 0.05, 0.0);
    CHECK(linalg::content_hash(updated) == linalg::content_hash(sgd));
}

TEST_CASE("zero gradient shrinks exactly the top-eigenvector component") {
    const std::size_t d = 5;
    DenseMatrix basis = orthonormal_rows(d, 23);
    const double lambda1 = 3.0, beta = 0.1;  // beta*lambda1 = 0.3
    LayerSpectralState st = state_from(basis, {lambda1, 1.0});

    DenseMatrix w = random_matrix(d, 3, 29);
    auto before = linalg::matvec_t(w, basis.row(0));
    DenseMatrix g(d, 3);  // zero gradient
    DenseMatrix updated = w;
    dsbp_weight_update(updated, g, st, 0.01, beta);
    auto after = linalg::matvec_t(updated, basis.row(0));
    CHECK(linalg::norm(after) ==
          doctest::Approx((1.0 - beta * lambda1) * linalg::norm(before)).epsilon(1e-12));
    // other basis components untouched
    for (std::size_t i = 1; i < d; ++i) {
        auto b0 = linalg::matvec_t(w, basis.row(i));
        auto b1 = linalg::matvec_t(updated, basis.row(i));
        for (std::size_t j = 0; j < b0.size(); ++j)
            CHECK(b1[j] == doctest::Approx(b0[j]).epsilon(1e-12));
    }
}

TEST_CASE("a shrink factor above one removes the component instead of flipping it") {
    const std::size_t d = 4;
    DenseMatrix basis = orthonormal_rows(d, 31);
    LayerSpectralState st = state_from(basis, {50.0});  // beta*lambda1 = 5 -> clamp to 1
    DenseMatrix w = random_matrix(d, 3, 37);
    DenseMatrix g(d, 3);
    DenseMatrix updated = w;
    dsbp_weight_update(updated, g, st, 0.01, 0.1);
    auto after = linalg::matvec_t(updated, basis.row(0));
    CHECK(linalg::norm(after) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("update matches an explicit-loop reference at the defaults") {
    const std::size_t dl = 12, dprev = 6, k = 10;
    const double eta = 0.01, beta = 0.1;
    DenseMatrix full = orthonormal_rows(dl, 41);
    DenseMatrix basis(k, dl);
    for (std::size_t i = 0; i < k; ++i)
        std::copy(full.row_ptr(i), full.row_ptr(i) + dl, basis.row_ptr(i));
    std::vector<double> values(k);
    for (std::size_t i = 0; i < k; ++i) values[i] = 2.0 - 0.1 * static_cast<double>(i);
    LayerSpectralState st = state_from(basis, values);

    DenseMatrix w = random_matrix(dl, dprev, 43);
    DenseMatrix g = random_matrix(dl, dprev, 47);

    // reference: explicit loops, no shared kernels
    DenseMatrix want = w;
    std::vector<double> top(dprev, 0.0);
    for (std::size_t c = 0; c < dprev; ++c)
        for (std::size_t r = 0; r < dl; ++r) top[c] += basis(0, r) * w(r, c);
    for (std::size_t i = 0; i < k; ++i) {
        std::vector<double> coef(dprev, 0.0);
        for (std::size_t c = 0; c < dprev; ++c)
            for (std::size_t r = 0; r < dl; ++r) coef[c] += basis(i, r) * g(r, c);
        for (std::size_t r = 0; r < dl; ++r)
            for (std::size_t c = 0; c < dprev; ++c) want(r, c) -= eta * basis(i, r) * coef[c];
    }
    const double shrink = std::min(1.0, beta * values[0]);
    for (std::size_t r = 0; r < dl; ++r)
        for (std::size_t c = 0; c < dprev; ++c) want(r, c) -= shrink * basis(0, r) * top[c];

    DenseMatrix got = w;
    dsbp_weight_update(got, g, st, eta, beta);
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
}

TEST_CASE("update validates shapes and state") {
    DenseMatrix w = random_matrix(4, 3, 51);
    DenseMatrix g = random_matrix(3, 3, 53);
    LayerSpectralState st = state_from(orthonormal_rows(4, 55), {1.0});
    DenseMatrix wc = w;
    CHECK_THROWS_AS(dsbp_weight_update(wc, g, st, 0.01, 0.1), std::invalid_argument);
    LayerSpectralState empty;
    DenseMatrix g2 = random_matrix(4, 3, 57);
    CHECK_THROWS_AS(dsbp_weight_update(wc, g2, empty, 0.01, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(dsbp_weight_update(wc, g2, st, 0.0, 0.1), std::invalid_argument);
}

TEST_CASE("dynamic interval follows the variance formula") {
    IntervalController ctrl{100, 0.1};
    std::vector<double> constant(10, 5.0);
    CHECK(dynamic_interval(ctrl, constant) == 100);

    std::vector<double> alternating;
    for (int i = 0; i < 10; ++i) alternating.push_back(i % 2 == 0 ? 0.0 : 2.0);
    CHECK(window_variance(alternating) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(dynamic_interval(ctrl, alternating) == 90);

    IntervalController off{100, 0.0};
    CHECK(dynamic_interval(off, alternating) == 100);

    std::vector<double> one = {3.0};
    CHECK(dynamic_interval(ctrl, one) == 100);

    // monotone in variance, bounded in [1, p0]
    std::size_t prev = 100;
    for (double spread = 0.0; spread < 400.0; spread += 20.0) {
        std::vector<double> h;
        for (int i = 0; i < 10; ++i) h.push_back(i % 2 == 0 ? 0.0 : spread);
        std::size_t p = dynamic_interval(ctrl, h);
        CHECK(p <= prev);
        CHECK(p >= 1);
        CHECK(p <= 100);
        prev = p;
    }
}

TEST_CASE("prune threshold follows the exponential schedule") {
    PruneSchedule s{0.01, 0.1, 1000};
    CHECK(prune_threshold(s, 0) == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(prune_threshold(s, 1000) == doctest::Approx(0.01 * std::exp(-0.1)).epsilon(1e-12));
    CHECK(prune_threshold(s, 1000) == doctest::Approx(0.009048374).epsilon(1e-6));
    double prev = 1.0;
    for (std::size_t t = 0; t <= 1000; t += 50) {
        double tau = prune_threshold(s, t);
        CHECK(tau > 0.0);
        CHECK(tau <= prev);
        prev = tau;
    }
    CHECK_THROWS_AS(prune_threshold(s, 1001), std::invalid_argument);

    PruneSchedule frozen{0.01, 0.0, 1000};
    CHECK(prune_threshold(frozen, 700) == doctest::Approx(0.01).epsilon(1e-15));
}

TEST_CASE("layer threshold scaling is proportional to the initial eigenvalue share") {
    CHECK(layer_threshold_scale(0.01, 12.0, 12.0) == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(layer_threshold_scale(0.01, 6.0, 12.0) == doctest::Approx(0.005).epsilon(1e-15));
    CHECK(layer_threshold_scale(0.01, 3.0, 12.0) == doctest::Approx(0.0025).epsilon(1e-15));
    CHECK_THROWS_AS(layer_threshold_scale(0.01, 1.0, 0.0), std::invalid_argument);
}

TEST_CASE("pruning masks the spectral reconstruction entrywise") {
    const std::size_t d = 6, cols = 4, k = 2;
    DenseMatrix w = random_matrix(d, cols, 61);
    DenseMatrix full = orthonormal_rows(d, 63);
    DenseMatrix basis(k, d);
    for (std::size_t i = 0; i < k; ++i)
        std::copy(full.row_ptr(i), full.row_ptr(i) + d, basis.row_ptr(i));
    LayerSpectralState st = state_from(basis, {2.0, 1.0});

    // explicit reconstruction oracle
    DenseMatrix recon(d, cols);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                double coef = 0.0;
                for (std::size_t s = 0; s < d; ++s) coef += basis(i, s) * w(s, c);
                recon(r, c) += basis(i, r) * coef;
            }

    std::vector<double> mags;
    for (double v : recon.data) mags.push_back(std::abs(v));
    std::sort(mags.begin(), mags.end());
    double median = 0.5 * (mags[mags.size() / 2 - 1] + mags[mags.size() / 2]);

    auto res = spectral_prune(w, st, median);
    CHECK(res.sparsity == doctest::Approx(0.5).epsilon(1e-12));
    for (std::size_t i = 0; i < w.size(); ++i) {
        bool keep = std::abs(recon.data[i]) >= median;
        CHECK(res.mask.data[i] == (keep ? 1.0 : 0.0));
        CHECK(res.pruned.data[i] == (keep ? w.data[i] : 0.0));
    }
    CHECK(linalg::frobenius_norm(res.pruned) <= linalg::frobenius_norm(w));

    // threshold below every magnitude keeps everything (complete basis: R = W)
    LayerSpectralState complete = state_from(full, std::vector<double>(d, 1.0));
    auto none = spectral_prune(w, complete, 1e-12);
    CHECK(none.sparsity == doctest::Approx(0.0));
    CHECK(linalg::content_hash(none.pruned) == linalg::content_hash(w));

    // threshold above every magnitude zeroes everything
    auto all = spectral_prune(w, st, 1e6);
    CHECK(all.sparsity == doctest::Approx(1.0));
    CHECK(linalg::max_abs(all.pruned) == 0.0);

    CHECK_THROWS_AS(spectral_prune(w, st, 0.0), std::invalid_argument);
}

TEST_CASE("reconstruction veto compares against five percent of the eigenvalue mass") {
    DenseMatrix w = random_matrix(5, 4, 67);
    CHECK(reconstruction_error_ok(w, w, std::vector<double>{0.0}));

    DenseMatrix changed = w;
    changed(0, 0) += 1e-6;
    CHECK_FALSE(reconstruction_error_ok(w, changed, std::vector<double>{0.0}));

    DenseMatrix pruned = w;
    pruned(1, 1) = 0.0;
    pruned(2, 3) = 0.0;
    double err = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        double dd = w.data[i] - pruned.data[i];
        err += dd * dd;
    }
    std::vector<double> values = {err / 0.05 * 1.001};  // just inside the budget
    CHECK(reconstruction_error_ok(w, pruned, values));
    std::vector<double> tight = {err / 0.05 * 0.999};  // just outside
    CHECK_FALSE(reconstruction_error_ok(w, pruned, tight));
}

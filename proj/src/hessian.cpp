#include "dsbp/hessian.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "dsbp/eigen.hpp"
#include "dsbp/rng.hpp"

namespace dsbp::nn {

namespace {

constexpr double kHvpEps = 1e-4;
constexpr std::size_t kMinIters = 10;

HessianEigEstimate estimate_from_operator(
    std::size_t dim, const std::function<void(std::span<const double>, std::span<double>)>& apply,
    std::size_t iters, std::uint64_t seed) {
    if (iters < kMinIters)
        throw std::invalid_argument("top_hessian_eigenvalue: need at least " +
                                    std::to_string(kMinIters) + " iterations");
    Rng rng = Rng::stream(seed, "hessian");
    HessianEigEstimate est;
    est.value = linalg::operator_top_eigenvalue(dim, apply, iters, rng, &est.vector);
    std::vector<double> hv(dim);
    apply(est.vector, hv);
    linalg::add_scaled(std::span<double>(hv), -est.value, est.vector);
    est.residual = linalg::norm(hv);
    est.converged = est.residual <= 0.05 * std::abs(est.value);
    return est;
}

}  // namespace

std::vector<double> hvp_central(const GradientFn& grad, std::span<const double> point,
                                std::span<const double> direction, double eps) {
    if (eps < 1e-6 || eps > 1e-3)
        throw std::invalid_argument("hvp_central: eps must lie in [1e-6, 1e-3]");
    if (point.size() != direction.size())
        throw std::invalid_argument("hvp_central: direction length does not match point");
    const double dnorm = linalg::norm(direction);
    if (dnorm == 0.0) throw std::invalid_argument("hvp_central: zero direction");

    std::vector<double> unit(direction.begin(), direction.end());
    for (auto& x : unit) x /= dnorm;

    std::vector<double> shifted(point.begin(), point.end());
    linalg::add_scaled(std::span<double>(shifted), eps, unit);
    std::vector<double> gplus = grad(shifted);

    shifted.assign(point.begin(), point.end());
    linalg::add_scaled(std::span<double>(shifted), -eps, unit);
    std::vector<double> gminus = grad(shifted);

    if (gplus.size() != point.size() || gminus.size() != point.size())
        throw std::invalid_argument("hvp_central: gradient field returned wrong dimension");

    std::vector<double> hv(point.size());
    const double scale = dnorm / (2.0 * eps);
    for (std::size_t i = 0; i < hv.size(); ++i) hv[i] = (gplus[i] - gminus[i]) * scale;
    return hv;
}

std::vector<double> hessian_vector_product(Network& net, const Batch& batch,
                                           std::span<const double> direction, double eps) {
    std::vector<double> theta = net.parameter_vector();
    GradientFn grad = [&net, &batch](std::span<const double> w) {
        net.set_parameters(w);
        return net.gradient_vector(batch);
    };
    std::vector<double> hv = hvp_central(grad, theta, direction, eps);
    net.set_parameters(theta);
    return hv;
}

HessianEigEstimate top_hessian_eigenvalue(Network& net, const Batch& batch, std::size_t iters,
                                          std::uint64_t seed) {
    const std::size_t dim = net.parameter_count();
    std::vector<double> theta = net.parameter_vector();
    GradientFn grad = [&net, &batch](std::span<const double> w) {
        net.set_parameters(w);
        return net.gradient_vector(batch);
    };
    auto apply = [&](std::span<const double> x, std::span<double> y) {
        std::vector<double> hv = hvp_central(grad, theta, x, kHvpEps);
        std::copy(hv.begin(), hv.end(), y.begin());
    };
    HessianEigEstimate est = estimate_from_operator(dim, apply, iters, seed);
    net.set_parameters(theta);
    return est;
}

HessianEigEstimate layer_hessian_eigenvalue(Network& net, const Batch& batch, std::size_t layer,
                                            std::size_t iters, std::uint64_t seed) {
    const std::size_t dim = net.parameter_count();
    const auto [offset, length] = net.weight_block(layer);
    std::vector<double> theta = net.parameter_vector();
    GradientFn grad = [&net, &batch](std::span<const double> w) {
        net.set_parameters(w);
        return net.gradient_vector(batch);
    };
    auto mask = [offset, length](std::span<double> v) {
        for (std::size_t i = 0; i < offset; ++i) v[i] = 0.0;
        for (std::size_t i = offset + length; i < v.size(); ++i) v[i] = 0.0;
    };
    auto apply = [&](std::span<const double> x, std::span<double> y) {
        std::vector<double> masked(x.begin(), x.end());
        mask(std::span<double>(masked));
        if (linalg::norm(masked) == 0.0) {
            std::fill(y.begin(), y.end(), 0.0);
            return;
        }
        std::vector<double> hv = hvp_central(grad, theta, masked, kHvpEps);
        mask(std::span<double>(hv));
        std::copy(hv.begin(), hv.end(), y.begin());
    };
    HessianEigEstimate est = estimate_from_operator(dim, apply, iters, seed);
    net.set_parameters(theta);
    return est;
}

}  // namespace dsbp::nn

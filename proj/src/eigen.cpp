#include "dsbp/eigen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

namespace dsbp::linalg {

namespace {

void require_square(const DenseMatrix& c, const char* who) {
    if (c.rows == 0 || c.rows != c.cols)
        throw std::invalid_argument(std::string(who) + ": need a nonempty square matrix, got " +
                                    std::to_string(c.rows) + "x" + std::to_string(c.cols));
    require_finite(c, who);
}

void require_symmetric(const DenseMatrix& c, const char* who) {
    require_square(c, who);
    double worst = 0.0;
    for (std::size_t i = 0; i < c.rows; ++i)
        for (std::size_t j = i + 1; j < c.cols; ++j)
            worst = std::max(worst, std::abs(c(i, j) - c(j, i)));
    if (worst > 1e-9 * std::max(1.0, max_abs(c)))
        throw std::invalid_argument(std::string(who) + ": matrix is asymmetric (max |C - C^T| = " +
                                    std::to_string(worst) + ")");
}

// w = C v - sum_{j<npairs} values[j] (e_j . v) e_j
void apply_deflated(const DenseMatrix& c, std::span<const double> v, const DenseMatrix& vectors,
                    const std::vector<double>& values, std::size_t npairs, std::vector<double>& w) {
    w = matvec(c, v);
    for (std::size_t j = 0; j < npairs; ++j) {
        auto ej = vectors.row(j);
        double coef = values[j] * dot(ej, v);
        if (coef != 0.0) add_scaled(std::span<double>(w), -coef, ej);
    }
}

void flip_largest_component_positive(std::span<double> v) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
    if (v[arg] < 0.0)
        for (auto& x : v) x = -x;
}

double residual_norm(const DenseMatrix& c, std::span<const double> v, double value) {
    std::vector<double> w = matvec(c, v);
    add_scaled(std::span<double>(w), -value, v);
    return norm(w);
}

void sort_pairs_descending(EigenPairs& out) {
    std::vector<std::size_t> order(out.values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return out.values[a] > out.values[b]; });
    DenseMatrix vecs(out.vectors.rows, out.vectors.cols);
    std::vector<double> vals(out.values.size()), res(out.residuals.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        std::copy(out.vectors.row_ptr(order[i]), out.vectors.row_ptr(order[i]) + out.vectors.cols,
                  vecs.row_ptr(i));
        vals[i] = out.values[order[i]];
        res[i] = out.residuals[order[i]];
    }
    out.vectors = std::move(vecs);
    out.values = std::move(vals);
    out.residuals = std::move(res);
}

}  // namespace

DenseMatrix activation_covariance(const DenseMatrix& activations) {
    if (activations.rows == 0 || activations.cols == 0)
        throw std::invalid_argument("activation_covariance: empty activation batch");
    require_finite(activations, "activation_covariance");
    DenseMatrix c = matmul_tn(activations, activations);
    // force exact symmetry so downstream eigen solves are order-independent
    for (std::size_t i = 0; i < c.rows; ++i)
        for (std::size_t j = i + 1; j < c.cols; ++j) {
            double s = 0.5 * (c(i, j) + c(j, i));
            c(i, j) = s;
            c(j, i) = s;
        }
    return c;
}

EigenPairs power_iteration_topk(const DenseMatrix& c, std::size_t k, std::size_t iters,
                                std::uint64_t rng_seed) {
    Rng rng = Rng::stream(rng_seed, "power");
    return power_iteration_topk(c, k, iters, rng);
}

EigenPairs power_iteration_topk(const DenseMatrix& c, std::size_t k, std::size_t iters,
                                Rng& rng, const DenseMatrix* warm_start) {
    require_symmetric(c, "power_iteration_topk");
    const std::size_t d = c.rows;
    if (k == 0 || k > d)
        throw std::invalid_argument("power_iteration_topk: k=" + std::to_string(k) +
                                    " out of range for dimension " + std::to_string(d));
    if (iters == 0) throw std::invalid_argument("power_iteration_topk: need at least one iteration");
    if (warm_start && warm_start->cols != d)
        throw std::invalid_argument("power_iteration_topk: warm start has " +
                                    std::to_string(warm_start->cols) + " columns, expected " +
                                    std::to_string(d));

    EigenPairs out;
    out.vectors = DenseMatrix(k, d);
    out.values.assign(k, 0.0);
    out.residuals.assign(k, 0.0);

    std::vector<double> v(d), w(d);
    for (std::size_t i = 0; i < k; ++i) {
        const bool warmed = warm_start && i < warm_start->rows && norm(warm_start->row(i)) > 0.0;
        if (warmed) {
            auto src = warm_start->row(i);
            std::copy(src.begin(), src.end(), v.begin());
        } else {
            for (auto& x : v) x = rng.uniform(-1.0, 1.0);
        }
        if (normalize(std::span<double>(v)) == 0.0) {
            for (auto& x : v) x = rng.uniform(-1.0, 1.0);
            normalize(std::span<double>(v));
        }

        for (std::size_t it = 0; it < iters; ++it) {
            apply_deflated(c, v, out.vectors, out.values, i, w);
            if (normalize(std::span<double>(w)) <= 1e-300) break;  // v sits in the kernel
            std::swap(v, w);
        }

        apply_deflated(c, v, out.vectors, out.values, i, w);
        double value = dot(v, w);

        if (warmed) {
            double s = dot(v, warm_start->row(i));
            if (s < 0.0)
                for (auto& x : v) x = -x;
            else if (s == 0.0)
                flip_largest_component_positive(std::span<double>(v));
        } else {
            flip_largest_component_positive(std::span<double>(v));
        }

        std::copy(v.begin(), v.end(), out.vectors.row_ptr(i));
        out.values[i] = value;
        out.residuals[i] = residual_norm(c, v, value);
    }

    sort_pairs_descending(out);
    return out;
}

EigenPairs jacobi_eig(const DenseMatrix& c) {
    require_symmetric(c, "jacobi_eig");
    const std::size_t d = c.rows;

    DenseMatrix a(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) a(i, j) = 0.5 * (c(i, j) + c(j, i));
    DenseMatrix evec = DenseMatrix::identity(d);

    const double tol = 1e-14 * std::max(1.0, frobenius_norm(a));
    const std::size_t max_sweeps = 100;
    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = i + 1; j < d; ++j) off += 2.0 * a(i, j) * a(i, j);
        if (std::sqrt(off) <= tol) break;

        for (std::size_t p = 0; p + 1 < d; ++p) {
            for (std::size_t q = p + 1; q < d; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) <= 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                double t;
                if (std::abs(theta) > 1e10) {
                    t = 1.0 / (2.0 * theta);
                } else {
                    t = 1.0 / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                    if (theta < 0.0) t = -t;
                }
                const double cs = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * cs;

                const double app = a(p, p), aqq = a(q, q);
                a(p, p) = cs * cs * app - 2.0 * sn * cs * apq + sn * sn * aqq;
                a(q, q) = sn * sn * app + 2.0 * sn * cs * apq + cs * cs * aqq;
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (std::size_t r = 0; r < d; ++r) {
                    if (r == p || r == q) continue;
                    const double arp = a(r, p), arq = a(r, q);
                    a(r, p) = cs * arp - sn * arq;
                    a(p, r) = a(r, p);
                    a(r, q) = sn * arp + cs * arq;
                    a(q, r) = a(r, q);
                }
                for (std::size_t r = 0; r < d; ++r) {
                    const double vrp = evec(r, p), vrq = evec(r, q);
                    evec(r, p) = cs * vrp - sn * vrq;
                    evec(r, q) = sn * vrp + cs * vrq;
                }
            }
        }
    }

    EigenPairs out;
    out.vectors = DenseMatrix(d, d);
    out.values.assign(d, 0.0);
    out.residuals.assign(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        out.values[i] = a(i, i);
        for (std::size_t r = 0; r < d; ++r) out.vectors(i, r) = evec(r, i);
        flip_largest_component_positive(out.vectors.row(i));
    }
    sort_pairs_descending(out);
    for (std::size_t i = 0; i < d; ++i)
        out.residuals[i] = residual_norm(c, out.vectors.row(i), out.values[i]);
    return out;
}

DenseMatrix project_onto_subspace(const DenseMatrix& grad, const DenseMatrix& vectors) {
    if (vectors.cols != grad.rows)
        throw std::invalid_argument("project_onto_subspace: vectors have " +
                                    std::to_string(vectors.cols) + " columns but gradient has " +
                                    std::to_string(grad.rows) + " rows");
    DenseMatrix out(grad.rows, grad.cols);
    std::vector<double> coef;
    for (std::size_t i = 0; i < vectors.rows; ++i) {
        auto e = vectors.row(i);
        coef = matvec_t(grad, e);  // e^T grad
        add_outer(out, 1.0, e, coef);
    }
    return out;
}

double operator_top_eigenvalue(std::size_t dim,
                               const std::function<void(std::span<const double>, std::span<double>)>& apply,
                               std::size_t iters, Rng& rng, std::vector<double>* out_vector) {
    if (dim == 0) throw std::invalid_argument("operator_top_eigenvalue: zero dimension");
    if (iters == 0) throw std::invalid_argument("operator_top_eigenvalue: need at least one iteration");
    std::vector<double> v(dim), w(dim);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    normalize(std::span<double>(v));
    for (std::size_t it = 0; it < iters; ++it) {
        apply(v, w);
        if (normalize(std::span<double>(w)) <= 1e-300) break;
        std::swap(v, w);
    }
    apply(v, w);
    double value = dot(v, w);
    if (out_vector) *out_vector = v;
    return value;
}

}  // namespace dsbp::linalg

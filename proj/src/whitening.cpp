#include "madapt/whitening.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <vector>

namespace madapt {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// (cov + eps*I)^(-1/2) by symmetric eigendecomposition; returned as a
// constant, so exact-mode whitening does not backpropagate through the
// matrix function itself.
Tensor eigen_isqrt_constant(const Tensor& a) {
    const std::int64_t c = a.dim(0);
    Eigen::Map<const RowMat> am(a.raw().data(), c, c);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(am);
    if (solver.info() != Eigen::Success) {
        throw NumericError("zca_whiten: eigendecomposition did not converge");
    }
    const Eigen::VectorXd evals = solver.eigenvalues();
    if (evals.minCoeff() <= 0.0) {
        throw NumericError("zca_whiten: covariance not positive definite; increase eps");
    }
    Eigen::MatrixXd w = solver.eigenvectors() *
                        evals.array().rsqrt().matrix().asDiagonal() *
                        solver.eigenvectors().transpose();
    Tensor out = Tensor::zeros({c, c});
    Eigen::Map<RowMat>(out.raw().data(), c, c) = w;
    return out;
}

Tensor whiten_matrix(const Tensor& m, const WhitenConfig& cfg) {
    const std::int64_t c = m.dim(0), n = m.dim(1);
    Tensor centered = center_rows(m);
    Tensor cov = mul_scalar(row_gram(centered), 1.0 / static_cast<double>(n));
    Tensor regularized = add(cov, Tensor::identity(c, cfg.eps));
    Tensor isqrt = cfg.mode == WhitenConfig::Mode::iterative
                       ? isqrt_newton_schulz(regularized, cfg.ns_iters)
                       : eigen_isqrt_constant(regularized);
    return matmul(isqrt, centered);
}

}  // namespace

void WhitenConfig::validate() const {
    if (!(eps > 0.0)) {
        throw ConfigError("WhitenConfig: eps must be positive");
    }
    if (ns_iters < 1) {
        throw ConfigError("WhitenConfig: ns_iters must be at least 1");
    }
}

Tensor covariance(const Tensor& x) {
    if (x.rank() != 2) {
        throw DimensionError("covariance: expected C x N matrix, got " + shape_str(x.shape()));
    }
    const double n = static_cast<double>(x.dim(1));
    return mul_scalar(row_gram(center_rows(x)), 1.0 / n);
}

Tensor isqrt_newton_schulz(const Tensor& a, int iters) {
    if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
        throw DimensionError("isqrt_newton_schulz: expected a square matrix, got " +
                             shape_str(a.shape()));
    }
    if (iters < 1) {
        throw ContractError("isqrt_newton_schulz: iteration count must be at least 1");
    }
    const std::int64_t c = a.dim(0);

    Tensor norm = matrix_one_norm(a);
    if (norm.item() == 0.0) {
        throw NumericError("isqrt_newton_schulz: zero matrix");
    }
    Tensor y = div_scalar_tensor(a, norm);
    Tensor z = Tensor::identity(c);
    const Tensor three_eye = Tensor::identity(c, 3.0);

    double prev_residual = 0.0;
    for (int k = 0; k < iters; ++k) {
        Tensor zy = matmul(z, y);

        // For SPD input the eigenvalues of z*y stay within (0, 1], so the
        // residual is bounded by 1; growth past that means divergence.
        double residual = 0.0;
        for (std::int64_t i = 0; i < c; ++i) {
            for (std::int64_t j = 0; j < c; ++j) {
                const double target = (i == j) ? 1.0 : 0.0;
                residual = std::max(residual, std::abs(zy.at(i * c + j) - target));
            }
        }
        if (!std::isfinite(residual) || (residual > 2.0 && residual >= prev_residual && k > 0)) {
            throw NumericError(
                "isqrt_newton_schulz: iteration diverging; input is not SPD or eps is too small");
        }
        prev_residual = residual;

        Tensor t = mul_scalar(sub(three_eye, zy), 0.5);
        y = matmul(y, t);
        z = matmul(t, z);
    }
    return div_scalar_tensor(z, sqrt_elem(norm));
}

Tensor zca_whiten(const Tensor& x, const WhitenConfig& cfg) {
    cfg.validate();
    if (x.rank() == 3) {
        const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
        Tensor flat = reshape(x, {c, h * w});
        return reshape(whiten_matrix(flat, cfg), {c, h, w});
    }
    if (x.rank() != 4) {
        throw DimensionError("zca_whiten: expected C x H x W or B x C x H x W, got " +
                             shape_str(x.shape()));
    }
    const std::int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    std::vector<Tensor> whitened;
    whitened.reserve(static_cast<std::size_t>(b));
    for (std::int64_t i = 0; i < b; ++i) {
        Tensor flat = reshape(slice_batch(x, i), {c, h * w});
        whitened.push_back(reshape(whiten_matrix(flat, cfg), {1, c, h, w}));
    }
    return b == 1 ? whitened.front() : stack_batch(whitened);
}

}  // namespace madapt

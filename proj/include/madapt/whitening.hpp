#pragma once

#include "madapt/tensor.hpp"

namespace madapt {

// ZCA whitening of feature maps. The iterative mode runs a coupled
// Newton-Schulz inverse-square-root iteration built from recorded tensor ops,
// so gradients flow through it; the exact mode uses a symmetric
// eigendecomposition and treats the whitening matrix as a constant.
struct WhitenConfig {
    enum class Mode { exact, iterative };

    double eps = 1e-5;
    int ns_iters = 15;
    Mode mode = Mode::iterative;

    void validate() const;
};

// (x - mean) * (x - mean)^T / N for a C x N matrix; mean per row. The result
// is symmetric bit-exactly.
Tensor covariance(const Tensor& x);

// Y ~= a^(-1/2) for a symmetric positive definite matrix. The input is
// normalized internally by its induced 1-norm, so multiples of the identity
// are exact fixed points of the iteration.
Tensor isqrt_newton_schulz(const Tensor& a, int iters);

// Centers each channel over spatial positions and applies
// (cov + eps*I)^(-1/2) across channels. Accepts C x H x W or B x C x H x W
// (whitening is per sample); the channel means are not re-added.
Tensor zca_whiten(const Tensor& x, const WhitenConfig& cfg);

}  // namespace madapt

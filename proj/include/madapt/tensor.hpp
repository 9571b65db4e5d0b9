#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "madapt/errors.hpp"

namespace madapt {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorStorage {
    Shape shape;
    Eigen::ArrayXd values;
    bool requires_grad = false;

    // Persistent gradient accumulator (dLoss/dTensor), summed across
    // backward passes until zero_grad().
    Eigen::ArrayXd grad;
    bool has_grad = false;

    // Scratch adjoint used by a single Graph::backward sweep.
    Eigen::ArrayXd adjoint;
};

using StoragePtr = std::shared_ptr<TensorStorage>;

}  // namespace detail

// Dense n-dimensional array of 64-bit floats, row-major, with value-handle
// semantics: copying a Tensor shares the underlying storage. Operations on
// tensors are free functions; when a Graph is installed (see GraphScope) and
// an input requires gradients, each op records the closure that replays its
// adjoint.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    // n-by-n scaled identity matrix (a constant; never requires grad).
    static Tensor identity(std::int64_t n, double scale = 1.0);
    static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                        bool requires_grad = false);

    bool defined() const { return static_cast<bool>(s_); }
    const Shape& shape() const;
    std::size_t rank() const;
    std::int64_t dim(std::size_t axis) const;
    std::int64_t size() const;
    bool requires_grad() const;
    void set_requires_grad(bool value);

    // Scalar extraction; ContractError unless size() == 1.
    double item() const;
    double at(std::int64_t flat_index) const;

    Eigen::ArrayXd& raw();
    const Eigen::ArrayXd& raw() const;

    bool has_grad() const;
    const Eigen::ArrayXd& grad() const;  // ContractError when no grad populated
    void zero_grad();

    // Deep copy of values (and requires_grad flag for clone()).
    Tensor clone() const;
    Tensor detach() const;

    detail::StoragePtr storage() const { return s_; }

  private:
    explicit Tensor(detail::StoragePtr s) : s_(std::move(s)) {}
    void require_defined() const;

    detail::StoragePtr s_;
};

// Ordered record of executed operations. Ops append themselves in execution
// order, so the tape is topologically sorted by construction and the reverse
// sweep visits every record exactly once.
class Graph {
  public:
    // Runs reverse-mode accumulation from a scalar loss. Each call computes
    // fresh adjoints for the whole tape and adds them into the persistent
    // grad buffers, so two backward calls without zero_grad double every
    // gradient.
    void backward(const Tensor& loss);

    std::size_t op_count() const { return steps_.size(); }

    void record(std::function<void()> fn, std::vector<detail::StoragePtr> touched);

  private:
    std::vector<std::function<void()>> steps_;
    std::vector<detail::StoragePtr> touched_;
};

// RAII installation of the active tape for the current thread.
class GraphScope {
  public:
    explicit GraphScope(Graph& graph);
    ~GraphScope();
    GraphScope(const GraphScope&) = delete;
    GraphScope& operator=(const GraphScope&) = delete;

  private:
    Graph* previous_;
};

Graph* active_graph();

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor sqrt_elem(const Tensor& a);

// x scaled by a one-element tensor (the scalar participates in the graph).
Tensor mul_scalar_tensor(const Tensor& x, const Tensor& s);
Tensor div_scalar_tensor(const Tensor& x, const Tensor& s);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x * x^T for a rank-2 input, mirrored so the result is symmetric bit-exactly.
Tensor row_gram(const Tensor& x);
// Subtracts each row's mean from the row (rank-2 input).
Tensor center_rows(const Tensor& x);
// max_j sum_i |a(i,j)| as a scalar tensor.
Tensor matrix_one_norm(const Tensor& a);

// ---- shape ----
Tensor reshape(const Tensor& a, Shape new_shape);
Tensor slice_batch(const Tensor& x, std::int64_t index);
Tensor stack_batch(const std::vector<Tensor>& parts);

// ---- neural-net ops ----
// Cross-correlation (no kernel flip), zero padding.
// x: B x C x H x W, kernel: O x C x kh x kw.
Tensor conv2d(const Tensor& x, const Tensor& kernel, std::int64_t stride, std::int64_t padding);
Tensor bias_add(const Tensor& x, const Tensor& bias);
Tensor softmax_rows(const Tensor& x);
Tensor upsample2_nearest(const Tensor& x);
// Per-sample, per-channel mean and population variance over spatial positions.
std::pair<Tensor, Tensor> channel_stats(const Tensor& x);

// ---- reductions ----
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
// sqrt(sum of squares) over all non-batch axes; output has shape {B}.
// Subgradient 0 at the origin.
Tensor l2_norm_per_sample(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a deterministic scalar function of x. x must be a leaf; its values are
// perturbed in place and restored.
double finite_diff_check(const std::function<Tensor()>& f, Tensor x, double h = 1e-5);

}  // namespace madapt

#include "madapt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace madapt {

namespace {

using detail::StoragePtr;
using detail::TensorStorage;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

thread_local Graph* g_active_graph = nullptr;

MatMap as_matrix(Eigen::ArrayXd& buf, std::int64_t rows, std::int64_t cols) {
    return MatMap(buf.data(), rows, cols);
}

ConstMatMap as_matrix(const Eigen::ArrayXd& buf, std::int64_t rows, std::int64_t cols) {
    return ConstMatMap(buf.data(), rows, cols);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             " tensor, got " + shape_str(t.shape()));
    }
}

void require_scalar_tensor(const Tensor& s, const char* op) {
    if (s.size() != 1) {
        throw DimensionError(std::string(op) + ": expected one-element tensor, got " +
                             shape_str(s.shape()));
    }
}

bool should_record(const Tensor& out) { return g_active_graph != nullptr && out.requires_grad(); }

}  // namespace

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out << "x";
        }
        out << shape[i];
    }
    out << "]";
    return out.str();
}

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    for (auto d : shape) {
        if (d <= 0) {
            throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
        }
    }
    auto s = std::make_shared<TensorStorage>();
    s->shape = std::move(shape);
    s->values = Eigen::ArrayXd::Zero(numel(s->shape));
    s->requires_grad = requires_grad;
    return Tensor(std::move(s));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    t.raw().setConstant(value);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (numel(shape) != static_cast<std::int64_t>(data.size())) {
        throw DimensionError("from_data: " + shape_str(shape) + " needs " +
                             std::to_string(numel(shape)) + " values, got " +
                             std::to_string(data.size()));
    }
    Tensor t = zeros(std::move(shape), requires_grad);
    std::copy(data.begin(), data.end(), t.raw().data());
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return full({1}, value, requires_grad);
}

Tensor Tensor::identity(std::int64_t n, double scale) {
    Tensor t = zeros({n, n});
    for (std::int64_t i = 0; i < n; ++i) {
        t.raw()[i * n + i] = scale;
    }
    return t;
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::normal_distribution<double> dist(0.0, stddev);
    for (std::int64_t i = 0; i < t.size(); ++i) {
        t.raw()[i] = dist(rng);
    }
    return t;
}

void Tensor::require_defined() const {
    if (!s_) {
        throw ContractError("operation on an undefined tensor");
    }
}

const Shape& Tensor::shape() const {
    require_defined();
    return s_->shape;
}

std::size_t Tensor::rank() const { return shape().size(); }

std::int64_t Tensor::dim(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    return s[axis];
}

std::int64_t Tensor::size() const {
    require_defined();
    return s_->values.size();
}

bool Tensor::requires_grad() const {
    require_defined();
    return s_->requires_grad;
}

void Tensor::set_requires_grad(bool value) {
    require_defined();
    s_->requires_grad = value;
}

double Tensor::item() const {
    if (size() != 1) {
        throw ContractError("item(): tensor has " + std::to_string(size()) + " elements");
    }
    return s_->values[0];
}

double Tensor::at(std::int64_t flat_index) const {
    require_defined();
    if (flat_index < 0 || flat_index >= size()) {
        throw DimensionError("flat index " + std::to_string(flat_index) + " out of range");
    }
    return s_->values[flat_index];
}

Eigen::ArrayXd& Tensor::raw() {
    require_defined();
    return s_->values;
}

const Eigen::ArrayXd& Tensor::raw() const {
    require_defined();
    return s_->values;
}

bool Tensor::has_grad() const {
    require_defined();
    return s_->has_grad;
}

const Eigen::ArrayXd& Tensor::grad() const {
    require_defined();
    if (!s_->has_grad) {
        throw ContractError("grad(): no gradient populated; run backward first");
    }
    return s_->grad;
}

void Tensor::zero_grad() {
    require_defined();
    s_->grad.resize(0);
    s_->has_grad = false;
}

Tensor Tensor::clone() const {
    require_defined();
    auto s = std::make_shared<TensorStorage>();
    s->shape = s_->shape;
    s->values = s_->values;
    s->requires_grad = s_->requires_grad;
    return Tensor(std::move(s));
}

Tensor Tensor::detach() const {
    Tensor t = clone();
    t.set_requires_grad(false);
    return t;
}

// ---- Graph ----

void Graph::record(std::function<void()> fn, std::vector<StoragePtr> touched) {
    steps_.push_back(std::move(fn));
    for (auto& s : touched) {
        touched_.push_back(std::move(s));
    }
}

void Graph::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward: loss must be a scalar tensor");
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward: loss is not connected to any tensor requiring gradients");
    }

    std::unordered_set<TensorStorage*> seen;
    seen.reserve(touched_.size() + 1);
    std::vector<StoragePtr> unique;
    unique.reserve(touched_.size() + 1);
    for (const auto& s : touched_) {
        if (seen.insert(s.get()).second) {
            unique.push_back(s);
        }
    }
    StoragePtr loss_storage = loss.storage();
    if (seen.insert(loss_storage.get()).second) {
        unique.push_back(loss_storage);
    }

    for (const auto& s : unique) {
        s->adjoint = Eigen::ArrayXd::Zero(s->values.size());
    }
    loss_storage->adjoint[0] = 1.0;

    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
        (*it)();
    }

    for (const auto& s : unique) {
        if (!s->requires_grad) {
            continue;
        }
        if (!s->has_grad) {
            s->grad = Eigen::ArrayXd::Zero(s->values.size());
            s->has_grad = true;
        }
        s->grad += s->adjoint;
    }
}

GraphScope::GraphScope(Graph& graph) : previous_(g_active_graph) { g_active_graph = &graph; }

GraphScope::~GraphScope() { g_active_graph = previous_; }

Graph* active_graph() { return g_active_graph; }

// ---- elementwise ops ----

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape(), a.requires_grad() || b.requires_grad());
    out.raw() = a.raw() + b.raw();
    if (should_record(out)) {
        auto sa = a.storage(), sb = b.storage(), so = out.storage();
        active_graph()->record(
            [sa, sb, so] {
                if (sa->requires_grad) sa->adjoint += so->adjoint;
                if (sb->requires_grad) sb->adjoint += so->adjoint;
            },
            {sa, sb, so});
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape(), a.requires_grad() || b.requires_grad());
    out.raw() = a.raw() - b.raw();
    if (should_record(out)) {
        auto sa = a.storage(), sb = b.storage(), so = out.storage();
        active_graph()->record(
            [sa, sb, so] {
                if (sa->requires_grad) sa->adjoint += so->adjoint;
                if (sb->requires_grad) sb->adjoint -= so->adjoint;
            },
            {sa, sb, so});
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape(), a.requires_grad() || b.requires_grad());
    out.raw() = a.raw() * b.raw();
    if (should_record(out)) {
        auto sa = a.storage(), sb = b.storage(), so = out.storage();
        active_graph()->record(
            [sa, sb, so] {
                if (sa->requires_grad) sa->adjoint += so->adjoint * sb->values;
                if (sb->requires_grad) sb->adjoint += so->adjoint * sa->values;
            },
            {sa, sb, so});
    }
    return out;
}

Tensor neg(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape(), a.requires_grad());
    out.raw() = -a.raw();
    if (should_record(out)) {
        auto sa = a.storage(), so = out.storage();
        active_graph()->record([sa, so] { sa->adjoint -= so->adjoint; }, {sa, so});
    }
    return out;
}

Tensor add_scalar(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape(), a.requires_grad());
    out.raw() = a.raw() + c;
    if (should_record(out)) {
        auto sa = a.storage(), so = out.storage();
        active_graph()->record([sa, so] { sa->adjoint += so->adjoint; }, {sa, so});
    }
    return out;
}

Tensor mul_scalar(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape(), a.requires_grad());
    out.raw() = a.raw() * c;
    if (should_record(out)) {
        auto sa = a.storage(), so = out.storage();
        active_graph()->record([sa, so, c] { sa->adjoint += so->adjoint * c; }, {sa, so});
    }
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape(), a.requires_grad());
    out.raw() = a.raw().max(0.0);
    if (should_record(out)) {
        auto sa = a.storage(), so = out.storage();
        active_graph()->record(
            [sa, so] {
                sa->adjoint += so->adjoint * (sa->values > 0.0).cast<double>();
            },
            {sa, so});
    }
    return out;
}

Tensor sqrt_elem(const Tensor& a) {
    if ((a.raw() < 0.0).any()) {
        throw NumericError("sqrt_elem: negative input");
    }
    Tensor out = Tensor::zeros(a.shape(), a.requires_grad());
    out.raw() = a.raw().sqrt();
    if (should_record(out)) {
        auto sa = a.storage(), so = out.storage();
        active_graph()->record(
            [sa, so] { sa->adjoint += so->adjoint * 0.5 / so->values; },
            {sa, so});
    }
    return out;
}

Tensor mul_scalar_tensor(const Tensor& x, const Tensor& s) {
    require_scalar_tensor(s, "mul_scalar_tensor");
    Tensor out = Tensor::zeros(x.shape(), x.requires_grad() || s.requires_grad());
    out.raw() = x.raw() * s.item();
    if (should_record(out)) {
        auto sx = x.storage(), ss = s.storage(), so = out.storage();
        active_graph()->record(
            [sx, ss, so] {
                if (sx->requires_grad) sx->adjoint += so->adjoint * ss->values[0];
                if (ss->requires_grad) ss->adjoint[0] += (so->adjoint * sx->values).sum();
            },
            {sx, ss, so});
    }
    return out;
}

Tensor div_scalar_tensor(const Tensor& x, const Tensor& s) {
    require_scalar_tensor(s, "div_scalar_tensor");
    const double sv = s.item();
    if (sv == 0.0) {
        throw NumericError("div_scalar_tensor: division by zero");
    }
    Tensor out = Tensor::zeros(x.shape(), x.requires_grad() || s.requires_grad());
    out.raw() = x.raw() / sv;
    if (should_record(out)) {
        auto sx = x.storage(), ss = s.storage(), so = out.storage();
        active_graph()->record(
            [sx, ss, so] {
                const double d = ss->values[0];
                if (sx->requires_grad) sx->adjoint += so->adjoint / d;
                if (ss->requires_grad) {
                    ss->adjoint[0] += -(so->adjoint * sx->values).sum() / (d * d);
                }
            },
            {sx, ss, so});
    }
    return out;
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros({m, n}, a.requires_grad() || b.requires_grad());
    as_matrix(out.raw(), m, n).noalias() = as_matrix(a.raw(), m, k) * as_matrix(b.raw(), k, n);
    if (should_record(out)) {
        auto sa = a.storage(), sb = b.storage(), so = out.storage();
        active_graph()->record(
            [sa, sb, so, m, k, n] {
                auto g = as_matrix(so->adjoint, m, n);
                if (sa->requires_grad) {
                    as_matrix(sa->adjoint, m, k).noalias() +=
                        g * as_matrix(sb->values, k, n).transpose();
                }
                if (sb->requires_grad) {
                    as_matrix(sb->adjoint, k, n).noalias() +=
                        as_matrix(sa->values, m, k).transpose() * g;
                }
            },
            {sa, sb, so});
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const std::int64_t r = a.dim(0), c = a.dim(1);
    Tensor out = Tensor::zeros({c, r}, a.requires_grad());
    as_matrix(out.raw(), c, r) = as_matrix(a.raw(), r, c).transpose();
    if (should_record(out)) {
        auto sa = a.storage(), so = out.storage();
        active_graph()->record(
            [sa, so, r, c] {
                as_matrix(sa->adjoint, r, c) += as_matrix(so->adjoint, c, r).transpose();
            },
            {sa, so});
    }
    return out;
}

Tensor row_gram(const Tensor& x) {
    require_rank(x, 2, "row_gram");
    const std::int64_t r = x.dim(0), c = x.dim(1);
    Tensor out = Tensor::zeros({r, r}, x.requires_grad());
    auto xm = as_matrix(x.raw(), r, c);
    auto om = as_matrix(out.raw(), r, r);
    // Fill the upper triangle and mirror so out == out^T holds bit-exactly.
    for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = i; j < r; ++j) {
            const double v = xm.row(i).dot(xm.row(j));
            om(i, j) = v;
            om(j, i) = v;
        }
    }
    if (should_record(out)) {
        auto sx = x.storage(), so = out.storage();
        active_graph()->record(
            [sx, so, r, c] {
                auto g = as_matrix(so->adjoint, r, r);
                as_matrix(sx->adjoint, r, c).noalias() +=
                    (g + g.transpose()) * as_matrix(sx->values, r, c);
            },
            {sx, so});
    }
    return out;
}

Tensor center_rows(const Tensor& x) {
    require_rank(x, 2, "center_rows");
    const std::int64_t r = x.dim(0), c = x.dim(1);
    Tensor out = Tensor::zeros({r, c}, x.requires_grad());
    auto xm = as_matrix(x.raw(), r, c);
    auto om = as_matrix(out.raw(), r, c);
    om = xm.colwise() - xm.rowwise().mean();
    if (should_record(out)) {
        auto sx = x.storage(), so = out.storage();
        active_graph()->record(
            [sx, so, r, c] {
                auto g = as_matrix(so->adjoint, r, c);
                as_matrix(sx->adjoint, r, c) += g.colwise() - g.rowwise().mean();
            },
            {sx, so});
    }
    return out;
}

Tensor matrix_one_norm(const Tensor& a) {
    require_rank(a, 2, "matrix_one_norm");
    const std::int64_t r = a.dim(0), c = a.dim(1);
    auto am = as_matrix(a.raw(), r, c);
    std::int64_t arg = 0;
    double best = -1.0;
    for (std::int64_t j = 0; j < c; ++j) {
        const double s = am.col(j).cwiseAbs().sum();
        if (s > best) {
            best = s;
            arg = j;
        }
    }
    Tensor out = Tensor::scalar(best, false);
    out.set_requires_grad(a.requires_grad());
    if (should_record(out)) {
        auto sa = a.storage(), so = out.storage();
        active_graph()->record(
            [sa, so, r, c, arg] {
                const double g = so->adjoint[0];
                auto am2 = as_matrix(sa->values, r, c);
                auto ga = as_matrix(sa->adjoint, r, c);
                for (std::int64_t i = 0; i < r; ++i) {
                    const double v = am2(i, arg);
                    ga(i, arg) += g * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
                }
            },
            {sa, so});
    }
    return out;
}

// ---- shape ops ----

Tensor reshape(const Tensor& a, Shape new_shape) {
    if (numel(new_shape) != a.size()) {
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                             shape_str(new_shape));
    }
    Tensor out = Tensor::zeros(std::move(new_shape), a.requires_grad());
    out.raw() = a.raw();
    if (should_record(out)) {
        auto sa = a.storage(), so = out.storage();
        active_graph()->record([sa, so] { sa->adjoint += so->adjoint; }, {sa, so});
    }
    return out;
}

Tensor slice_batch(const Tensor& x, std::int64_t index) {
    if (x.rank() < 1) {
        throw DimensionError("slice_batch: scalar input");
    }
    const std::int64_t b = x.dim(0);
    if (index < 0 || index >= b) {
        throw DimensionError("slice_batch: index " + std::to_string(index) + " out of range for " +
                             shape_str(x.shape()));
    }
    Shape out_shape = x.shape();
    out_shape[0] = 1;
    const std::int64_t block = x.size() / b;
    Tensor out = Tensor::zeros(out_shape, x.requires_grad());
    out.raw() = x.raw().segment(index * block, block);
    if (should_record(out)) {
        auto sx = x.storage(), so = out.storage();
        active_graph()->record(
            [sx, so, index, block] {
                sx->adjoint.segment(index * block, block) += so->adjoint;
            },
            {sx, so});
    }
    return out;
}

Tensor stack_batch(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw ContractError("stack_batch: no parts");
    }
    for (const auto& p : parts) {
        if (p.rank() < 1 || p.dim(0) != 1) {
            throw DimensionError("stack_batch: each part must have a leading dimension of 1");
        }
        if (p.shape() != parts.front().shape()) {
            throw DimensionError("stack_batch: shape mismatch " + shape_str(p.shape()) + " vs " +
                                 shape_str(parts.front().shape()));
        }
    }
    Shape out_shape = parts.front().shape();
    out_shape[0] = static_cast<std::int64_t>(parts.size());
    const std::int64_t block = parts.front().size();
    bool req = false;
    for (const auto& p : parts) {
        req = req || p.requires_grad();
    }
    Tensor out = Tensor::zeros(out_shape, req);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        out.raw().segment(static_cast<std::int64_t>(i) * block, block) = parts[i].raw();
    }
    if (should_record(out)) {
        std::vector<StoragePtr> srcs;
        srcs.reserve(parts.size());
        for (const auto& p : parts) {
            srcs.push_back(p.storage());
        }
        auto so = out.storage();
        std::vector<StoragePtr> touched = srcs;
        touched.push_back(so);
        active_graph()->record(
            [srcs, so, block] {
                for (std::size_t i = 0; i < srcs.size(); ++i) {
                    if (srcs[i]->requires_grad) {
                        srcs[i]->adjoint +=
                            so->adjoint.segment(static_cast<std::int64_t>(i) * block, block);
                    }
                }
            },
            std::move(touched));
    }
    return out;
}

// ---- neural-net ops ----

namespace {

// Gathers zero-padded k x k patches into a (C*kh*kw) x (H_out*W_out) matrix.
Eigen::MatrixXd im2col(const double* x, std::int64_t channels, std::int64_t h, std::int64_t w,
                       std::int64_t kh, std::int64_t kw, std::int64_t stride,
                       std::int64_t padding, std::int64_t h_out, std::int64_t w_out) {
    Eigen::MatrixXd patches = Eigen::MatrixXd::Zero(channels * kh * kw, h_out * w_out);
    for (std::int64_t c = 0; c < channels; ++c) {
        for (std::int64_t dy = 0; dy < kh; ++dy) {
            for (std::int64_t dx = 0; dx < kw; ++dx) {
                const std::int64_t row = (c * kh + dy) * kw + dx;
                for (std::int64_t oy = 0; oy < h_out; ++oy) {
                    const std::int64_t iy = oy * stride - padding + dy;
                    if (iy < 0 || iy >= h) {
                        continue;
                    }
                    for (std::int64_t ox = 0; ox < w_out; ++ox) {
                        const std::int64_t ix = ox * stride - padding + dx;
                        if (ix < 0 || ix >= w) {
                            continue;
                        }
                        patches(row, oy * w_out + ox) = x[(c * h + iy) * w + ix];
                    }
                }
            }
        }
    }
    return patches;
}

void col2im_accumulate(const Eigen::MatrixXd& cols, double* dst, std::int64_t channels,
                       std::int64_t h, std::int64_t w, std::int64_t kh, std::int64_t kw,
                       std::int64_t stride, std::int64_t padding, std::int64_t h_out,
                       std::int64_t w_out) {
    for (std::int64_t c = 0; c < channels; ++c) {
        for (std::int64_t dy = 0; dy < kh; ++dy) {
            for (std::int64_t dx = 0; dx < kw; ++dx) {
                const std::int64_t row = (c * kh + dy) * kw + dx;
                for (std::int64_t oy = 0; oy < h_out; ++oy) {
                    const std::int64_t iy = oy * stride - padding + dy;
                    if (iy < 0 || iy >= h) {
                        continue;
                    }
                    for (std::int64_t ox = 0; ox < w_out; ++ox) {
                        const std::int64_t ix = ox * stride - padding + dx;
                        if (ix < 0 || ix >= w) {
                            continue;
                        }
                        dst[(c * h + iy) * w + ix] += cols(row, oy * w_out + ox);
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, std::int64_t stride, std::int64_t padding) {
    require_rank(x, 4, "conv2d");
    require_rank(kernel, 4, "conv2d kernel");
    if (stride <= 0) {
        throw ContractError("conv2d: stride must be positive");
    }
    if (padding < 0) {
        throw ContractError("conv2d: padding must be non-negative");
    }
    const std::int64_t batch = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t c_out = kernel.dim(0), kc = kernel.dim(1), kh = kernel.dim(2),
                       kw = kernel.dim(3);
    if (kc != c_in) {
        throw DimensionError("conv2d: input channels " + shape_str(x.shape()) +
                             " do not match kernel " + shape_str(kernel.shape()));
    }
    if (kh > h + 2 * padding || kw > w + 2 * padding) {
        throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) +
                             " larger than padded input " + shape_str(x.shape()));
    }
    const std::int64_t h_out = (h + 2 * padding - kh) / stride + 1;
    const std::int64_t w_out = (w + 2 * padding - kw) / stride + 1;

    Tensor out = Tensor::zeros({batch, c_out, h_out, w_out},
                               x.requires_grad() || kernel.requires_grad());
    auto kmat = as_matrix(kernel.raw(), c_out, c_in * kh * kw);
    auto patches = std::make_shared<std::vector<Eigen::MatrixXd>>();
    patches->reserve(batch);
    const std::int64_t in_block = c_in * h * w;
    const std::int64_t out_block = c_out * h_out * w_out;
    for (std::int64_t b = 0; b < batch; ++b) {
        patches->push_back(im2col(x.raw().data() + b * in_block, c_in, h, w, kh, kw, stride,
                                  padding, h_out, w_out));
        MatMap ob(out.raw().data() + b * out_block, c_out, h_out * w_out);
        ob.noalias() = kmat * patches->back();
    }

    if (should_record(out)) {
        auto sx = x.storage(), sk = kernel.storage(), so = out.storage();
        active_graph()->record(
            [sx, sk, so, patches, batch, c_in, h, w, c_out, kh, kw, stride, padding, h_out,
             w_out, in_block, out_block] {
                auto km = as_matrix(sk->values, c_out, c_in * kh * kw);
                for (std::int64_t b = 0; b < batch; ++b) {
                    ConstMatMap gb(so->adjoint.data() + b * out_block, c_out, h_out * w_out);
                    if (sk->requires_grad) {
                        as_matrix(sk->adjoint, c_out, c_in * kh * kw).noalias() +=
                            gb * (*patches)[static_cast<std::size_t>(b)].transpose();
                    }
                    if (sx->requires_grad) {
                        Eigen::MatrixXd dcols = km.transpose() * gb;
                        col2im_accumulate(dcols, sx->adjoint.data() + b * in_block, c_in, h, w,
                                          kh, kw, stride, padding, h_out, w_out);
                    }
                }
            },
            {sx, sk, so});
    } else {
        patches->clear();
    }
    return out;
}

Tensor bias_add(const Tensor& x, const Tensor& bias) {
    require_rank(x, 4, "bias_add");
    require_rank(bias, 1, "bias_add bias");
    const std::int64_t batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (bias.dim(0) != c) {
        throw DimensionError("bias_add: bias " + shape_str(bias.shape()) +
                             " does not match channels of " + shape_str(x.shape()));
    }
    Tensor out = Tensor::zeros(x.shape(), x.requires_grad() || bias.requires_grad());
    const std::int64_t hw = h * w;
    for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            out.raw().segment((b * c + ch) * hw, hw) =
                x.raw().segment((b * c + ch) * hw, hw) + bias.raw()[ch];
        }
    }
    if (should_record(out)) {
        auto sx = x.storage(), sb = bias.storage(), so = out.storage();
        active_graph()->record(
            [sx, sb, so, batch, c, hw] {
                if (sx->requires_grad) sx->adjoint += so->adjoint;
                if (sb->requires_grad) {
                    for (std::int64_t b = 0; b < batch; ++b) {
                        for (std::int64_t ch = 0; ch < c; ++ch) {
                            sb->adjoint[ch] += so->adjoint.segment((b * c + ch) * hw, hw).sum();
                        }
                    }
                }
            },
            {sx, sb, so});
    }
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    require_rank(x, 2, "softmax_rows");
    if (!x.raw().isFinite().all()) {
        throw NumericError("softmax_rows: non-finite input");
    }
    const std::int64_t r = x.dim(0), c = x.dim(1);
    Tensor out = Tensor::zeros(x.shape(), x.requires_grad());
    auto xm = as_matrix(x.raw(), r, c);
    auto om = as_matrix(out.raw(), r, c);
    for (std::int64_t i = 0; i < r; ++i) {
        const double m = xm.row(i).maxCoeff();
        om.row(i) = (xm.row(i).array() - m).exp();
        om.row(i) /= om.row(i).sum();
    }
    if (should_record(out)) {
        auto sx = x.storage(), so = out.storage();
        active_graph()->record(
            [sx, so, r, c] {
                auto y = as_matrix(so->values, r, c);
                auto g = as_matrix(so->adjoint, r, c);
                auto gx = as_matrix(sx->adjoint, r, c);
                for (std::int64_t i = 0; i < r; ++i) {
                    const double dot = g.row(i).dot(y.row(i));
                    gx.row(i) += (g.row(i).array() - dot).matrix().cwiseProduct(y.row(i));
                }
            },
            {sx, so});
    }
    return out;
}

Tensor upsample2_nearest(const Tensor& x) {
    require_rank(x, 4, "upsample2_nearest");
    const std::int64_t batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor out = Tensor::zeros({batch, c, 2 * h, 2 * w}, x.requires_grad());
    const double* src = x.raw().data();
    double* dst = out.raw().data();
    for (std::int64_t bc = 0; bc < batch * c; ++bc) {
        const double* plane = src + bc * h * w;
        double* oplane = dst + bc * 4 * h * w;
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t xx = 0; xx < w; ++xx) {
                const double v = plane[y * w + xx];
                const std::int64_t base = (2 * y) * (2 * w) + 2 * xx;
                oplane[base] = v;
                oplane[base + 1] = v;
                oplane[base + 2 * w] = v;
                oplane[base + 2 * w + 1] = v;
            }
        }
    }
    if (should_record(out)) {
        auto sx = x.storage(), so = out.storage();
        active_graph()->record(
            [sx, so, batch, c, h, w] {
                for (std::int64_t bc = 0; bc < batch * c; ++bc) {
                    const double* g = so->adjoint.data() + bc * 4 * h * w;
                    double* gx = sx->adjoint.data() + bc * h * w;
                    for (std::int64_t y = 0; y < h; ++y) {
                        for (std::int64_t xx = 0; xx < w; ++xx) {
                            const std::int64_t base = (2 * y) * (2 * w) + 2 * xx;
                            gx[y * w + xx] +=
                                g[base] + g[base + 1] + g[base + 2 * w] + g[base + 2 * w + 1];
                        }
                    }
                }
            },
            {sx, so});
    }
    return out;
}

std::pair<Tensor, Tensor> channel_stats(const Tensor& x) {
    require_rank(x, 4, "channel_stats");
    const std::int64_t batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t n = h * w;
    Tensor mean = Tensor::zeros({batch, c}, x.requires_grad());
    Tensor var = Tensor::zeros({batch, c}, x.requires_grad());
    for (std::int64_t bc = 0; bc < batch * c; ++bc) {
        auto seg = x.raw().segment(bc * n, n);
        const double m = seg.mean();
        mean.raw()[bc] = m;
        var.raw()[bc] = (seg - m).square().sum() / static_cast<double>(n);
    }
    if (active_graph() != nullptr && x.requires_grad()) {
        auto sx = x.storage(), sm = mean.storage(), sv = var.storage();
        active_graph()->record(
            [sx, sm, sv, batch, c, n] {
                for (std::int64_t bc = 0; bc < batch * c; ++bc) {
                    const double gm = sm->adjoint[bc];
                    const double gv = sv->adjoint[bc];
                    const double m = sm->values[bc];
                    const double inv_n = 1.0 / static_cast<double>(n);
                    sx->adjoint.segment(bc * n, n) +=
                        gm * inv_n + (sx->values.segment(bc * n, n) - m) * (2.0 * gv * inv_n);
                }
            },
            {sx, sm, sv});
    }
    return {mean, var};
}

// ---- reductions ----

Tensor sum_all(const Tensor& a) {
    Tensor out = Tensor::scalar(a.raw().sum(), false);
    out.set_requires_grad(a.requires_grad());
    if (should_record(out)) {
        auto sa = a.storage(), so = out.storage();
        active_graph()->record([sa, so] { sa->adjoint += so->adjoint[0]; }, {sa, so});
    }
    return out;
}

Tensor mean_all(const Tensor& a) {
    Tensor out = Tensor::scalar(a.raw().mean(), false);
    out.set_requires_grad(a.requires_grad());
    if (should_record(out)) {
        auto sa = a.storage(), so = out.storage();
        const double inv = 1.0 / static_cast<double>(a.size());
        active_graph()->record([sa, so, inv] { sa->adjoint += so->adjoint[0] * inv; }, {sa, so});
    }
    return out;
}

Tensor l2_norm_per_sample(const Tensor& x) {
    if (x.rank() < 1) {
        throw DimensionError("l2_norm_per_sample: scalar input");
    }
    const std::int64_t batch = x.dim(0);
    const std::int64_t block = x.size() / batch;
    Tensor out = Tensor::zeros({batch}, x.requires_grad());
    for (std::int64_t b = 0; b < batch; ++b) {
        out.raw()[b] = std::sqrt(x.raw().segment(b * block, block).square().sum());
    }
    if (should_record(out)) {
        auto sx = x.storage(), so = out.storage();
        active_graph()->record(
            [sx, so, batch, block] {
                for (std::int64_t b = 0; b < batch; ++b) {
                    const double norm = so->values[b];
                    if (norm == 0.0) {
                        continue;  // subgradient 0 at the origin
                    }
                    sx->adjoint.segment(b * block, block) +=
                        sx->values.segment(b * block, block) * (so->adjoint[b] / norm);
                }
            },
            {sx, so});
    }
    return out;
}

// ---- finite differences ----

double finite_diff_check(const std::function<Tensor()>& f, Tensor x, double h) {
    if (!x.defined()) {
        throw ContractError("finite_diff_check: undefined tensor");
    }
    const bool had_flag = x.requires_grad();
    x.set_requires_grad(true);
    x.zero_grad();

    Eigen::ArrayXd analytic;
    {
        Graph graph;
        GraphScope scope(graph);
        Tensor y = f();
        graph.backward(y);
        analytic = x.grad();
    }
    x.zero_grad();
    x.set_requires_grad(had_flag);

    double worst = 0.0;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const double saved = x.raw()[i];
        x.raw()[i] = saved + h;
        const double up = f().item();
        x.raw()[i] = saved - h;
        const double down = f().item();
        x.raw()[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("finite_diff_check: non-finite function value");
        }
        const double fd = (up - down) / (2.0 * h);
        const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace madapt

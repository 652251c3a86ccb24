#include "tdlm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "tdlm/parallel.hpp"
#include "tdlm/random.hpp"

namespace tdlm {

namespace {

using StridedConstBlock = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;
using StridedBlock = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;

void check_finite(std::span<const double> values, const char* op)
{
    for (double x : values) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string(op) + ": non-finite value in output");
        }
    }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op)
{
    if (!t.defined()) throw ValidationError(std::string(op) + ": undefined tensor");
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             ", got shape " + shape_string(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op)
{
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                             " vs " + shape_string(b.shape()));
    }
}

double clamp_probability(double p) { return std::clamp(p, kProbabilityFloor, 1.0); }

bool inside_clamp(double p) { return p > kProbabilityFloor && p <= 1.0; }

// Row-wise softmax of z / T into out, with max subtraction.
void softmax_rows(std::span<const double> z, std::size_t rows, std::size_t cols, double temperature,
                  std::span<double> out)
{
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = z.data() + r * cols;
        double* o = out.data() + r * cols;
        const double top = *std::max_element(in, in + cols);
        double total = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            o[j] = std::exp((in[j] - top) / temperature);
            total += o[j];
        }
        for (std::size_t j = 0; j < cols; ++j) o[j] /= total;
    }
}

void log_softmax_rows(std::span<const double> z, std::size_t rows, std::size_t cols,
                      double temperature, std::span<double> out)
{
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = z.data() + r * cols;
        double* o = out.data() + r * cols;
        const double top = *std::max_element(in, in + cols);
        double total = 0.0;
        for (std::size_t j = 0; j < cols; ++j) total += std::exp((in[j] - top) / temperature);
        const double log_total = std::log(total);
        for (std::size_t j = 0; j < cols; ++j) o[j] = (in[j] - top) / temperature - log_total;
    }
}

void require_temperature(double temperature, const char* op)
{
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw ParameterError(std::string(op) + ": temperature must be positive");
    }
}

void require_distribution_rows(const Tensor& t, const char* op)
{
    const std::size_t rows = t.rows();
    const std::size_t cols = t.cols();
    for (std::size_t r = 0; r < rows; ++r) {
        double total = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double x = t[r * cols + j];
            if (x < 0.0) throw ValidationError(std::string(op) + ": negative probability");
            total += x;
        }
        if (std::abs(total - 1.0) > 1e-9) {
            std::ostringstream msg;
            msg << op << ": row " << r << " sums to " << total << ", expected 1";
            throw ValidationError(msg.str());
        }
    }
}

} // namespace

std::string shape_string(const Shape& shape)
{
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

std::size_t shape_size(const Shape& shape)
{
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::TensorNode>())
{
    for (std::size_t d : shape) {
        if (d == 0) throw DimensionError("tensor extents must be positive: " + shape_string(shape));
    }
    if (shape_size(shape) != values.size()) {
        throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad)
{
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad)
{
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::from_matrix(const RowMatrix& m, bool requires_grad)
{
    std::vector<double> values(m.data(), m.data() + m.size());
    return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                  std::move(values), requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad)
{
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values), requires_grad);
}

std::size_t Tensor::cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }

std::size_t Tensor::rows() const { return size() / cols(); }

double Tensor::item() const
{
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
}

ConstMatrixView Tensor::matrix() const
{
    return ConstMatrixView(node_->value.data(), static_cast<Eigen::Index>(rows()),
                           static_cast<Eigen::Index>(cols()));
}

MatrixView Tensor::mutable_matrix()
{
    return MatrixView(node_->value.data(), static_cast<Eigen::Index>(rows()),
                      static_cast<Eigen::Index>(cols()));
}

ConstMatrixView Tensor::grad_matrix() const
{
    if (!has_grad()) throw StateError("tensor has no gradient");
    return ConstMatrixView(node_->grad.data(), static_cast<Eigen::Index>(rows()),
                           static_cast<Eigen::Index>(cols()));
}

Tensor Tensor::clone(bool requires_grad) const
{
    return Tensor(node_->shape, node_->value, requires_grad);
}

std::span<double> grad_sink(const Tensor& t)
{
    auto& node = *t.node_;
    if (!node.requires_grad) return {};
    if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
    return node.grad;
}

// ---------------------------------------------------------------------------
// Tape

Tensor Tape::record(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                    BackwardFn fn, const char* op_name)
{
    check_finite(values, op_name);
    Tensor out(std::move(shape), std::move(values));
    if (!recording_) return out;
    const bool needs_grad =
        std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (!needs_grad) return out;
    if (used_) throw StateError(std::string(op_name) + ": tape already consumed by backward");
    out.node_->requires_grad = true;
    entries_.push_back({out.node_, std::move(fn)});
    return out;
}

void Tape::backward(const Tensor& loss)
{
    if (used_) throw StateError("backward: tape already used");
    if (!loss.defined() || loss.size() != 1) {
        throw DimensionError("backward: loss must be scalar, got shape " +
                             (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
    }
    used_ = true;
    if (!loss.requires_grad()) return;
    grad_sink(loss)[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (it->output->grad.empty()) continue;
        it->fn(it->output->grad);
    }
    entries_.clear();
}

Tape& inference_tape()
{
    thread_local Tape tape(false);
    return tape;
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b)
{
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n);
    MatrixView(out.data(), m, n).noalias() = a.matrix() * b.matrix();
    return tape.record({m, n}, std::move(out), {a, b},
        [a, b, m, k, n](std::span<const double> g) {
            ConstMatrixView grad(g.data(), m, n);
            if (auto ga = grad_sink(a); !ga.empty())
                MatrixView(ga.data(), m, k).noalias() += grad * b.matrix().transpose();
            if (auto gb = grad_sink(b); !gb.empty())
                MatrixView(gb.data(), k, n).noalias() += a.matrix().transpose() * grad;
        },
        "matmul");
}

Tensor transpose(Tape& tape, const Tensor& a)
{
    require_rank(a, 2, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    MatrixView(out.data(), n, m) = a.matrix().transpose();
    return tape.record({n, m}, std::move(out), {a},
        [a, m, n](std::span<const double> g) {
            if (auto ga = grad_sink(a); !ga.empty())
                MatrixView(ga.data(), m, n) += ConstMatrixView(g.data(), n, m).transpose();
        },
        "transpose");
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return tape.record(a.shape(), std::move(out), {a, b},
        [a, b](std::span<const double> g) {
            if (auto ga = grad_sink(a); !ga.empty())
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            if (auto gb = grad_sink(b); !gb.empty())
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        },
        "add");
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return tape.record(a.shape(), std::move(out), {a, b},
        [a, b](std::span<const double> g) {
            if (auto ga = grad_sink(a); !ga.empty())
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            if (auto gb = grad_sink(b); !gb.empty())
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        },
        "sub");
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return tape.record(a.shape(), std::move(out), {a, b},
        [a, b](std::span<const double> g) {
            if (auto ga = grad_sink(a); !ga.empty())
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
            if (auto gb = grad_sink(b); !gb.empty())
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
        },
        "mul");
}

Tensor scale(Tape& tape, const Tensor& a, double factor)
{
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
    return tape.record(a.shape(), std::move(out), {a},
        [a, factor](std::span<const double> g) {
            if (auto ga = grad_sink(a); !ga.empty())
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
        },
        "scale");
}

Tensor add_row(Tape& tape, const Tensor& x, const Tensor& bias)
{
    if (bias.size() != x.cols()) {
        throw DimensionError("add_row: bias " + shape_string(bias.shape()) + " vs input " +
                             shape_string(x.shape()));
    }
    const std::size_t rows = x.rows(), cols = x.cols();
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] + bias[c];
    return tape.record(x.shape(), std::move(out), {x, bias},
        [x, bias, rows, cols](std::span<const double> g) {
            if (auto gx = grad_sink(x); !gx.empty())
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            if (auto gb = grad_sink(bias); !gb.empty())
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
        },
        "add_row");
}

Tensor sum(Tape& tape, const Tensor& a)
{
    double total = 0.0;
    for (double x : a.values()) total += x;
    return tape.record({}, {total}, {a},
        [a](std::span<const double> g) {
            if (auto ga = grad_sink(a); !ga.empty())
                for (double& x : ga) x += g[0];
        },
        "sum");
}

Tensor mean(Tape& tape, const Tensor& a)
{
    double total = 0.0;
    for (double x : a.values()) total += x;
    const double n = static_cast<double>(a.size());
    return tape.record({}, {total / n}, {a},
        [a, n](std::span<const double> g) {
            if (auto ga = grad_sink(a); !ga.empty())
                for (double& x : ga) x += g[0] / n;
        },
        "mean");
}

Tensor reshape(Tape& tape, const Tensor& a, Shape shape)
{
    if (shape_size(shape) != a.size()) {
        throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                             shape_string(shape));
    }
    std::vector<double> out(a.values().begin(), a.values().end());
    return tape.record(std::move(shape), std::move(out), {a},
        [a](std::span<const double> g) {
            if (auto ga = grad_sink(a); !ga.empty())
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        },
        "reshape");
}

Tensor gelu(Tape& tape, const Tensor& a)
{
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
    }
    return tape.record(a.shape(), std::move(out), {a},
        [a](std::span<const double> g) {
            auto ga = grad_sink(a);
            if (ga.empty()) return;
            const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double x = a[i];
                const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
                ga[i] += g[i] * (cdf + x * pdf);
            }
        },
        "gelu");
}

Tensor tanh(Tape& tape, const Tensor& a)
{
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
    auto y = std::make_shared<std::vector<double>>(out);
    return tape.record(a.shape(), std::move(out), {a},
        [a, y](std::span<const double> g) {
            if (auto ga = grad_sink(a); !ga.empty())
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - (*y)[i] * (*y)[i]);
        },
        "tanh");
}

// ---------------------------------------------------------------------------
// Indexing

Tensor embedding(Tape& tape, const Tensor& table, std::span<const std::int32_t> ids)
{
    require_rank(table, 2, "embedding");
    const std::size_t vocab = table.dim(0), width = table.dim(1);
    std::vector<double> out(ids.size() * width);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
            throw IndexError("embedding: token id " + std::to_string(ids[i]) +
                             " outside vocabulary of size " + std::to_string(vocab));
        }
        std::copy_n(table.values().data() + static_cast<std::size_t>(ids[i]) * width, width,
                    out.data() + i * width);
    }
    std::vector<std::int32_t> kept(ids.begin(), ids.end());
    return tape.record({ids.size(), width}, std::move(out), {table},
        [table, kept = std::move(kept), width](std::span<const double> g) {
            auto gt = grad_sink(table);
            if (gt.empty()) return;
            for (std::size_t i = 0; i < kept.size(); ++i) {
                double* row = gt.data() + static_cast<std::size_t>(kept[i]) * width;
                for (std::size_t c = 0; c < width; ++c) row[c] += g[i * width + c];
            }
        },
        "embedding");
}

Tensor gather_rows(Tape& tape, const Tensor& x, std::span<const std::size_t> rows)
{
    const std::size_t n = x.rows(), width = x.cols();
    std::vector<double> out(rows.size() * width);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= n) {
            throw IndexError("gather_rows: row " + std::to_string(rows[i]) + " of " +
                             std::to_string(n));
        }
        std::copy_n(x.values().data() + rows[i] * width, width, out.data() + i * width);
    }
    std::vector<std::size_t> kept(rows.begin(), rows.end());
    return tape.record({rows.size(), width}, std::move(out), {x},
        [x, kept = std::move(kept), width](std::span<const double> g) {
            auto gx = grad_sink(x);
            if (gx.empty()) return;
            for (std::size_t i = 0; i < kept.size(); ++i)
                for (std::size_t c = 0; c < width; ++c) gx[kept[i] * width + c] += g[i * width + c];
        },
        "gather_rows");
}

Tensor select_column(Tape& tape, const Tensor& x, std::size_t column)
{
    const std::size_t n = x.rows(), width = x.cols();
    if (column >= width) throw IndexError("select_column: column out of range");
    std::vector<double> out(n);
    for (std::size_t r = 0; r < n; ++r) out[r] = x[r * width + column];
    return tape.record({n}, std::move(out), {x},
        [x, n, width, column](std::span<const double> g) {
            if (auto gx = grad_sink(x); !gx.empty())
                for (std::size_t r = 0; r < n; ++r) gx[r * width + column] += g[r];
        },
        "select_column");
}

// ---------------------------------------------------------------------------
// Normalization and regularization

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps)
{
    const std::size_t rows = x.rows(), cols = x.cols();
    if (gain.size() != cols || bias.size() != cols) {
        throw DimensionError("layer_norm: gain/bias width differs from input " +
                             shape_string(x.shape()));
    }
    std::vector<double> normalized(x.size());
    std::vector<double> inv_std(rows);
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.values().data() + r * cols;
        double mu = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mu += in[c];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mu) * (in[c] - mu);
        var /= static_cast<double>(cols);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < cols; ++c) {
            const double xhat = (in[c] - mu) * inv_std[r];
            normalized[r * cols + c] = xhat;
            out[r * cols + c] = xhat * gain[c] + bias[c];
        }
    }
    return tape.record(x.shape(), std::move(out), {x, gain, bias},
        [x, gain, bias, rows, cols, normalized = std::move(normalized),
         inv_std = std::move(inv_std)](std::span<const double> g) {
            auto gx = grad_sink(x);
            auto gg = grad_sink(gain);
            auto gb = grad_sink(bias);
            std::vector<double> dxhat(cols);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * cols;
                const double* xh = normalized.data() + r * cols;
                if (!gg.empty())
                    for (std::size_t c = 0; c < cols; ++c) gg[c] += gr[c] * xh[c];
                if (!gb.empty())
                    for (std::size_t c = 0; c < cols; ++c) gb[c] += gr[c];
                if (gx.empty()) continue;
                double mean_d = 0.0, mean_dx = 0.0;
                for (std::size_t c = 0; c < cols; ++c) {
                    dxhat[c] = gr[c] * gain[c];
                    mean_d += dxhat[c];
                    mean_dx += dxhat[c] * xh[c];
                }
                mean_d /= static_cast<double>(cols);
                mean_dx /= static_cast<double>(cols);
                for (std::size_t c = 0; c < cols; ++c)
                    gx[r * cols + c] += inv_std[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
            }
        },
        "layer_norm");
}

Tensor dropout(Tape& tape, const Tensor& x, double p, Rng& rng)
{
    if (p < 0.0 || p >= 1.0) throw ParameterError("dropout: probability must be in [0, 1)");
    if (p == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x.size());
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
        out[i] = x[i] * mask[i];
    }
    return tape.record(x.shape(), std::move(out), {x},
        [x, mask = std::move(mask)](std::span<const double> g) {
            if (auto gx = grad_sink(x); !gx.empty())
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
        },
        "dropout");
}

// ---------------------------------------------------------------------------
// Probabilities and losses

Tensor softmax_temperature(Tape& tape, const Tensor& z, double temperature)
{
    require_temperature(temperature, "softmax_temperature");
    const std::size_t rows = z.rows(), cols = z.cols();
    std::vector<double> out(z.size());
    softmax_rows(z.values(), rows, cols, temperature, out);
    auto probs = std::make_shared<std::vector<double>>(out);
    return tape.record(z.shape(), std::move(out), {z},
        [z, probs, rows, cols, temperature](std::span<const double> g) {
            auto gz = grad_sink(z);
            if (gz.empty()) return;
            const auto& p = *probs;
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * p[r * cols + j];
                for (std::size_t j = 0; j < cols; ++j) {
                    const std::size_t i = r * cols + j;
                    gz[i] += p[i] * (g[i] - dot) / temperature;
                }
            }
        },
        "softmax_temperature");
}

Tensor log_softmax(Tape& tape, const Tensor& z, double temperature)
{
    require_temperature(temperature, "log_softmax");
    const std::size_t rows = z.rows(), cols = z.cols();
    std::vector<double> out(z.size());
    log_softmax_rows(z.values(), rows, cols, temperature, out);
    auto logp = std::make_shared<std::vector<double>>(out);
    return tape.record(z.shape(), std::move(out), {z},
        [z, logp, rows, cols, temperature](std::span<const double> g) {
            auto gz = grad_sink(z);
            if (gz.empty()) return;
            for (std::size_t r = 0; r < rows; ++r) {
                double total = 0.0;
                for (std::size_t j = 0; j < cols; ++j) total += g[r * cols + j];
                for (std::size_t j = 0; j < cols; ++j) {
                    const std::size_t i = r * cols + j;
                    gz[i] += (g[i] - std::exp((*logp)[i]) * total) / temperature;
                }
            }
        },
        "log_softmax");
}

Tensor cross_entropy(Tape& tape, const Tensor& input, std::span<const std::int32_t> classes,
                     bool from_logits, double temperature)
{
    require_temperature(temperature, "cross_entropy");
    const std::size_t rows = input.rows(), cols = input.cols();
    if (classes.size() != rows) {
        throw DimensionError("cross_entropy: " + std::to_string(classes.size()) +
                             " targets for input " + shape_string(input.shape()));
    }
    for (std::int32_t c : classes) {
        if (c < 0 || static_cast<std::size_t>(c) >= cols) {
            throw IndexError("cross_entropy: class index " + std::to_string(c) + " outside " +
                             std::to_string(cols) + " classes");
        }
    }
    std::vector<std::int32_t> targets(classes.begin(), classes.end());
    const double n = static_cast<double>(rows);
    double loss = 0.0;
    if (from_logits) {
        auto logp = std::make_shared<std::vector<double>>(input.size());
        log_softmax_rows(input.values(), rows, cols, temperature, *logp);
        for (std::size_t r = 0; r < rows; ++r) loss -= (*logp)[r * cols + targets[r]];
        return tape.record({}, {loss / n}, {input},
            [input, logp, targets, rows, cols, n, temperature](std::span<const double> g) {
                auto gi = grad_sink(input);
                if (gi.empty()) return;
                const double s = g[0] / (n * temperature);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < cols; ++j) {
                        const std::size_t i = r * cols + j;
                        const double onehot = static_cast<std::int32_t>(j) == targets[r] ? 1.0 : 0.0;
                        gi[i] += s * (std::exp((*logp)[i]) - onehot);
                    }
            },
            "cross_entropy");
    }
    for (std::size_t r = 0; r < rows; ++r) loss -= std::log(clamp_probability(input[r * cols + targets[r]]));
    return tape.record({}, {loss / n}, {input},
        [input, targets, cols, n](std::span<const double> g) {
            auto gi = grad_sink(input);
            if (gi.empty()) return;
            for (std::size_t r = 0; r < targets.size(); ++r) {
                const std::size_t i = r * cols + static_cast<std::size_t>(targets[r]);
                if (inside_clamp(input[i])) gi[i] -= g[0] / (n * input[i]);
            }
        },
        "cross_entropy");
}

Tensor cross_entropy(Tape& tape, const Tensor& input, const Tensor& target_distribution,
                     bool from_logits, double temperature)
{
    require_temperature(temperature, "cross_entropy");
    require_same_shape(input, target_distribution, "cross_entropy");
    require_distribution_rows(target_distribution, "cross_entropy");
    const std::size_t rows = input.rows(), cols = input.cols();
    const double n = static_cast<double>(rows);
    auto logp = std::make_shared<std::vector<double>>(input.size());
    if (from_logits) {
        log_softmax_rows(input.values(), rows, cols, temperature, *logp);
    } else {
        for (std::size_t i = 0; i < input.size(); ++i) (*logp)[i] = std::log(clamp_probability(input[i]));
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < input.size(); ++i) loss -= target_distribution[i] * (*logp)[i];
    return tape.record({}, {loss / n}, {input, target_distribution},
        [input, target_distribution, logp, rows, cols, n, temperature,
         from_logits](std::span<const double> g) {
            const double s = g[0] / n;
            if (auto gt = grad_sink(target_distribution); !gt.empty())
                for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= s * (*logp)[i];
            auto gi = grad_sink(input);
            if (gi.empty()) return;
            if (from_logits) {
                for (std::size_t r = 0; r < rows; ++r) {
                    double mass = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) mass += target_distribution[r * cols + j];
                    for (std::size_t j = 0; j < cols; ++j) {
                        const std::size_t i = r * cols + j;
                        gi[i] += s * (std::exp((*logp)[i]) * mass - target_distribution[i]) / temperature;
                    }
                }
            } else {
                for (std::size_t i = 0; i < gi.size(); ++i)
                    if (inside_clamp(input[i])) gi[i] -= s * target_distribution[i] / input[i];
            }
        },
        "cross_entropy");
}

Tensor kl_divergence(Tape& tape, const Tensor& p, const Tensor& q)
{
    require_same_shape(p, q, "kl_divergence");
    require_distribution_rows(p, "kl_divergence");
    require_distribution_rows(q, "kl_divergence");
    const double n = static_cast<double>(p.rows());
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pi = clamp_probability(p[i]);
        const double qi = clamp_probability(q[i]);
        total += pi * std::log(pi / qi);
    }
    return tape.record({}, {total / n}, {p, q},
        [p, q, n](std::span<const double> g) {
            const double s = g[0] / n;
            auto gp = grad_sink(p);
            auto gq = grad_sink(q);
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double pi = clamp_probability(p[i]);
                const double qi = clamp_probability(q[i]);
                if (!gp.empty() && inside_clamp(p[i])) gp[i] += s * (std::log(pi / qi) + 1.0);
                if (!gq.empty() && inside_clamp(q[i])) gq[i] -= s * pi / qi;
            }
        },
        "kl_divergence");
}

Tensor mse(Tape& tape, const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "mse");
    const double n = static_cast<double>(a.size());
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += (a[i] - b[i]) * (a[i] - b[i]);
    return tape.record({}, {total / n}, {a, b},
        [a, b, n](std::span<const double> g) {
            const double s = 2.0 * g[0] / n;
            auto ga = grad_sink(a);
            auto gb = grad_sink(b);
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double d = a[i] - b[i];
                if (!ga.empty()) ga[i] += s * d;
                if (!gb.empty()) gb[i] -= s * d;
            }
        },
        "mse");
}

namespace {

constexpr double kFocalFloor = 1e-12;

double focal_clamp(double p) { return std::clamp(p, kFocalFloor, 1.0 - kFocalFloor); }

// d/dp of the focal loss at an unclamped p.
double focal_derivative(double p, int label, double gamma, double alpha, bool paper_literal)
{
    if (label == 1) {
        const double weight = paper_literal ? 1.0 : alpha;
        const double q = 1.0 - p;
        const double decay = gamma == 0.0 ? 0.0 : -gamma * std::pow(q, gamma - 1.0) * std::log(p);
        return -weight * (decay + std::pow(q, gamma) / p);
    }
    if (paper_literal) {
        const double base = 1.0 + p;
        const double growth = gamma == 0.0 ? 0.0 : gamma * std::pow(base, gamma - 1.0) * std::log1p(-p);
        return -(growth - std::pow(base, gamma) / (1.0 - p));
    }
    const double growth = gamma == 0.0 ? 0.0 : gamma * std::pow(p, gamma - 1.0) * std::log1p(-p);
    return -(growth - std::pow(p, gamma) / (1.0 - p));
}

} // namespace

double focal_loss(double p, int label, double gamma, double alpha, bool paper_literal)
{
    const double x = focal_clamp(p);
    if (label == 1) {
        const double weight = paper_literal ? 1.0 : alpha;
        return -weight * std::pow(1.0 - x, gamma) * std::log(x);
    }
    if (paper_literal) return -std::pow(1.0 + x, gamma) * std::log1p(-x);
    return -std::pow(x, gamma) * std::log1p(-x);
}

double binary_cross_entropy(double p, int label)
{
    const double x = focal_clamp(p);
    return label == 1 ? -std::log(x) : -std::log1p(-x);
}

Tensor focal_loss(Tape& tape, const Tensor& p, std::span<const std::int32_t> labels, double gamma,
                  double alpha, bool paper_literal)
{
    if (labels.size() != p.size()) {
        throw DimensionError("focal_loss: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(p.size()) + " probabilities");
    }
    if (gamma < 0.0) throw ParameterError("focal_loss: gamma must be non-negative");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ParameterError("focal_loss: alpha must be in (0, 1]");
    std::vector<std::int32_t> kept(labels.begin(), labels.end());
    for (std::int32_t y : kept)
        if (y != 0 && y != 1) throw ValidationError("focal_loss: labels must be 0 or 1");
    const double n = static_cast<double>(p.size());
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) total += focal_loss(p[i], kept[i], gamma, alpha, paper_literal);
    return tape.record({}, {total / n}, {p},
        [p, kept, gamma, alpha, paper_literal, n](std::span<const double> g) {
            auto gp = grad_sink(p);
            if (gp.empty()) return;
            for (std::size_t i = 0; i < kept.size(); ++i) {
                const double x = p[i];
                if (x <= kFocalFloor || x >= 1.0 - kFocalFloor) continue;
                gp[i] += g[0] / n * focal_derivative(x, kept[i], gamma, alpha, paper_literal);
            }
        },
        "focal_loss");
}

// ---------------------------------------------------------------------------
// Attention

bool AttentionLayout::allowed(std::size_t b, std::size_t query, std::size_t key) const
{
    if (!pad.empty() && pad[b * seq + key]) return false;
    if (!windowed) return true;
    const std::size_t distance = query > key ? query - key : key - query;
    if (distance <= window) return true;
    for (std::size_t g : global_positions)
        if (g == query || g == key) return true;
    return false;
}

namespace {

struct AttentionShape {
    std::size_t batch, seq, heads, dk, dv, qk_width, v_width;
};

AttentionShape check_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                               const AttentionLayout& layout)
{
    require_rank(q, 2, "attention");
    require_rank(k, 2, "attention");
    require_rank(v, 2, "attention");
    const std::size_t tokens = layout.batch * layout.seq;
    if (q.dim(0) != tokens || k.dim(0) != tokens || v.dim(0) != tokens) {
        throw DimensionError("attention: expected " + std::to_string(tokens) + " rows, got " +
                             shape_string(q.shape()) + ", " + shape_string(k.shape()) + ", " +
                             shape_string(v.shape()));
    }
    if (q.dim(1) != k.dim(1)) {
        throw DimensionError("attention: query/key widths differ, " + shape_string(q.shape()) +
                             " vs " + shape_string(k.shape()));
    }
    if (layout.heads == 0 || q.dim(1) % layout.heads != 0 || v.dim(1) % layout.heads != 0) {
        throw DimensionError("attention: width not divisible by head count");
    }
    if (!layout.pad.empty() && layout.pad.size() != tokens) {
        throw DimensionError("attention: pad mask length differs from token count");
    }
    for (std::size_t g : layout.global_positions)
        if (g >= layout.seq) throw ParameterError("attention: global position outside sequence");
    return {layout.batch, layout.seq, layout.heads, q.dim(1) / layout.heads,
            v.dim(1) / layout.heads, q.dim(1), v.dim(1)};
}

// Fills probs (seq x seq) for one (batch, head) block.
void attention_probs(const AttentionShape& s, const AttentionLayout& layout, const double* q,
                     const double* k, std::size_t b, RowMatrix& probs)
{
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.dk));
    StridedConstBlock qb(q, s.seq, s.dk, Eigen::OuterStride<>(s.qk_width));
    StridedConstBlock kb(k, s.seq, s.dk, Eigen::OuterStride<>(s.qk_width));
    probs.noalias() = qb * kb.transpose();
    std::vector<char> visible(s.seq);
    for (std::size_t i = 0; i < s.seq; ++i) {
        double top = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (std::size_t j = 0; j < s.seq; ++j) {
            visible[j] = layout.allowed(b, i, j);
            if (visible[j]) {
                top = std::max(top, probs(i, j) * scale);
                any = true;
            }
        }
        if (!any) {
            // Only a padded query can end up here (a window over padding); its output is unused.
            if (layout.pad.empty() || !layout.pad[b * s.seq + i]) {
                throw ValidationError("attention: query " + std::to_string(i) + " of sequence " +
                                      std::to_string(b) + " has no visible key");
            }
            probs.row(i).setZero();
            continue;
        }
        double total = 0.0;
        for (std::size_t j = 0; j < s.seq; ++j) {
            const double w = visible[j] ? std::exp(probs(i, j) * scale - top) : 0.0;
            probs(i, j) = w;
            total += w;
        }
        probs.row(i) /= total;
    }
}

} // namespace

Tensor multi_head_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionLayout& layout)
{
    const AttentionShape s = check_attention(q, k, v, layout);
    const std::size_t blocks = s.batch * s.heads;
    auto probs = std::make_shared<std::vector<RowMatrix>>(blocks);
    std::vector<double> out(s.batch * s.seq * s.v_width);
    parallel_for(blocks, [&](std::size_t block) {
        const std::size_t b = block / s.heads, h = block % s.heads;
        RowMatrix& p = (*probs)[block];
        p.resize(s.seq, s.seq);
        const std::size_t qk_offset = b * s.seq * s.qk_width + h * s.dk;
        const std::size_t v_offset = b * s.seq * s.v_width + h * s.dv;
        attention_probs(s, layout, q.values().data() + qk_offset, k.values().data() + qk_offset, b, p);
        StridedConstBlock vb(v.values().data() + v_offset, s.seq, s.dv, Eigen::OuterStride<>(s.v_width));
        StridedBlock ob(out.data() + v_offset, s.seq, s.dv, Eigen::OuterStride<>(s.v_width));
        ob.noalias() = p * vb;
    });
    return tape.record({s.batch * s.seq, s.v_width}, std::move(out), {q, k, v},
        [q, k, v, s, probs](std::span<const double> g) {
            auto gq = grad_sink(q);
            auto gk = grad_sink(k);
            auto gv = grad_sink(v);
            const double scale = 1.0 / std::sqrt(static_cast<double>(s.dk));
            parallel_for(s.batch * s.heads, [&](std::size_t block) {
                const std::size_t b = block / s.heads, h = block % s.heads;
                const RowMatrix& p = (*probs)[block];
                const std::size_t qk_offset = b * s.seq * s.qk_width + h * s.dk;
                const std::size_t v_offset = b * s.seq * s.v_width + h * s.dv;
                const Eigen::OuterStride<> qk_stride(s.qk_width), v_stride(s.v_width);
                StridedConstBlock dout(g.data() + v_offset, s.seq, s.dv, v_stride);
                StridedConstBlock vb(v.values().data() + v_offset, s.seq, s.dv, v_stride);
                StridedConstBlock qb(q.values().data() + qk_offset, s.seq, s.dk, qk_stride);
                StridedConstBlock kb(k.values().data() + qk_offset, s.seq, s.dk, qk_stride);
                if (!gv.empty()) {
                    StridedBlock(gv.data() + v_offset, s.seq, s.dv, v_stride).noalias() +=
                        p.transpose() * dout;
                }
                RowMatrix dp = dout * vb.transpose();
                RowMatrix ds(s.seq, s.seq);
                for (std::size_t i = 0; i < s.seq; ++i) {
                    const double dot = p.row(i).dot(dp.row(i));
                    for (std::size_t j = 0; j < s.seq; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * scale;
                }
                if (!gq.empty()) {
                    StridedBlock(gq.data() + qk_offset, s.seq, s.dk, qk_stride).noalias() += ds * kb;
                }
                if (!gk.empty()) {
                    StridedBlock(gk.data() + qk_offset, s.seq, s.dk, qk_stride).noalias() +=
                        ds.transpose() * qb;
                }
            });
        },
        "multi_head_attention");
}

Tensor attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                 const std::vector<bool>& pad)
{
    require_rank(q, 2, "attention");
    AttentionLayout layout;
    layout.seq = q.dim(0);
    layout.pad = pad;
    return multi_head_attention(tape, q, k, v, layout);
}

Tensor windowed_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                          std::size_t window, const std::vector<std::size_t>& global_positions,
                          const std::vector<bool>& pad)
{
    require_rank(q, 2, "windowed_attention");
    AttentionLayout layout;
    layout.seq = q.dim(0);
    layout.pad = pad;
    layout.windowed = true;
    layout.window = window;
    layout.global_positions = global_positions;
    return multi_head_attention(tape, q, k, v, layout);
}

RowMatrix attention_weights(const Tensor& q, const Tensor& k, const AttentionLayout& layout)
{
    const AttentionShape s = check_attention(q, k, k, layout);
    RowMatrix all(s.heads * s.batch * s.seq, s.seq);
    RowMatrix p(s.seq, s.seq);
    for (std::size_t h = 0; h < s.heads; ++h) {
        for (std::size_t b = 0; b < s.batch; ++b) {
            const std::size_t offset = b * s.seq * s.qk_width + h * s.dk;
            attention_probs(s, layout, q.values().data() + offset, k.values().data() + offset, b, p);
            all.block((h * s.batch + b) * s.seq, 0, s.seq, s.seq) = p;
        }
    }
    return all;
}

} // namespace tdlm

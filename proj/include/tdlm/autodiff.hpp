#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tdlm/errors.hpp"

namespace tdlm {

class Rng;

using Shape = std::vector<std::size_t>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixView = Eigen::Map<RowMatrix>;
using ConstMatrixView = Eigen::Map<const RowMatrix>;

/// Lower clamp applied to every probability before a logarithm.
inline constexpr double kProbabilityFloor = 1e-12;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

namespace detail {
struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
};
} // namespace detail

/// Dense row-major tensor of doubles with an optional gradient.
///
/// Tensors are cheap handles: copies share storage. Leaf tensors created with
/// requires_grad receive gradients from Tape::backward; op outputs inherit
/// requires_grad from their inputs.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor from_matrix(const RowMatrix& m, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t size() const { return node_->value.size(); }

    /// Rows and columns of the matrix view: the last axis is the column axis.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const { return node_->value; }
    /// In-place access for initializers and optimizers. Not tracked by any tape.
    std::span<double> mutable_values() { return node_->value; }
    double item() const;
    double operator[](std::size_t i) const { return node_->value[i]; }
    double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

    ConstMatrixView matrix() const;
    MatrixView mutable_matrix();

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }
    bool has_grad() const { return !node_->grad.empty(); }
    /// Gradient installed by the last backward pass (empty if none reached it).
    std::span<const double> grad() const { return node_->grad; }
    ConstMatrixView grad_matrix() const;
    void zero_grad() { node_->grad.clear(); }

    /// Deep copy of the values with no gradient history.
    Tensor clone(bool requires_grad = false) const;

    const void* id() const { return node_.get(); }

private:
    friend class Tape;
    friend std::span<double> grad_sink(const Tensor& t);
    std::shared_ptr<detail::TensorNode> node_;
};

/// Gradient buffer of t, allocated on first use; empty when t needs no gradient.
std::span<double> grad_sink(const Tensor& t);

/// Ordered record of differentiable operations.
///
/// A recording tape stores one backward closure per op whose output requires
/// a gradient; a non-recording tape only evaluates. Each tape supports a
/// single backward pass.
class Tape {
public:
    using BackwardFn = std::function<void(std::span<const double> output_grad)>;

    explicit Tape(bool recording = true) : recording_(recording) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    std::size_t size() const { return entries_.size(); }
    bool used() const { return used_; }

    /// Wraps output values as a tensor and records fn when any input needs a gradient.
    Tensor record(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                  BackwardFn fn, const char* op_name);

    void backward(const Tensor& loss);

private:
    struct Entry {
        std::shared_ptr<detail::TensorNode> output;
        BackwardFn fn;
    };
    std::vector<Entry> entries_;
    bool recording_;
    bool used_ = false;
};

/// Thread-local non-recording tape for pure evaluation.
Tape& inference_tape();

// ---------------------------------------------------------------------------
// Differentiable ops. Matrix-shaped ops treat the last axis as columns.

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& a);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double factor);
/// x[N x C] + bias[C] broadcast over rows.
Tensor add_row(Tape& tape, const Tensor& x, const Tensor& bias);
Tensor sum(Tape& tape, const Tensor& a);
Tensor mean(Tape& tape, const Tensor& a);
Tensor reshape(Tape& tape, const Tensor& a, Shape shape);
Tensor gelu(Tape& tape, const Tensor& a);
Tensor tanh(Tape& tape, const Tensor& a);

/// Rows of table selected by ids: result is [ids.size() x table.cols()].
Tensor embedding(Tape& tape, const Tensor& table, std::span<const std::int32_t> ids);
Tensor gather_rows(Tape& tape, const Tensor& x, std::span<const std::size_t> rows);
/// Column c of a matrix as a vector of length rows.
Tensor select_column(Tape& tape, const Tensor& x, std::size_t column);

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
/// Inverted dropout; identity when p == 0.
Tensor dropout(Tape& tape, const Tensor& x, double p, Rng& rng);

/// Last-axis softmax of z / T with max subtraction.
Tensor softmax_temperature(Tape& tape, const Tensor& z, double temperature);
Tensor log_softmax(Tape& tape, const Tensor& z, double temperature = 1.0);

/// Mean over rows of -sum_j y_j log p_j. With from_logits the input is
/// softened by temperature first; otherwise it holds probabilities
/// (clamped to [1e-12, 1]).
Tensor cross_entropy(Tape& tape, const Tensor& input, std::span<const std::int32_t> classes,
                     bool from_logits, double temperature = 1.0);
Tensor cross_entropy(Tape& tape, const Tensor& input, const Tensor& target_distribution,
                     bool from_logits, double temperature = 1.0);

/// Mean over rows of sum_j p_j log(p_j / q_j), operands clamped to [1e-12, 1].
Tensor kl_divergence(Tape& tape, const Tensor& p, const Tensor& q);
Tensor mse(Tape& tape, const Tensor& a, const Tensor& b);

/// Mean binary focal loss over entries of p (positive-class probabilities).
/// With paper_literal the negative branch uses (1+p)^gamma and no alpha.
Tensor focal_loss(Tape& tape, const Tensor& p, std::span<const std::int32_t> labels, double gamma,
                  double alpha, bool paper_literal = false);

/// Scalar focal loss: y=1 -> -a(1-p)^g log p, y=0 -> -p^g log(1-p).
/// Alpha weights the positive branch only, so gamma=0, alpha=1 is plain BCE.
double focal_loss(double p, int label, double gamma, double alpha, bool paper_literal = false);
/// Binary cross-entropy of a positive-class probability.
double binary_cross_entropy(double p, int label);

/// Which keys each query may see.
struct AttentionLayout {
    std::size_t batch = 1;
    std::size_t seq = 1;
    std::size_t heads = 1;
    /// batch*seq flags; true marks padding keys that receive zero weight.
    std::vector<bool> pad;
    /// Sliding window half-width; disabled when not windowed.
    bool windowed = false;
    std::size_t window = 0;
    std::vector<std::size_t> global_positions;

    bool allowed(std::size_t b, std::size_t query, std::size_t key) const;
};

/// Multi-head scaled dot-product attention over [batch*seq x hidden] inputs,
/// normalized by sqrt(hidden/heads).
Tensor multi_head_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionLayout& layout);

/// Single-head attention on [s x d] inputs; pad may be empty.
Tensor attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                 const std::vector<bool>& pad = {});
Tensor windowed_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                          std::size_t window, const std::vector<std::size_t>& global_positions,
                          const std::vector<bool>& pad = {});

/// Attention probabilities [heads*batch*seq x seq] without recording.
RowMatrix attention_weights(const Tensor& q, const Tensor& k, const AttentionLayout& layout);

} // namespace tdlm

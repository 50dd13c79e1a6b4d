#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hyperx/rng.hpp"

namespace hyperx {

struct TensorNode;

/// Dense row-major tensor of 64-bit floats with reverse-mode autodiff.
///
/// A Tensor is a cheap handle to a graph node. Ops allocate fresh output
/// nodes; values are never mutated after an op completes, and every
/// completed op checks its output for NaN/Inf. Row-wise ops (matmul lhs,
/// layer_norm, softmax, bias add) treat a rank-N tensor as a matrix of
/// (numel / last_dim) rows.
///
/// Gradients accumulate across backward() calls until zero_grad() is called
/// on the leaf.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    /// Gaussian init, values drawn row-major from rng.
    static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0,
                        bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }

    const std::vector<int>& shape() const;
    int64_t size() const;
    int rows() const;  // numel / last_dim
    int cols() const;  // last_dim

    std::span<const double> data() const;
    std::span<double> mutable_data();  // init/optimizer use only, not tracked
    double item() const;               // scalar tensors only
    double at(std::initializer_list<int> idx) const;

    bool requires_grad() const;
    void set_requires_grad(bool v);

    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    /// Leaf-identity (stable across handle copies).
    const TensorNode* node() const { return node_.get(); }
    TensorNode* node() { return node_.get(); }

    /// Detached value copy (no graph, no grad).
    Tensor detach() const;

  private:
    friend struct OpAccess;
    std::shared_ptr<TensorNode> node_;
};

/// While a NoGradGuard is alive no op records graph edges; forward values
/// are computed as usual. Used for evaluation.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

bool grad_enabled();

// ---- ops -----------------------------------------------------------------

/// Standard matrix product. lhs (..., k) x rhs (k, n) -> (..., n).
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);       // same shape
Tensor add_rowwise(const Tensor& x, const Tensor& bias);  // (..., d) + (d)
Tensor mul(const Tensor& a, const Tensor& b);       // elementwise, same shape
Tensor scale(const Tensor& a, double s);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // tanh approximation
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-12);

/// Lookup rows of table (V, d) by id; output shape = out_shape + {d}.
Tensor embedding(const Tensor& table, const std::vector<int>& ids,
                 std::vector<int> out_shape = {});

/// Mean cross-entropy of row-wise logits against integer targets.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);

/// Inverted-dropout; identity when training is false.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);

/// Concatenate along axis 0 (trailing dims must match).
Tensor concat(const std::vector<Tensor>& parts);

Tensor reshape(const Tensor& x, std::vector<int> shape);

/// Rows [begin, end) along axis 0 (elements for rank-1 tensors).
Tensor slice(const Tensor& x, int begin, int end);

/// Select rows of the flattened (rows, cols) view by index (duplicates allowed).
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);

Tensor sum(const Tensor& x);  // scalar

/// Fused multi-head self-attention over a (B, S, h) input. mask has B*S
/// entries, 0 marking padding keys. Wq/Wk/Wv/Wo are (h, h), biases (h).
Tensor multi_head_attention(const Tensor& x, const Tensor& wq, const Tensor& bq,
                            const Tensor& wk, const Tensor& bk, const Tensor& wv,
                            const Tensor& bv, const Tensor& wo, const Tensor& bo,
                            int batch, int seq, int num_heads,
                            const std::vector<uint8_t>& mask);

/// Reverse-mode sweep from a scalar loss. Every reachable leaf with
/// requires_grad receives (accumulates) a gradient.
void backward(const Tensor& loss);

/// Argmax per row of the flattened (rows, cols) view.
std::vector<int> argmax_rows(const Tensor& x);

std::string shape_string(const std::vector<int>& shape);

}  // namespace hyperx

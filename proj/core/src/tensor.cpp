#include "hyperx/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "hyperx/errors.hpp"

namespace hyperx {

struct TensorNode {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty = absent
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;

    int64_t size() const { return static_cast<int64_t>(value.size()); }
    bool interior() const { return !parents.empty(); }
    std::vector<double>& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

namespace {

thread_local bool g_grad_enabled = true;

int64_t numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string(op) + " produced a non-finite value");
        }
    }
}

// Accumulating matmul kernels. c is assumed pre-zeroed or holding a running sum.
void mm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<int64_t>(i) * k;
        double* crow = c + static_cast<int64_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            double av = arow[l];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<int64_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// a (m,k) times b^T where b is stored (n,k).
void mm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<int64_t>(i) * k;
        double* crow = c + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<int64_t>(j) * k;
            double acc = 0.0;
            for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
            crow[j] += acc;
        }
    }
}

// a^T times b where a is stored (k,m) and b (k,n).
void mm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int l = 0; l < k; ++l) {
        const double* arow = a + static_cast<int64_t>(l) * m;
        const double* brow = b + static_cast<int64_t>(l) * n;
        for (int i = 0; i < m; ++i) {
            double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + static_cast<int64_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

struct OpAccess {
    static const std::shared_ptr<TensorNode>& get(const Tensor& t) { return t.node_; }
    static Tensor wrap(std::shared_ptr<TensorNode> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }
};

namespace {

using NodePtr = std::shared_ptr<TensorNode>;

const NodePtr& nd(const Tensor& t) {
    const NodePtr& p = OpAccess::get(t);
    if (!p) throw ContractError("operation on an undefined tensor");
    return p;
}

bool wants_grad(const NodePtr& p) { return p->requires_grad || p->interior(); }

/// Build an op output node. Graph edges are recorded only when gradients are
/// enabled and at least one input is on a gradient path.
Tensor make_op(const char* name, std::vector<int> shape, std::vector<double> value,
               std::vector<Tensor> parents, std::function<void(TensorNode&)> backprop) {
    check_finite(value, name);
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (g_grad_enabled) {
        bool track = false;
        for (const Tensor& p : parents) {
            if (wants_grad(nd(p))) track = true;
        }
        if (track) {
            node->requires_grad = true;
            node->parents.reserve(parents.size());
            for (const Tensor& p : parents) node->parents.push_back(nd(p));
            node->backprop = std::move(backprop);
        }
    }
    return OpAccess::wrap(std::move(node));
}

void accumulate(TensorNode& parent, const double* g, int64_t n) {
    if (!(parent.requires_grad || parent.interior())) return;
    std::vector<double>& dst = parent.ensure_grad();
    for (int64_t i = 0; i < n; ++i) dst[i] += g[i];
}

}  // namespace

// ---- Tensor --------------------------------------------------------------

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_string(shape));
    }
    auto node = std::make_shared<TensorNode>();
    node->value.assign(numel(shape), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return OpAccess::wrap(std::move(node));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    if (numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_string(shape));
    }
    check_finite(data, "from_data");
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return OpAccess::wrap(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev, bool requires_grad) {
    std::vector<double> data(numel(shape));
    for (double& x : data) x = rng.normal(0.0, stddev);
    return from_data(std::move(shape), std::move(data), requires_grad);
}

const std::vector<int>& Tensor::shape() const { return nd(*this)->shape; }
int64_t Tensor::size() const { return nd(*this)->size(); }

int Tensor::cols() const {
    const auto& s = nd(*this)->shape;
    return s.empty() ? 1 : s.back();
}

int Tensor::rows() const { return static_cast<int>(size() / cols()); }

std::span<const double> Tensor::data() const { return nd(*this)->value; }
std::span<double> Tensor::mutable_data() { return nd(*this)->value; }

double Tensor::item() const {
    const NodePtr& n = nd(*this);
    if (n->size() != 1) throw ContractError("item() on tensor of size " + std::to_string(n->size()));
    return n->value[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
    const NodePtr& n = nd(*this);
    if (idx.size() != n->shape.size()) throw ShapeError("at(): index rank mismatch");
    int64_t flat = 0;
    int k = 0;
    for (int i : idx) {
        flat = flat * n->shape[k] + i;
        ++k;
    }
    return n->value[flat];
}

bool Tensor::requires_grad() const { return nd(*this)->requires_grad; }
void Tensor::set_requires_grad(bool v) { nd(*this)->requires_grad = v; }

bool Tensor::has_grad() const { return !nd(*this)->grad.empty(); }
std::span<const double> Tensor::grad() const { return nd(*this)->grad; }
void Tensor::zero_grad() { nd(*this)->grad.clear(); }

Tensor Tensor::detach() const {
    const NodePtr& n = nd(*this);
    auto copy = std::make_shared<TensorNode>();
    copy->shape = n->shape;
    copy->value = n->value;
    return OpAccess::wrap(std::move(copy));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ")";
    return os.str();
}

// ---- ops -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    const NodePtr& an = nd(a);
    const NodePtr& bn = nd(b);
    if (bn->shape.size() != 2) {
        throw ShapeError("matmul rhs must be rank-2, got " + shape_string(bn->shape));
    }
    int k = an->shape.empty() ? 1 : an->shape.back();
    int m = static_cast<int>(an->size() / k);
    if (k != bn->shape[0]) {
        throw ShapeError("matmul dimension mismatch: " + shape_string(an->shape) + " x " +
                         shape_string(bn->shape));
    }
    int n = bn->shape[1];
    std::vector<double> out(static_cast<int64_t>(m) * n, 0.0);
    mm_nn(an->value.data(), bn->value.data(), out.data(), m, k, n);

    std::vector<int> out_shape(an->shape.begin(), an->shape.end() - 1);
    out_shape.push_back(n);
    return make_op("matmul", std::move(out_shape), std::move(out), {a, b},
                   [m, k, n](TensorNode& self) {
                       TensorNode& A = *self.parents[0];
                       TensorNode& B = *self.parents[1];
                       const double* g = self.grad.data();
                       if (A.requires_grad || A.interior()) {
                           std::vector<double>& da = A.ensure_grad();
                           mm_nt(g, B.value.data(), da.data(), m, n, k);
                       }
                       if (B.requires_grad || B.interior()) {
                           std::vector<double>& db = B.ensure_grad();
                           mm_tn(A.value.data(), g, db.data(), k, m, n);
                       }
                   });
}

Tensor add(const Tensor& a, const Tensor& b) {
    const NodePtr& an = nd(a);
    const NodePtr& bn = nd(b);
    if (an->shape != bn->shape) {
        throw ShapeError("add shape mismatch: " + shape_string(an->shape) + " vs " +
                         shape_string(bn->shape));
    }
    std::vector<double> out(an->value);
    const double* bv = bn->value.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return make_op("add", an->shape, std::move(out), {a, b}, [](TensorNode& self) {
        accumulate(*self.parents[0], self.grad.data(), self.size());
        accumulate(*self.parents[1], self.grad.data(), self.size());
    });
}

Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
    const NodePtr& xn = nd(x);
    const NodePtr& bn = nd(bias);
    int d = x.cols();
    if (bn->shape.size() != 1 || bn->shape[0] != d) {
        throw ShapeError("bias shape " + shape_string(bn->shape) + " does not match row width " +
                         std::to_string(d));
    }
    int rows = x.rows();
    std::vector<double> out(xn->value);
    for (int r = 0; r < rows; ++r) {
        double* row = out.data() + static_cast<int64_t>(r) * d;
        for (int j = 0; j < d; ++j) row[j] += bn->value[j];
    }
    return make_op("add_rowwise", xn->shape, std::move(out), {x, bias},
                   [rows, d](TensorNode& self) {
                       accumulate(*self.parents[0], self.grad.data(), self.size());
                       TensorNode& b = *self.parents[1];
                       if (b.requires_grad || b.interior()) {
                           std::vector<double>& db = b.ensure_grad();
                           for (int r = 0; r < rows; ++r) {
                               const double* g = self.grad.data() + static_cast<int64_t>(r) * d;
                               for (int j = 0; j < d; ++j) db[j] += g[j];
                           }
                       }
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const NodePtr& an = nd(a);
    const NodePtr& bn = nd(b);
    if (an->shape != bn->shape) {
        throw ShapeError("mul shape mismatch: " + shape_string(an->shape) + " vs " +
                         shape_string(bn->shape));
    }
    std::vector<double> out(an->value);
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bn->value[i];
    return make_op("mul", an->shape, std::move(out), {a, b}, [](TensorNode& self) {
        TensorNode& A = *self.parents[0];
        TensorNode& B = *self.parents[1];
        int64_t n = self.size();
        if (A.requires_grad || A.interior()) {
            std::vector<double>& da = A.ensure_grad();
            for (int64_t i = 0; i < n; ++i) da[i] += self.grad[i] * B.value[i];
        }
        if (B.requires_grad || B.interior()) {
            std::vector<double>& db = B.ensure_grad();
            for (int64_t i = 0; i < n; ++i) db[i] += self.grad[i] * A.value[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    const NodePtr& an = nd(a);
    std::vector<double> out(an->value);
    for (double& v : out) v *= s;
    return make_op("scale", an->shape, std::move(out), {a}, [s](TensorNode& self) {
        TensorNode& A = *self.parents[0];
        if (A.requires_grad || A.interior()) {
            std::vector<double>& da = A.ensure_grad();
            for (int64_t i = 0; i < self.size(); ++i) da[i] += s * self.grad[i];
        }
    });
}

Tensor relu(const Tensor& x) {
    const NodePtr& xn = nd(x);
    std::vector<double> out(xn->value);
    for (double& v : out) v = v > 0.0 ? v : 0.0;
    return make_op("relu", xn->shape, std::move(out), {x}, [](TensorNode& self) {
        TensorNode& A = *self.parents[0];
        if (A.requires_grad || A.interior()) {
            std::vector<double>& da = A.ensure_grad();
            for (int64_t i = 0; i < self.size(); ++i) {
                if (A.value[i] > 0.0) da[i] += self.grad[i];
            }
        }
    });
}

namespace {
constexpr double kGeluAlpha = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
    const NodePtr& xn = nd(x);
    std::vector<double> out(xn->value.size());
    for (size_t i = 0; i < out.size(); ++i) {
        double v = xn->value[i];
        double u = kGeluAlpha * (v + kGeluCubic * v * v * v);
        out[i] = 0.5 * v * (1.0 + std::tanh(u));
    }
    return make_op("gelu", xn->shape, std::move(out), {x}, [](TensorNode& self) {
        TensorNode& A = *self.parents[0];
        if (!(A.requires_grad || A.interior())) return;
        std::vector<double>& da = A.ensure_grad();
        for (int64_t i = 0; i < self.size(); ++i) {
            double v = A.value[i];
            double u = kGeluAlpha * (v + kGeluCubic * v * v * v);
            double t = std::tanh(u);
            double du = kGeluAlpha * (1.0 + 3.0 * kGeluCubic * v * v);
            double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
            da[i] += self.grad[i] * d;
        }
    });
}

Tensor softmax_rows(const Tensor& x) {
    const NodePtr& xn = nd(x);
    int d = x.cols();
    int rows = x.rows();
    std::vector<double> out(xn->value.size());
    for (int r = 0; r < rows; ++r) {
        const double* in = xn->value.data() + static_cast<int64_t>(r) * d;
        double* o = out.data() + static_cast<int64_t>(r) * d;
        double m = in[0];
        for (int j = 1; j < d; ++j) m = std::max(m, in[j]);
        double z = 0.0;
        for (int j = 0; j < d; ++j) {
            o[j] = std::exp(in[j] - m);
            z += o[j];
        }
        for (int j = 0; j < d; ++j) o[j] /= z;
    }
    return make_op("softmax", xn->shape, std::move(out), {x}, [rows, d](TensorNode& self) {
        TensorNode& A = *self.parents[0];
        if (!(A.requires_grad || A.interior())) return;
        std::vector<double>& da = A.ensure_grad();
        for (int r = 0; r < rows; ++r) {
            const double* y = self.value.data() + static_cast<int64_t>(r) * d;
            const double* g = self.grad.data() + static_cast<int64_t>(r) * d;
            double* dst = da.data() + static_cast<int64_t>(r) * d;
            double dot = 0.0;
            for (int j = 0; j < d; ++j) dot += g[j] * y[j];
            for (int j = 0; j < d; ++j) dst[j] += y[j] * (g[j] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const NodePtr& xn = nd(x);
    int d = x.cols();
    int rows = x.rows();
    const NodePtr& gn = nd(gamma);
    const NodePtr& bn = nd(beta);
    if (gn->size() != d || bn->size() != d) {
        throw ShapeError("layer_norm affine params must have width " + std::to_string(d));
    }
    std::vector<double> out(xn->value.size());
    std::vector<double> xhat(xn->value.size());
    std::vector<double> inv_std(rows);
    for (int r = 0; r < rows; ++r) {
        const double* in = xn->value.data() + static_cast<int64_t>(r) * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += in[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            double c = in[j] - mean;
            var += c * c;
        }
        var /= d;
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        double* xh = xhat.data() + static_cast<int64_t>(r) * d;
        double* o = out.data() + static_cast<int64_t>(r) * d;
        for (int j = 0; j < d; ++j) {
            xh[j] = (in[j] - mean) * is;
            o[j] = xh[j] * gn->value[j] + bn->value[j];
        }
    }
    return make_op("layer_norm", xn->shape, std::move(out), {x, gamma, beta},
                   [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorNode& self) {
                       TensorNode& X = *self.parents[0];
                       TensorNode& G = *self.parents[1];
                       TensorNode& B = *self.parents[2];
                       bool wx = X.requires_grad || X.interior();
                       bool wg = G.requires_grad || G.interior();
                       bool wb = B.requires_grad || B.interior();
                       std::vector<double>* dx = wx ? &X.ensure_grad() : nullptr;
                       std::vector<double>* dg = wg ? &G.ensure_grad() : nullptr;
                       std::vector<double>* db = wb ? &B.ensure_grad() : nullptr;
                       for (int r = 0; r < rows; ++r) {
                           const double* g = self.grad.data() + static_cast<int64_t>(r) * d;
                           const double* xh = xhat.data() + static_cast<int64_t>(r) * d;
                           if (wg || wb) {
                               for (int j = 0; j < d; ++j) {
                                   if (dg) (*dg)[j] += g[j] * xh[j];
                                   if (db) (*db)[j] += g[j];
                               }
                           }
                           if (!wx) continue;
                           // dxhat_j = g_j * gamma_j; project out mean and xhat components
                           double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                           for (int j = 0; j < d; ++j) {
                               double dxh = g[j] * G.value[j];
                               mean_dxh += dxh;
                               mean_dxh_xh += dxh * xh[j];
                           }
                           mean_dxh /= d;
                           mean_dxh_xh /= d;
                           double* dst = dx->data() + static_cast<int64_t>(r) * d;
                           for (int j = 0; j < d; ++j) {
                               double dxh = g[j] * G.value[j];
                               dst[j] += inv_std[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                           }
                       }
                   });
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids, std::vector<int> out_shape) {
    const NodePtr& tn = nd(table);
    if (tn->shape.size() != 2) throw ShapeError("embedding table must be rank-2");
    int v = tn->shape[0];
    int d = tn->shape[1];
    for (int id : ids) {
        if (id < 0 || id >= v) {
            throw LookupError("embedding id " + std::to_string(id) + " outside table of " +
                              std::to_string(v) + " rows");
        }
    }
    if (out_shape.empty()) out_shape = {static_cast<int>(ids.size())};
    if (numel(out_shape) != static_cast<int64_t>(ids.size())) {
        throw ShapeError("embedding out_shape does not match id count");
    }
    std::vector<double> out(static_cast<int64_t>(ids.size()) * d);
    for (size_t i = 0; i < ids.size(); ++i) {
        std::memcpy(out.data() + i * d, tn->value.data() + static_cast<int64_t>(ids[i]) * d,
                    sizeof(double) * d);
    }
    out_shape.push_back(d);
    return make_op("embedding", std::move(out_shape), std::move(out), {table},
                   [ids, d](TensorNode& self) {
                       TensorNode& T = *self.parents[0];
                       if (!(T.requires_grad || T.interior())) return;
                       std::vector<double>& dt = T.ensure_grad();
                       for (size_t i = 0; i < ids.size(); ++i) {
                           const double* g = self.grad.data() + i * d;
                           double* dst = dt.data() + static_cast<int64_t>(ids[i]) * d;
                           for (int j = 0; j < d; ++j) dst[j] += g[j];
                       }
                   });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    const NodePtr& ln = nd(logits);
    int d = logits.cols();
    int rows = logits.rows();
    if (static_cast<int>(targets.size()) != rows) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
    }
    if (rows == 0) throw ContractError("cross_entropy on empty batch");
    std::vector<double> probs(ln->value.size());
    double loss = 0.0;
    for (int r = 0; r < rows; ++r) {
        int t = targets[r];
        if (t < 0 || t >= d) throw LookupError("cross_entropy target out of range");
        const double* in = ln->value.data() + static_cast<int64_t>(r) * d;
        double* p = probs.data() + static_cast<int64_t>(r) * d;
        double m = in[0];
        for (int j = 1; j < d; ++j) m = std::max(m, in[j]);
        double z = 0.0;
        for (int j = 0; j < d; ++j) {
            p[j] = std::exp(in[j] - m);
            z += p[j];
        }
        for (int j = 0; j < d; ++j) p[j] /= z;
        loss += std::log(z) + m - in[t];
    }
    loss /= rows;
    return make_op("cross_entropy", {1}, {loss}, {logits},
                   [targets, rows, d, probs = std::move(probs)](TensorNode& self) {
                       TensorNode& L = *self.parents[0];
                       if (!(L.requires_grad || L.interior())) return;
                       std::vector<double>& dl = L.ensure_grad();
                       double s = self.grad[0] / rows;
                       for (int r = 0; r < rows; ++r) {
                           const double* p = probs.data() + static_cast<int64_t>(r) * d;
                           double* dst = dl.data() + static_cast<int64_t>(r) * d;
                           for (int j = 0; j < d; ++j) dst[j] += s * p[j];
                           dst[targets[r]] -= s;
                       }
                   });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
    if (!training || rate <= 0.0) return x;
    if (rate >= 1.0) throw ContractError("dropout rate must be < 1");
    const NodePtr& xn = nd(x);
    double keep = 1.0 - rate;
    std::vector<double> mask(xn->value.size());
    std::vector<double> out(xn->value.size());
    for (size_t i = 0; i < out.size(); ++i) {
        mask[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
        out[i] = xn->value[i] * mask[i];
    }
    return make_op("dropout", xn->shape, std::move(out), {x},
                   [mask = std::move(mask)](TensorNode& self) {
                       TensorNode& A = *self.parents[0];
                       if (!(A.requires_grad || A.interior())) return;
                       std::vector<double>& da = A.ensure_grad();
                       for (int64_t i = 0; i < self.size(); ++i) da[i] += self.grad[i] * mask[i];
                   });
}

Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    const std::vector<int>& first = nd(parts[0])->shape;
    std::vector<int> trailing(first.begin() + 1, first.end());
    int64_t total0 = 0;
    for (const Tensor& p : parts) {
        const auto& s = nd(p)->shape;
        if (std::vector<int>(s.begin() + 1, s.end()) != trailing) {
            throw ShapeError("concat trailing-shape mismatch: " + shape_string(first) + " vs " +
                             shape_string(s));
        }
        total0 += s[0];
    }
    std::vector<int> out_shape = first;
    out_shape[0] = static_cast<int>(total0);
    std::vector<double> out;
    out.reserve(numel(out_shape));
    for (const Tensor& p : parts) {
        const auto& v = nd(p)->value;
        out.insert(out.end(), v.begin(), v.end());
    }
    return make_op("concat", std::move(out_shape), std::move(out), parts, [](TensorNode& self) {
        int64_t off = 0;
        for (auto& pn : self.parents) {
            int64_t n = pn->size();
            accumulate(*pn, self.grad.data() + off, n);
            off += n;
        }
    });
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
    const NodePtr& xn = nd(x);
    if (numel(shape) != xn->size()) {
        throw ShapeError("reshape " + shape_string(xn->shape) + " -> " + shape_string(shape) +
                         " changes element count");
    }
    std::vector<double> out(xn->value);
    return make_op("reshape", std::move(shape), std::move(out), {x}, [](TensorNode& self) {
        accumulate(*self.parents[0], self.grad.data(), self.size());
    });
}

Tensor slice(const Tensor& x, int begin, int end) {
    const NodePtr& xn = nd(x);
    if (xn->shape.empty()) throw ShapeError("slice on rank-0 tensor");
    int n0 = xn->shape[0];
    if (begin < 0 || end > n0 || begin >= end) {
        throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for axis of " + std::to_string(n0));
    }
    int64_t stride = xn->size() / n0;
    std::vector<int> out_shape = xn->shape;
    out_shape[0] = end - begin;
    std::vector<double> out(xn->value.begin() + begin * stride, xn->value.begin() + end * stride);
    return make_op("slice", std::move(out_shape), std::move(out), {x},
                   [begin, stride](TensorNode& self) {
                       TensorNode& A = *self.parents[0];
                       if (!(A.requires_grad || A.interior())) return;
                       std::vector<double>& da = A.ensure_grad();
                       double* dst = da.data() + begin * stride;
                       for (int64_t i = 0; i < self.size(); ++i) dst[i] += self.grad[i];
                   });
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
    const NodePtr& xn = nd(x);
    int d = x.cols();
    int nrows = x.rows();
    for (int r : rows) {
        if (r < 0 || r >= nrows) throw LookupError("gather_rows index out of range");
    }
    std::vector<double> out(static_cast<int64_t>(rows.size()) * d);
    for (size_t i = 0; i < rows.size(); ++i) {
        std::memcpy(out.data() + i * d, xn->value.data() + static_cast<int64_t>(rows[i]) * d,
                    sizeof(double) * d);
    }
    return make_op("gather_rows", {static_cast<int>(rows.size()), d}, std::move(out), {x},
                   [rows, d](TensorNode& self) {
                       TensorNode& A = *self.parents[0];
                       if (!(A.requires_grad || A.interior())) return;
                       std::vector<double>& da = A.ensure_grad();
                       for (size_t i = 0; i < rows.size(); ++i) {
                           const double* g = self.grad.data() + i * d;
                           double* dst = da.data() + static_cast<int64_t>(rows[i]) * d;
                           for (int j = 0; j < d; ++j) dst[j] += g[j];
                       }
                   });
}

Tensor sum(const Tensor& x) {
    const NodePtr& xn = nd(x);
    double s = 0.0;
    for (double v : xn->value) s += v;
    return make_op("sum", {1}, {s}, {x}, [](TensorNode& self) {
        TensorNode& A = *self.parents[0];
        if (!(A.requires_grad || A.interior())) return;
        std::vector<double>& da = A.ensure_grad();
        for (double& v : da) v += self.grad[0];
    });
}

Tensor multi_head_attention(const Tensor& x, const Tensor& wq, const Tensor& bq,
                            const Tensor& wk, const Tensor& bk, const Tensor& wv,
                            const Tensor& bv, const Tensor& wo, const Tensor& bo,
                            int batch, int seq, int num_heads,
                            const std::vector<uint8_t>& mask) {
    const NodePtr& xn = nd(x);
    int h = x.cols();
    int n = x.rows();
    if (n != batch * seq) throw ShapeError("attention input rows != batch*seq");
    if (h % num_heads != 0) throw ShapeError("hidden dim not divisible by head count");
    if (static_cast<int>(mask.size()) != n) throw ShapeError("attention mask size mismatch");
    int hd = h / num_heads;
    double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    auto project = [&](const Tensor& w, const Tensor& b) {
        std::vector<double> p(static_cast<int64_t>(n) * h, 0.0);
        mm_nn(xn->value.data(), nd(w)->value.data(), p.data(), n, h, h);
        const auto& bias = nd(b)->value;
        for (int r = 0; r < n; ++r) {
            double* row = p.data() + static_cast<int64_t>(r) * h;
            for (int j = 0; j < h; ++j) row[j] += bias[j];
        }
        return p;
    };
    std::vector<double> q = project(wq, bq);
    std::vector<double> k = project(wk, bk);
    std::vector<double> v = project(wv, bv);

    // attn[b, head, i, j], row-wise softmax over j with padded keys masked out
    std::vector<double> attn(static_cast<int64_t>(batch) * num_heads * seq * seq);
    std::vector<double> ctx(static_cast<int64_t>(n) * h, 0.0);
    for (int b = 0; b < batch; ++b) {
        for (int head = 0; head < num_heads; ++head) {
            double* a_bh = attn.data() +
                           ((static_cast<int64_t>(b) * num_heads + head)) * seq * seq;
            for (int i = 0; i < seq; ++i) {
                const double* qi = q.data() + (static_cast<int64_t>(b) * seq + i) * h + head * hd;
                double* arow = a_bh + static_cast<int64_t>(i) * seq;
                double m = -1e300;
                for (int j = 0; j < seq; ++j) {
                    const double* kj =
                        k.data() + (static_cast<int64_t>(b) * seq + j) * h + head * hd;
                    double s = 0.0;
                    for (int c = 0; c < hd; ++c) s += qi[c] * kj[c];
                    s *= att_scale;
                    if (!mask[b * seq + j]) s = -1e30;
                    arow[j] = s;
                    m = std::max(m, s);
                }
                double z = 0.0;
                for (int j = 0; j < seq; ++j) {
                    arow[j] = std::exp(arow[j] - m);
                    z += arow[j];
                }
                for (int j = 0; j < seq; ++j) arow[j] /= z;
                double* ci = ctx.data() + (static_cast<int64_t>(b) * seq + i) * h + head * hd;
                for (int j = 0; j < seq; ++j) {
                    double a = arow[j];
                    if (a == 0.0) continue;
                    const double* vj =
                        v.data() + (static_cast<int64_t>(b) * seq + j) * h + head * hd;
                    for (int c = 0; c < hd; ++c) ci[c] += a * vj[c];
                }
            }
        }
    }

    std::vector<double> out(static_cast<int64_t>(n) * h, 0.0);
    mm_nn(ctx.data(), nd(wo)->value.data(), out.data(), n, h, h);
    const auto& bov = nd(bo)->value;
    for (int r = 0; r < n; ++r) {
        double* row = out.data() + static_cast<int64_t>(r) * h;
        for (int j = 0; j < h; ++j) row[j] += bov[j];
    }

    return make_op(
        "multi_head_attention", xn->shape, std::move(out),
        {x, wq, bq, wk, bk, wv, bv, wo, bo},
        [batch, seq, num_heads, h, hd, n, att_scale, q = std::move(q), k = std::move(k),
         v = std::move(v), attn = std::move(attn), ctx = std::move(ctx)](TensorNode& self) {
            TensorNode& X = *self.parents[0];
            TensorNode& Wq = *self.parents[1];
            TensorNode& Bq = *self.parents[2];
            TensorNode& Wk = *self.parents[3];
            TensorNode& Bk = *self.parents[4];
            TensorNode& Wv = *self.parents[5];
            TensorNode& Bv = *self.parents[6];
            TensorNode& Wo = *self.parents[7];
            TensorNode& Bo = *self.parents[8];
            const double* g = self.grad.data();

            // output projection
            if (Wo.requires_grad || Wo.interior()) {
                mm_tn(ctx.data(), g, Wo.ensure_grad().data(), h, n, h);
            }
            if (Bo.requires_grad || Bo.interior()) {
                std::vector<double>& dbo = Bo.ensure_grad();
                for (int r = 0; r < n; ++r) {
                    const double* row = g + static_cast<int64_t>(r) * h;
                    for (int j = 0; j < h; ++j) dbo[j] += row[j];
                }
            }
            std::vector<double> dctx(static_cast<int64_t>(n) * h, 0.0);
            mm_nt(g, Wo.value.data(), dctx.data(), n, h, h);

            std::vector<double> dq(static_cast<int64_t>(n) * h, 0.0);
            std::vector<double> dk(static_cast<int64_t>(n) * h, 0.0);
            std::vector<double> dv(static_cast<int64_t>(n) * h, 0.0);
            std::vector<double> drow(seq);
            for (int b = 0; b < batch; ++b) {
                for (int head = 0; head < num_heads; ++head) {
                    const double* a_bh =
                        attn.data() + ((static_cast<int64_t>(b) * num_heads + head)) * seq * seq;
                    for (int i = 0; i < seq; ++i) {
                        const int64_t ri = static_cast<int64_t>(b) * seq + i;
                        const double* dci = dctx.data() + ri * h + head * hd;
                        const double* arow = a_bh + static_cast<int64_t>(i) * seq;
                        // dattn and softmax backward
                        double dot = 0.0;
                        for (int j = 0; j < seq; ++j) {
                            const int64_t rj = static_cast<int64_t>(b) * seq + j;
                            const double* vj = v.data() + rj * h + head * hd;
                            double da = 0.0;
                            for (int c = 0; c < hd; ++c) da += dci[c] * vj[c];
                            drow[j] = da;
                            dot += da * arow[j];
                        }
                        for (int j = 0; j < seq; ++j) {
                            const int64_t rj = static_cast<int64_t>(b) * seq + j;
                            double a = arow[j];
                            double ds = a * (drow[j] - dot) * att_scale;
                            // dV accumulation
                            if (a != 0.0) {
                                double* dvj = dv.data() + rj * h + head * hd;
                                for (int c = 0; c < hd; ++c) dvj[c] += a * dci[c];
                            }
                            if (ds != 0.0) {
                                const double* kj = k.data() + rj * h + head * hd;
                                const double* qi = q.data() + ri * h + head * hd;
                                double* dqi = dq.data() + ri * h + head * hd;
                                double* dkj = dk.data() + rj * h + head * hd;
                                for (int c = 0; c < hd; ++c) {
                                    dqi[c] += ds * kj[c];
                                    dkj[c] += ds * qi[c];
                                }
                            }
                        }
                    }
                }
            }

            auto backprop_projection = [&](const std::vector<double>& dp, TensorNode& W,
                                           TensorNode& B) {
                if (W.requires_grad || W.interior()) {
                    mm_tn(X.value.data(), dp.data(), W.ensure_grad().data(), h, n, h);
                }
                if (B.requires_grad || B.interior()) {
                    std::vector<double>& db = B.ensure_grad();
                    for (int r = 0; r < n; ++r) {
                        const double* row = dp.data() + static_cast<int64_t>(r) * h;
                        for (int j = 0; j < h; ++j) db[j] += row[j];
                    }
                }
                if (X.requires_grad || X.interior()) {
                    mm_nt(dp.data(), W.value.data(), X.ensure_grad().data(), n, h, h);
                }
            };
            backprop_projection(dq, Wq, Bq);
            backprop_projection(dk, Wk, Bk);
            backprop_projection(dv, Wv, Bv);
        });
}

void backward(const Tensor& loss) {
    const NodePtr& root = nd(loss);
    if (root->size() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " +
                            shape_string(root->shape));
    }
    // iterative post-order DFS
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* p = node->parents[idx++].get();
            if (!visited.count(p) && p->interior()) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backprop && !node->grad.empty()) node->backprop(*node);
    }
}

std::vector<int> argmax_rows(const Tensor& x) {
    int d = x.cols();
    int rows = x.rows();
    std::vector<int> out(rows);
    const double* v = nd(x)->value.data();
    for (int r = 0; r < rows; ++r) {
        const double* row = v + static_cast<int64_t>(r) * d;
        int best = 0;
        for (int j = 1; j < d; ++j) {
            if (row[j] > row[best]) best = j;
        }
        out[r] = best;
    }
    return out;
}

}  // namespace hyperx

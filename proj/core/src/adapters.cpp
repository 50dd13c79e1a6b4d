#include "hyperx/adapters.hpp"

#include "hyperx/errors.hpp"

namespace hyperx {

Tensor adapter_forward(const Tensor& z, const AdapterWeights& w) {
    if (z.cols() != w.down_w.shape()[0]) {
        throw ShapeError("adapter input width " + std::to_string(z.cols()) +
                         " does not match down-projection " + shape_string(w.down_w.shape()));
    }
    Tensor bottleneck = relu(add_rowwise(matmul(z, w.down_w), w.down_b));
    Tensor up = add_rowwise(matmul(bottleneck, w.up_w), w.up_b);
    return add(up, z);
}

int64_t adapter_param_count(int hidden, int bottleneck, bool biases) {
    int64_t n = 2ll * hidden * bottleneck;
    if (biases) n += hidden + bottleneck;
    return n;
}

StaticAdapter::StaticAdapter(const std::string& name, int num_layers, int hidden, int bottleneck,
                             Rng& rng) {
    layers_.reserve(num_layers);
    for (int i = 0; i < num_layers; ++i) {
        std::string base = name + "." + std::to_string(i) + ".";
        AdapterWeights w;
        w.layer = i;
        w.down_w = Tensor::randn({hidden, bottleneck}, rng, 0.02, true);
        w.down_b = Tensor::zeros({bottleneck}, true);
        w.up_w = Tensor::zeros({bottleneck, hidden}, true);
        w.up_b = Tensor::zeros({hidden}, true);
        params_.add(base + "D", w.down_w);
        params_.add(base + "d_bias", w.down_b);
        params_.add(base + "U", w.up_w);
        params_.add(base + "u_bias", w.up_b);
        layers_.push_back(std::move(w));
    }
}

AdapterWeights StaticAdapter::layer(int i) const {
    if (i < 0 || i >= static_cast<int>(layers_.size())) {
        throw LookupError("adapter layer " + std::to_string(i) + " out of range");
    }
    return layers_[i];
}

Tensor madx_forward(const Tensor& z, const StaticAdapterStack& stack, int layer) {
    Tensor out = z;
    if (stack.language != nullptr) out = adapter_forward(out, stack.language->layer(layer));
    if (stack.task != nullptr) out = adapter_forward(out, stack.task->layer(layer));
    return out;
}

int64_t Census::total_trainable() const {
    int64_t n = 0;
    for (const auto& [k, v] : trainable) n += v;
    return n;
}

int64_t Census::total_frozen() const {
    int64_t n = 0;
    for (const auto& [k, v] : frozen) n += v;
    return n;
}

void Census::add(const std::string& module, const ParameterStore& store) {
    for (const auto& [name, t] : store.entries()) {
        if (t.requires_grad()) {
            trainable[module] += t.size();
        } else {
            frozen[module] += t.size();
        }
    }
}

void Census::add_tensor(const std::string& module, const Tensor& t) {
    if (t.requires_grad()) {
        trainable[module] += t.size();
    } else {
        frozen[module] += t.size();
    }
}

}  // namespace hyperx

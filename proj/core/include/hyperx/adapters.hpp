#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hyperx/params.hpp"
#include "hyperx/tensor.hpp"

namespace hyperx {

/// One layer's bottleneck-adapter weights. down_w is (h, b), up_w is (b, h);
/// biases have widths b and h. For generated adapters these tensors are graph
/// nodes owned by the hypernetwork, never independent trainables.
struct AdapterWeights {
    Tensor down_w;
    Tensor down_b;
    Tensor up_w;
    Tensor up_b;
    int layer = 0;
};

/// Bottleneck adapter with residual: out = relu(z*D + d_b)*U + u_b + z.
Tensor adapter_forward(const Tensor& z, const AdapterWeights& w);

/// Per-layer adapter hook applied by the encoder at the end of each layer.
using AdapterHook = std::function<Tensor(const Tensor& z, int layer)>;

/// Flat parameter count of one adapter: 2hb + b + h with biases, 2hb without.
int64_t adapter_param_count(int hidden, int bottleneck, bool biases = true);

/// Independently trained adapter stack for one (task or language) source:
/// one AdapterWeights per transformer layer, parameters registered in a
/// ParameterStore so they can be frozen, counted and checkpointed.
class StaticAdapter {
  public:
    StaticAdapter() = default;
    /// Near-identity init: down-projection Gaussian (std 0.02), up-projection
    /// and biases zero.
    StaticAdapter(const std::string& name, int num_layers, int hidden, int bottleneck, Rng& rng);

    AdapterWeights layer(int i) const;
    int num_layers() const { return static_cast<int>(layers_.size()); }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

  private:
    std::vector<AdapterWeights> layers_;
    ParameterStore params_;
};

/// MAD-X style composition: language adapter then task adapter, each with
/// its own residual.
struct StaticAdapterStack {
    const StaticAdapter* language = nullptr;
    const StaticAdapter* task = nullptr;
};

Tensor madx_forward(const Tensor& z, const StaticAdapterStack& stack, int layer);

/// Exact parameter census, split by trainability.
struct Census {
    std::map<std::string, int64_t> trainable;
    std::map<std::string, int64_t> frozen;

    int64_t total_trainable() const;
    int64_t total_frozen() const;
    void add(const std::string& module, const ParameterStore& store);
    void add_tensor(const std::string& module, const Tensor& t);
};

}  // namespace hyperx

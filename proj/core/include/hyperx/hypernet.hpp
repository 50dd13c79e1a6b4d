#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hyperx/adapters.hpp"
#include "hyperx/params.hpp"
#include "hyperx/tensor.hpp"

namespace hyperx {

enum class SourceKind { task, language };

/// Learnable source embeddings for tasks, languages and layers. Each task and
/// language owns its own rank-1 parameter tensor, so an update step touches
/// exactly the embeddings that appeared in the batch. MLM is registered as a
/// task like any other.
class SourceEmbeddingRegistry {
  public:
    SourceEmbeddingRegistry() = default;
    SourceEmbeddingRegistry(int dim_task, int dim_language, int dim_layer, int num_layers,
                            Rng& rng);

    /// Registers a new task or language; returns its stable id.
    int register_source(SourceKind kind, const std::string& name);

    int task_id(const std::string& name) const;
    int language_id(const std::string& name) const;
    bool has_task(const std::string& name) const;
    bool has_language(const std::string& name) const;

    const Tensor& task_embedding(int id) const;
    const Tensor& language_embedding(int id) const;
    const Tensor& layer_embedding(int layer) const;

    int num_tasks() const { return static_cast<int>(task_rows_.size()); }
    int num_languages() const { return static_cast<int>(language_rows_.size()); }
    int num_layers() const { return static_cast<int>(layer_rows_.size()); }
    const std::vector<std::string>& task_names() const { return task_names_; }
    const std::vector<std::string>& language_names() const { return language_names_; }

    int dim_task() const { return dim_task_; }
    int dim_language() const { return dim_language_; }
    int dim_layer() const { return dim_layer_; }

    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

  private:
    int dim_task_ = 0, dim_language_ = 0, dim_layer_ = 0;
    double init_std_ = 0.02;
    Rng rng_{0};
    std::vector<Tensor> task_rows_, language_rows_, layer_rows_;
    std::vector<std::string> task_names_, language_names_;
    std::map<std::string, int> task_index_, language_index_;
    ParameterStore params_;
};

struct HypernetConfig {
    int dim_task = 16;
    int dim_language = 16;
    int dim_layer = 16;
    int dim_projected = 8;     // d_p
    int projector_hidden = 0;  // 0 = use d_s
    int hidden = 64;           // backbone h
    int bottleneck = 16;       // adapter b
    bool generate_biases = true;

    int dim_source() const { return dim_task + dim_language + dim_layer; }
    int64_t adapter_flat_size() const {
        return adapter_param_count(hidden, bottleneck, generate_biases);
    }
};

/// The unified generator: a two-layer source projector over the concatenated
/// (language, task, layer) embeddings followed by one shared affine map that
/// emits a flat adapter-parameter vector. The generator weights and bias
/// start at zero, so every generated adapter is an exact identity at step 0.
class Hypernet {
  public:
    Hypernet() = default;
    Hypernet(HypernetConfig cfg, int num_layers, Rng& rng);

    SourceEmbeddingRegistry& registry() { return registry_; }
    const SourceEmbeddingRegistry& registry() const { return registry_; }
    const HypernetConfig& config() const { return cfg_; }

    /// Concatenate s(l) + s(t) + s(i) and project to d_p.
    Tensor combine_sources(int task, int language, int layer) const;

    /// Generate one layer's adapter. The flat vector is split in the fixed
    /// order: D row-major, then the down bias, then U row-major, then the up
    /// bias. Weights stay attached to the autodiff graph.
    AdapterWeights generate_adapter(int task, int language, int layer) const;

    /// All L adapters for one (task, language) pair.
    std::vector<AdapterWeights> generate_stack(int task, int language) const;

    /// Hook suitable for the encoder, bound to a (task, language) pair.
    AdapterHook hook(int task, int language) const;

    /// Per-component census over the hypernetwork itself (embeddings,
    /// projector, generator).
    Census census() const;

    /// Trainable parameter count of L hypothetical per-layer generators of
    /// identical shape (same projector and generator dims, task + language
    /// embeddings, no layer embeddings).
    int64_t per_layer_equivalent_census() const;

    /// Projector and generator parameters.
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    /// Projector/generator parameters plus every registered embedding row,
    /// as one flat store (checkpoint layout).
    ParameterStore params_with_embeddings() const;

    /// Embedding tables as CSV (row = source name, columns = dims).
    std::string embeddings_csv(SourceKind kind) const;

  private:
    HypernetConfig cfg_;
    SourceEmbeddingRegistry registry_;
    Tensor proj_w1_, proj_b1_, proj_w2_, proj_b2_;
    Tensor gen_w_, gen_b_;
    Tensor zero_down_b_, zero_up_b_;  // constants for the biases-off ablation
    ParameterStore params_;
};

}  // namespace hyperx

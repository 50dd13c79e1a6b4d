#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hyperx/tensor.hpp"

namespace hyperx {

/// Ordered collection of named parameters. Names are stable dot-delimited
/// paths (layer.2.ffn.w1). Iteration order is lexicographic, which makes
/// checkpoints, censuses and digests deterministic.
class ParameterStore {
  public:
    void add(const std::string& name, Tensor t);
    bool contains(const std::string& name) const;
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;

    std::map<std::string, Tensor>& entries() { return params_; }
    const std::map<std::string, Tensor>& entries() const { return params_; }

    /// Total element count over params matching the prefix ("" = all).
    int64_t count(const std::string& prefix = "") const;
    int64_t count_trainable(const std::string& prefix = "") const;

    std::vector<Tensor> tensors() const;
    std::vector<Tensor> trainable() const;
    std::vector<std::string> names() const;

    void set_trainable(const std::string& prefix, bool trainable);
    void freeze_all() { set_trainable("", false); }

    /// Combined digest over params matching the prefix, name-order stable.
    uint64_t digest(const std::string& prefix = "") const;

    /// One HXT1 file per parameter, named <name>.hxt, in dir.
    void save(const std::filesystem::path& dir) const;
    /// Loads values into existing entries; every entry must be present on
    /// disk with a matching shape.
    void load(const std::filesystem::path& dir);

    /// New store with independent tensors (values and trainability copied).
    ParameterStore deep_clone() const;
    /// Copies values and trainability of identically named entries from src;
    /// every entry of this store must exist in src with a matching shape.
    void copy_values_from(const ParameterStore& src);

  private:
    std::map<std::string, Tensor> params_;
};

}  // namespace hyperx

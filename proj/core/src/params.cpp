#include "hyperx/params.hpp"

#include "hyperx/errors.hpp"
#include "hyperx/serialize.hpp"

namespace hyperx {

void ParameterStore::add(const std::string& name, Tensor t) {
    if (params_.count(name)) throw ContractError("duplicate parameter name " + name);
    if (!t.defined()) throw ContractError("undefined tensor for parameter " + name);
    params_.emplace(name, std::move(t));
}

bool ParameterStore::contains(const std::string& name) const { return params_.count(name) > 0; }

Tensor& ParameterStore::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw LookupError("unknown parameter " + name);
    return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw LookupError("unknown parameter " + name);
    return it->second;
}

int64_t ParameterStore::count(const std::string& prefix) const {
    int64_t n = 0;
    for (const auto& [name, t] : params_) {
        if (name.rfind(prefix, 0) == 0) n += t.size();
    }
    return n;
}

int64_t ParameterStore::count_trainable(const std::string& prefix) const {
    int64_t n = 0;
    for (const auto& [name, t] : params_) {
        if (name.rfind(prefix, 0) == 0 && t.requires_grad()) n += t.size();
    }
    return n;
}

std::vector<Tensor> ParameterStore::tensors() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& [name, t] : params_) out.push_back(t);
    return out;
}

std::vector<Tensor> ParameterStore::trainable() const {
    std::vector<Tensor> out;
    for (const auto& [name, t] : params_) {
        if (t.requires_grad()) out.push_back(t);
    }
    return out;
}

std::vector<std::string> ParameterStore::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [name, t] : params_) out.push_back(name);
    return out;
}

void ParameterStore::set_trainable(const std::string& prefix, bool trainable) {
    for (auto& [name, t] : params_) {
        if (name.rfind(prefix, 0) == 0) t.set_requires_grad(trainable);
    }
}

uint64_t ParameterStore::digest(const std::string& prefix) const {
    uint64_t h = 1469598103934665603ull;
    for (const auto& [name, t] : params_) {
        if (name.rfind(prefix, 0) != 0) continue;
        for (unsigned char c : name) {
            h ^= c;
            h *= 1099511628211ull;
        }
        uint64_t td = tensor_digest(t);
        for (int i = 0; i < 8; ++i) {
            h ^= (td >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    }
    return h;
}

void ParameterStore::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    for (const auto& [name, t] : params_) {
        save_tensor(dir / (name + ".hxt"), t);
    }
}

void ParameterStore::load(const std::filesystem::path& dir) {
    for (auto& [name, t] : params_) {
        std::filesystem::path file = dir / (name + ".hxt");
        if (!std::filesystem::exists(file)) {
            throw IoError("checkpoint is missing parameter file " + file.string());
        }
        Tensor loaded = load_tensor(file);
        if (loaded.shape() != t.shape()) {
            throw ShapeError("checkpoint shape mismatch for " + name + ": expected " +
                             shape_string(t.shape()) + ", file has " +
                             shape_string(loaded.shape()));
        }
        std::span<double> dst = t.mutable_data();
        std::span<const double> src = loaded.data();
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

ParameterStore ParameterStore::deep_clone() const {
    ParameterStore out;
    for (const auto& [name, t] : params_) {
        std::span<const double> src = t.data();
        Tensor copy = Tensor::from_data(t.shape(), std::vector<double>(src.begin(), src.end()),
                                        t.requires_grad());
        out.add(name, std::move(copy));
    }
    return out;
}

void ParameterStore::copy_values_from(const ParameterStore& src) {
    for (auto& [name, t] : params_) {
        const Tensor& s = src.get(name);
        if (s.shape() != t.shape()) {
            throw ShapeError("copy_values_from shape mismatch for " + name);
        }
        std::span<const double> sv = s.data();
        std::span<double> dv = t.mutable_data();
        std::copy(sv.begin(), sv.end(), dv.begin());
        t.set_requires_grad(s.requires_grad());
    }
}

}  // namespace hyperx

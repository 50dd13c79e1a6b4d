#include "hyperx/hypernet.hpp"

#include <sstream>

#include "hyperx/errors.hpp"

namespace hyperx {

SourceEmbeddingRegistry::SourceEmbeddingRegistry(int dim_task, int dim_language, int dim_layer,
                                                 int num_layers, Rng& rng)
    : dim_task_(dim_task),
      dim_language_(dim_language),
      dim_layer_(dim_layer),
      rng_(rng.child("registry")) {
    layer_rows_.reserve(num_layers);
    for (int i = 0; i < num_layers; ++i) {
        Tensor row = Tensor::randn({dim_layer_}, rng_, init_std_, true);
        params_.add("layer_emb." + std::to_string(i), row);
        layer_rows_.push_back(std::move(row));
    }
}

int SourceEmbeddingRegistry::register_source(SourceKind kind, const std::string& name) {
    auto& index = kind == SourceKind::task ? task_index_ : language_index_;
    if (index.count(name)) {
        throw ContractError("source '" + name + "' already registered");
    }
    auto& rows = kind == SourceKind::task ? task_rows_ : language_rows_;
    auto& names = kind == SourceKind::task ? task_names_ : language_names_;
    int dim = kind == SourceKind::task ? dim_task_ : dim_language_;
    const char* prefix = kind == SourceKind::task ? "task_emb." : "lang_emb.";
    Tensor row = Tensor::randn({dim}, rng_, init_std_, true);
    params_.add(prefix + name, row);
    int id = static_cast<int>(rows.size());
    rows.push_back(std::move(row));
    names.push_back(name);
    index.emplace(name, id);
    return id;
}

int SourceEmbeddingRegistry::task_id(const std::string& name) const {
    auto it = task_index_.find(name);
    if (it == task_index_.end()) throw LookupError("unknown task '" + name + "'");
    return it->second;
}

int SourceEmbeddingRegistry::language_id(const std::string& name) const {
    auto it = language_index_.find(name);
    if (it == language_index_.end()) throw LookupError("unknown language '" + name + "'");
    return it->second;
}

bool SourceEmbeddingRegistry::has_task(const std::string& name) const {
    return task_index_.count(name) > 0;
}

bool SourceEmbeddingRegistry::has_language(const std::string& name) const {
    return language_index_.count(name) > 0;
}

const Tensor& SourceEmbeddingRegistry::task_embedding(int id) const {
    if (id < 0 || id >= num_tasks()) throw LookupError("task id out of range");
    return task_rows_[id];
}

const Tensor& SourceEmbeddingRegistry::language_embedding(int id) const {
    if (id < 0 || id >= num_languages()) throw LookupError("language id out of range");
    return language_rows_[id];
}

const Tensor& SourceEmbeddingRegistry::layer_embedding(int layer) const {
    if (layer < 0 || layer >= num_layers()) throw LookupError("layer index out of range");
    return layer_rows_[layer];
}

Hypernet::Hypernet(HypernetConfig cfg, int num_layers, Rng& rng) : cfg_(cfg) {
    Rng init = rng.child("hypernet.init");
    registry_ = SourceEmbeddingRegistry(cfg.dim_task, cfg.dim_language, cfg.dim_layer, num_layers,
                                        rng);
    int ds = cfg.dim_source();
    int hidden = cfg.projector_hidden > 0 ? cfg.projector_hidden : ds;
    int64_t da = cfg.adapter_flat_size();

    proj_w1_ = Tensor::randn({ds, hidden}, init, 0.02, true);
    proj_b1_ = Tensor::zeros({hidden}, true);
    proj_w2_ = Tensor::randn({hidden, cfg.dim_projected}, init, 0.02, true);
    proj_b2_ = Tensor::zeros({cfg.dim_projected}, true);
    // zero generator: every adapter starts as the identity
    gen_w_ = Tensor::zeros({cfg.dim_projected, static_cast<int>(da)}, true);
    gen_b_ = Tensor::zeros({static_cast<int>(da)}, true);
    params_.add("proj.w1", proj_w1_);
    params_.add("proj.b1", proj_b1_);
    params_.add("proj.w2", proj_w2_);
    params_.add("proj.b2", proj_b2_);
    params_.add("gen.w", gen_w_);
    params_.add("gen.b", gen_b_);
    if (!cfg.generate_biases) {
        zero_down_b_ = Tensor::zeros({cfg.bottleneck});
        zero_up_b_ = Tensor::zeros({cfg.hidden});
    }
}

Tensor Hypernet::combine_sources(int task, int language, int layer) const {
    Tensor s_h = concat({registry_.language_embedding(language), registry_.task_embedding(task),
                         registry_.layer_embedding(layer)});
    Tensor hidden = relu(add_rowwise(matmul(s_h, proj_w1_), proj_b1_));
    return add_rowwise(matmul(hidden, proj_w2_), proj_b2_);
}

AdapterWeights Hypernet::generate_adapter(int task, int language, int layer) const {
    int h = cfg_.hidden;
    int b = cfg_.bottleneck;
    Tensor flat = add_rowwise(matmul(combine_sources(task, language, layer), gen_w_), gen_b_);
    AdapterWeights w;
    w.layer = layer;
    int off = 0;
    w.down_w = reshape(slice(flat, off, off + h * b), {h, b});
    off += h * b;
    if (cfg_.generate_biases) {
        w.down_b = slice(flat, off, off + b);
        off += b;
    } else {
        w.down_b = zero_down_b_;
    }
    w.up_w = reshape(slice(flat, off, off + b * h), {b, h});
    off += b * h;
    if (cfg_.generate_biases) {
        w.up_b = slice(flat, off, off + h);
    } else {
        w.up_b = zero_up_b_;
    }
    return w;
}

std::vector<AdapterWeights> Hypernet::generate_stack(int task, int language) const {
    std::vector<AdapterWeights> out;
    out.reserve(registry_.num_layers());
    for (int i = 0; i < registry_.num_layers(); ++i) {
        out.push_back(generate_adapter(task, language, i));
    }
    return out;
}

AdapterHook Hypernet::hook(int task, int language) const {
    auto stack = std::make_shared<std::vector<AdapterWeights>>(generate_stack(task, language));
    return [stack](const Tensor& z, int layer) {
        return adapter_forward(z, stack->at(layer));
    };
}

Census Hypernet::census() const {
    Census c;
    for (const auto& [name, t] : registry_.params().entries()) {
        c.add_tensor("hypernet.embeddings", t);
    }
    c.add_tensor("hypernet.projector", proj_w1_);
    c.add_tensor("hypernet.projector", proj_b1_);
    c.add_tensor("hypernet.projector", proj_w2_);
    c.add_tensor("hypernet.projector", proj_b2_);
    c.add_tensor("hypernet.generator", gen_w_);
    c.add_tensor("hypernet.generator", gen_b_);
    return c;
}

int64_t Hypernet::per_layer_equivalent_census() const {
    int ds = cfg_.dim_source();
    int hidden = cfg_.projector_hidden > 0 ? cfg_.projector_hidden : ds;
    int64_t da = cfg_.adapter_flat_size();
    int64_t projector = static_cast<int64_t>(ds) * hidden + hidden +
                        static_cast<int64_t>(hidden) * cfg_.dim_projected + cfg_.dim_projected;
    int64_t generator = (cfg_.dim_projected + 1) * da;
    int64_t embeddings = static_cast<int64_t>(registry_.num_tasks()) * cfg_.dim_task +
                         static_cast<int64_t>(registry_.num_languages()) * cfg_.dim_language;
    return registry_.num_layers() * (projector + generator + embeddings);
}

ParameterStore Hypernet::params_with_embeddings() const {
    ParameterStore all;
    for (const auto& [name, t] : params_.entries()) all.add(name, t);
    for (const auto& [name, t] : registry_.params().entries()) all.add(name, t);
    return all;
}

std::string Hypernet::embeddings_csv(SourceKind kind) const {
    const auto& names =
        kind == SourceKind::task ? registry_.task_names() : registry_.language_names();
    int dim = kind == SourceKind::task ? cfg_.dim_task : cfg_.dim_language;
    std::ostringstream os;
    os << "name";
    for (int j = 0; j < dim; ++j) os << ",d" << j;
    os << "\n";
    for (size_t i = 0; i < names.size(); ++i) {
        const Tensor& row = kind == SourceKind::task
                                ? registry_.task_embedding(static_cast<int>(i))
                                : registry_.language_embedding(static_cast<int>(i));
        os << names[i];
        for (double v : row.data()) os << "," << v;
        os << "\n";
    }
    return os.str();
}

}  // namespace hyperx

#include "hyperx/model.hpp"

#include <algorithm>

#include "hyperx/errors.hpp"
#include "hyperx/serialize.hpp"

namespace hyperx {

const char* system_name(System s) {
    switch (s) {
        case System::hyperx: return "hyperx";
        case System::full_finetune: return "full_finetune";
        case System::madx: return "madx";
    }
    return "?";
}

System parse_system(const std::string& name) {
    if (name == "hyperx") return System::hyperx;
    if (name == "full_finetune") return System::full_finetune;
    if (name == "madx") return System::madx;
    throw ConfigError("unknown system '" + name + "' (expected hyperx, full_finetune or madx)");
}

Model Model::create(System system, Backbone backbone, const LanguageFamily& family,
                    const ModelOptions& opts) {
    Model m;
    m.system_ = system;
    m.backbone_ = std::move(backbone);
    m.family_ = &family;
    m.opts_ = opts;
    Rng rng(opts.seed);

    switch (system) {
        case System::hyperx: {
            m.backbone_.freeze();
            m.backbone_.set_layer_norms_trainable(true);
            HypernetConfig hcfg = opts.hypernet;
            hcfg.hidden = m.backbone_.config().hidden;
            Rng hrng = rng.child("init.hypernet");
            m.hypernet_ = std::make_unique<Hypernet>(hcfg, m.backbone_.config().num_layers, hrng);
            m.hypernet_->registry().register_source(SourceKind::task, "mlm");
            m.hypernet_->registry().register_source(SourceKind::task, "cat");
            m.hypernet_->registry().register_source(SourceKind::task, "bio");
            for (const std::string& lang : family.language_names()) {
                m.hypernet_->registry().register_source(SourceKind::language, lang);
            }
            break;
        }
        case System::full_finetune:
            m.backbone_.params().set_trainable("", true);
            break;
        case System::madx: {
            m.backbone_.freeze();
            Rng arng = rng.child("init.adapters");
            int h = m.backbone_.config().hidden;
            int layers = m.backbone_.config().num_layers;
            for (const std::string& lang : family.language_names()) {
                m.lang_adapters_.emplace(
                    lang, StaticAdapter("adapter.mlm." + lang, layers, h,
                                        opts.madx_lang_bottleneck, arng));
            }
            for (const std::string task : {"cat", "bio"}) {
                m.task_adapters_.emplace(
                    task, StaticAdapter("adapter." + task + ".all", layers, h,
                                        opts.madx_task_bottleneck, arng));
            }
            break;
        }
    }

    Rng head_rng = rng.child("init.heads");
    int h = m.backbone_.config().hidden;
    m.head_label_counts_["cat"] = static_cast<int>(LanguageFamily::cat_labels().size());
    m.head_label_counts_["bio"] = static_cast<int>(family.bio_labels().size());
    for (const auto& [task, labels] : m.head_label_counts_) {
        TaskHead head;
        head.w = Tensor::randn({h, labels}, head_rng, 0.02, true);
        head.b = Tensor::zeros({labels}, true);
        m.heads_.emplace(task, std::move(head));
    }
    return m;
}

Hypernet& Model::hypernet() {
    if (!hypernet_) throw ContractError("model has no hypernetwork");
    return *hypernet_;
}

const Hypernet& Model::hypernet() const {
    if (!hypernet_) throw ContractError("model has no hypernetwork");
    return *hypernet_;
}

int Model::head_labels(const std::string& task) const {
    auto it = head_label_counts_.find(task);
    if (it == head_label_counts_.end()) throw LookupError("unknown task '" + task + "'");
    return it->second;
}

AdapterHook Model::adapter_hook(const std::string& task, const std::string& language) const {
    switch (system_) {
        case System::full_finetune:
            return nullptr;
        case System::hyperx: {
            const auto& reg = hypernet_->registry();
            return hypernet_->hook(reg.task_id(task), reg.language_id(language));
        }
        case System::madx: {
            auto lit = lang_adapters_.find(language);
            if (lit == lang_adapters_.end()) throw LookupError("no language adapter for " + language);
            auto tit = task_adapters_.find(task);
            if (tit == task_adapters_.end()) throw LookupError("no task adapter for " + task);
            const StaticAdapter* lang_ad = &lit->second;
            const StaticAdapter* task_ad = &tit->second;
            return [lang_ad, task_ad](const Tensor& z, int layer) {
                StaticAdapterStack stack{lang_ad, task_ad};
                return madx_forward(z, stack, layer);
            };
        }
    }
    return nullptr;
}

AdapterHook Model::mlm_hook(const std::string& language) const {
    switch (system_) {
        case System::full_finetune:
            return nullptr;
        case System::hyperx: {
            const auto& reg = hypernet_->registry();
            return hypernet_->hook(reg.task_id("mlm"), reg.language_id(language));
        }
        case System::madx: {
            auto lit = lang_adapters_.find(language);
            if (lit == lang_adapters_.end()) throw LookupError("no language adapter for " + language);
            const StaticAdapter* lang_ad = &lit->second;
            return [lang_ad](const Tensor& z, int layer) {
                StaticAdapterStack stack{lang_ad, nullptr};
                return madx_forward(z, stack, layer);
            };
        }
    }
    return nullptr;
}

Tensor Model::tagging_loss(const std::string& task, const std::string& language,
                           const std::vector<const AnnotatedSentence*>& sentences, bool training,
                           Rng* dropout_rng) {
    TokenBatch batch = TokenBatch::from_sentences(sentences);
    std::vector<int> positions;
    std::vector<int> labels;
    for (int r = 0; r < batch.batch; ++r) {
        const AnnotatedSentence* s = sentences[r];
        const std::vector<int>& tags = task == "bio" ? s->bio_tags : s->cat_tags;
        for (size_t i = 0; i < tags.size(); ++i) {
            positions.push_back(r * batch.seq + static_cast<int>(i));
            labels.push_back(tags[i]);
        }
    }
    AdapterHook hook = adapter_hook(task, language);
    std::vector<Tensor> hidden =
        backbone_.encode(batch, hook ? &hook : nullptr, training, dropout_rng);
    const TaskHead& head = heads_.at(task);
    Tensor selected = gather_rows(hidden.back(), positions);
    Tensor logits = add_rowwise(matmul(selected, head.w), head.b);
    return cross_entropy(logits, labels);
}

Tensor Model::mlm_loss_for(const std::string& language,
                           const std::vector<const AnnotatedSentence*>& sentences, Rng& mask_rng,
                           bool training, Rng* dropout_rng) {
    TokenBatch batch = TokenBatch::from_sentences(sentences);
    AdapterHook hook = mlm_hook(language);
    return backbone_.mlm_loss(batch, backbone_.config().mlm_mask_rate, mask_rng,
                              family_->vocab().used(), hook ? &hook : nullptr, training,
                              dropout_rng);
}

std::vector<std::vector<int>> Model::predict_tags(const std::string& task,
                                                  const std::string& language,
                                                  const std::vector<AnnotatedSentence>& sentences,
                                                  int eval_batch) const {
    NoGradGuard no_grad;
    std::vector<std::vector<int>> out;
    out.reserve(sentences.size());
    AdapterHook hook = adapter_hook(task, language);
    const TaskHead& head = heads_.at(task);
    for (size_t start = 0; start < sentences.size(); start += eval_batch) {
        size_t stop = std::min(sentences.size(), start + eval_batch);
        std::vector<const AnnotatedSentence*> chunk;
        chunk.reserve(stop - start);
        for (size_t i = start; i < stop; ++i) chunk.push_back(&sentences[i]);
        TokenBatch batch = TokenBatch::from_sentences(chunk);
        std::vector<Tensor> hidden = backbone_.encode(batch, hook ? &hook : nullptr, false, nullptr);
        Tensor logits = add_rowwise(matmul(hidden.back(), head.w), head.b);
        std::vector<int> flat = argmax_rows(logits);
        for (size_t i = 0; i < chunk.size(); ++i) {
            size_t len = chunk[i]->token_ids.size();
            std::vector<int> tags(flat.begin() + i * batch.seq,
                                  flat.begin() + i * batch.seq + len);
            out.push_back(std::move(tags));
        }
    }
    return out;
}

TagPredictor Model::predictor() const {
    return [this](const std::string& task, const std::string& language,
                  const std::vector<AnnotatedSentence>& sentences) {
        return predict_tags(task, language, sentences);
    };
}

std::vector<Tensor> Model::trainables() const {
    std::vector<Tensor> out;
    auto append_store = [&out](const ParameterStore& store, auto&& filter) {
        for (const auto& [name, t] : store.entries()) {
            if (t.requires_grad() && filter(name)) out.push_back(t);
        }
    };
    switch (system_) {
        case System::hyperx:
            append_store(hypernet_->params(), [](const std::string&) { return true; });
            append_store(hypernet_->registry().params(), [](const std::string&) { return true; });
            append_store(backbone_.params(),
                         [](const std::string& n) { return Backbone::is_layer_norm_param(n); });
            break;
        case System::full_finetune:
            append_store(backbone_.params(), [](const std::string&) { return true; });
            break;
        case System::madx:
            // stage-specific; the standard list is empty
            break;
    }
    for (const auto& [task, head] : heads_) {
        out.push_back(head.w);
        out.push_back(head.b);
    }
    return out;
}

std::vector<Tensor> Model::madx_stage_trainables(MadxStage stage, const std::string& name) const {
    if (system_ != System::madx) throw ContractError("madx stages on a non-madx model");
    std::vector<Tensor> out;
    if (stage == MadxStage::language) {
        auto it = lang_adapters_.find(name);
        if (it == lang_adapters_.end()) throw LookupError("no language adapter for " + name);
        for (const auto& [n, t] : it->second.params().entries()) out.push_back(t);
    } else {
        auto it = task_adapters_.find(name);
        if (it == task_adapters_.end()) throw LookupError("no task adapter for " + name);
        for (const auto& [n, t] : it->second.params().entries()) out.push_back(t);
        auto hit = heads_.find(name);
        if (hit == heads_.end()) throw LookupError("no head for task " + name);
        out.push_back(hit->second.w);
        out.push_back(hit->second.b);
    }
    return out;
}

Census Model::census() const {
    Census c;
    for (const auto& [name, t] : backbone_.params().entries()) {
        c.add_tensor(Backbone::is_layer_norm_param(name) ? "backbone.layer_norm" : "backbone.main",
                     t);
    }
    if (hypernet_) {
        Census hc = hypernet_->census();
        for (const auto& [k, v] : hc.trainable) c.trainable[k] += v;
        for (const auto& [k, v] : hc.frozen) c.frozen[k] += v;
    }
    for (const auto& [lang, ad] : lang_adapters_) c.add("adapters.language", ad.params());
    for (const auto& [task, ad] : task_adapters_) c.add("adapters.task", ad.params());
    for (const auto& [task, head] : heads_) {
        c.add_tensor("heads", head.w);
        c.add_tensor("heads", head.b);
    }
    return c;
}

ParameterStore Model::checkpoint_params() const {
    ParameterStore store;
    switch (system_) {
        case System::hyperx: {
            ParameterStore hs = hypernet_->params_with_embeddings();
            for (const auto& [name, t] : hs.entries()) store.add("hypernet." + name, t);
            for (const auto& [name, t] : backbone_.params().entries()) {
                if (Backbone::is_layer_norm_param(name)) store.add("backbone." + name, t);
            }
            break;
        }
        case System::full_finetune:
            for (const auto& [name, t] : backbone_.params().entries()) {
                store.add("backbone." + name, t);
            }
            break;
        case System::madx:
            for (const auto& [lang, ad] : lang_adapters_) {
                for (const auto& [name, t] : ad.params().entries()) store.add(name, t);
            }
            for (const auto& [task, ad] : task_adapters_) {
                for (const auto& [name, t] : ad.params().entries()) store.add(name, t);
            }
            break;
    }
    for (const auto& [task, head] : heads_) {
        store.add("head." + task + ".w", head.w);
        store.add("head." + task + ".b", head.b);
    }
    return store;
}

void Model::save_checkpoint(const std::filesystem::path& dir) const {
    checkpoint_params().save(dir);
}

void Model::load_checkpoint(const std::filesystem::path& dir) {
    ParameterStore store = checkpoint_params();
    store.load(dir);
}

void Model::reset_head(const std::string& task, int num_labels, uint64_t seed) {
    if (!heads_.count(task)) throw LookupError("unknown task '" + task + "'");
    Rng rng(Rng::mix(seed, "reset_head." + task));
    TaskHead head;
    head.w = Tensor::randn({backbone_.config().hidden, num_labels}, rng, 0.02, true);
    head.b = Tensor::zeros({num_labels}, true);
    heads_[task] = std::move(head);
    head_label_counts_[task] = num_labels;
}

StaticAdapter& Model::language_adapter(const std::string& language) {
    auto it = lang_adapters_.find(language);
    if (it == lang_adapters_.end()) throw LookupError("no language adapter for " + language);
    return it->second;
}

StaticAdapter& Model::task_adapter(const std::string& task) {
    auto it = task_adapters_.find(task);
    if (it == task_adapters_.end()) throw LookupError("no task adapter for " + task);
    return it->second;
}

void Model::export_adapters(const std::filesystem::path& dir, const std::string& task,
                            const std::string& language) const {
    std::filesystem::create_directories(dir);
    auto dump = [&](const AdapterWeights& w, int layer) {
        std::string base =
            "adapter." + task + "." + language + "." + std::to_string(layer) + ".";
        save_tensor(dir / (base + "D.hxt"), w.down_w.detach());
        save_tensor(dir / (base + "d_bias.hxt"), w.down_b.detach());
        save_tensor(dir / (base + "U.hxt"), w.up_w.detach());
        save_tensor(dir / (base + "u_bias.hxt"), w.up_b.detach());
    };
    int layers = backbone_.config().num_layers;
    switch (system_) {
        case System::hyperx: {
            NoGradGuard no_grad;
            const auto& reg = hypernet_->registry();
            std::vector<AdapterWeights> stack =
                hypernet_->generate_stack(reg.task_id(task), reg.language_id(language));
            for (int i = 0; i < layers; ++i) dump(stack[i], i);
            break;
        }
        case System::madx: {
            const StaticAdapter& lang_ad = lang_adapters_.at(language);
            for (int i = 0; i < layers; ++i) dump(lang_ad.layer(i), i);
            break;
        }
        case System::full_finetune:
            throw ContractError("full fine-tuning has no adapters to export");
    }
}

Model Model::clone() const {
    Model m;
    m.system_ = system_;
    m.backbone_ = backbone_.clone();
    m.family_ = family_;
    m.opts_ = opts_;
    m.head_label_counts_ = head_label_counts_;
    if (hypernet_) {
        HypernetConfig hcfg = hypernet_->config();
        Rng dummy(0);
        m.hypernet_ = std::make_unique<Hypernet>(hcfg, backbone_.config().num_layers, dummy);
        for (const std::string& t : hypernet_->registry().task_names()) {
            m.hypernet_->registry().register_source(SourceKind::task, t);
        }
        for (const std::string& l : hypernet_->registry().language_names()) {
            m.hypernet_->registry().register_source(SourceKind::language, l);
        }
        m.hypernet_->params().copy_values_from(hypernet_->params());
        m.hypernet_->registry().params().copy_values_from(hypernet_->registry().params());
    }
    Rng arng(0);
    int h = backbone_.config().hidden;
    int layers = backbone_.config().num_layers;
    for (const auto& [lang, ad] : lang_adapters_) {
        StaticAdapter copy("adapter.mlm." + lang, layers, h, opts_.madx_lang_bottleneck, arng);
        copy.params().copy_values_from(ad.params());
        m.lang_adapters_.emplace(lang, std::move(copy));
    }
    for (const auto& [task, ad] : task_adapters_) {
        StaticAdapter copy("adapter." + task + ".all", layers, h, opts_.madx_task_bottleneck, arng);
        copy.params().copy_values_from(ad.params());
        m.task_adapters_.emplace(task, std::move(copy));
    }
    for (const auto& [task, head] : heads_) {
        TaskHead copy;
        std::span<const double> wv = head.w.data();
        std::span<const double> bv = head.b.data();
        copy.w = Tensor::from_data(head.w.shape(), std::vector<double>(wv.begin(), wv.end()),
                                   head.w.requires_grad());
        copy.b = Tensor::from_data(head.b.shape(), std::vector<double>(bv.begin(), bv.end()),
                                   head.b.requires_grad());
        m.heads_.emplace(task, std::move(copy));
    }
    return m;
}

}  // namespace hyperx

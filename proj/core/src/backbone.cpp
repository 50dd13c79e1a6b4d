#include "hyperx/backbone.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <numeric>

#include <json.hpp>

#include "hyperx/errors.hpp"
#include "hyperx/serialize.hpp"

namespace hyperx {

void BackboneConfig::validate() const {
    if (num_layers < 1) throw ConfigError("backbone needs at least one layer");
    if (hidden < 1 || num_heads < 1 || ffn < 1) throw ConfigError("backbone dims must be positive");
    if (hidden % num_heads != 0) {
        throw ConfigError("hidden dim " + std::to_string(hidden) + " not divisible by " +
                          std::to_string(num_heads) + " heads");
    }
    if (vocab < 8) throw ConfigError("vocab too small");
    if (max_len < 1) throw ConfigError("max_len must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    if (mlm_mask_rate <= 0.0 || mlm_mask_rate >= 1.0) {
        throw ConfigError("mlm_mask_rate must be in (0, 1)");
    }
}

TokenBatch TokenBatch::from_sentences(const std::vector<const AnnotatedSentence*>& sents) {
    TokenBatch b;
    b.batch = static_cast<int>(sents.size());
    b.seq = 0;
    for (const AnnotatedSentence* s : sents) {
        b.seq = std::max(b.seq, static_cast<int>(s->token_ids.size()));
    }
    b.ids.assign(static_cast<size_t>(b.batch) * b.seq, Vocabulary::kPad);
    b.mask.assign(static_cast<size_t>(b.batch) * b.seq, 0);
    for (int r = 0; r < b.batch; ++r) {
        const auto& ids = sents[r]->token_ids;
        for (size_t i = 0; i < ids.size(); ++i) {
            b.ids[r * b.seq + i] = ids[i];
            b.mask[r * b.seq + i] = 1;
        }
    }
    return b;
}

Backbone::Backbone(BackboneConfig cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    Rng init = rng.child("backbone.init");
    const double std = 0.02;
    int h = cfg.hidden;
    params_.add("emb.tok", Tensor::randn({cfg.vocab, h}, init, std, true));
    params_.add("emb.pos", Tensor::randn({cfg.max_len, h}, init, std, true));
    params_.add("emb.ln.gamma", Tensor::full({h}, 1.0, true));
    params_.add("emb.ln.beta", Tensor::zeros({h}, true));
    for (int i = 0; i < cfg.num_layers; ++i) {
        std::string p = "layer." + std::to_string(i) + ".";
        params_.add(p + "attn.wq", Tensor::randn({h, h}, init, std, true));
        params_.add(p + "attn.bq", Tensor::zeros({h}, true));
        params_.add(p + "attn.wk", Tensor::randn({h, h}, init, std, true));
        params_.add(p + "attn.bk", Tensor::zeros({h}, true));
        params_.add(p + "attn.wv", Tensor::randn({h, h}, init, std, true));
        params_.add(p + "attn.bv", Tensor::zeros({h}, true));
        params_.add(p + "attn.wo", Tensor::randn({h, h}, init, std, true));
        params_.add(p + "attn.bo", Tensor::zeros({h}, true));
        params_.add(p + "ln1.gamma", Tensor::full({h}, 1.0, true));
        params_.add(p + "ln1.beta", Tensor::zeros({h}, true));
        params_.add(p + "ffn.w1", Tensor::randn({h, cfg.ffn}, init, std, true));
        params_.add(p + "ffn.b1", Tensor::zeros({cfg.ffn}, true));
        params_.add(p + "ffn.w2", Tensor::randn({cfg.ffn, h}, init, std, true));
        params_.add(p + "ffn.b2", Tensor::zeros({h}, true));
        params_.add(p + "ln2.gamma", Tensor::full({h}, 1.0, true));
        params_.add(p + "ln2.beta", Tensor::zeros({h}, true));
    }
    params_.add("mlm.w", Tensor::randn({h, cfg.vocab}, init, std, true));
    params_.add("mlm.b", Tensor::zeros({cfg.vocab}, true));
}

bool Backbone::is_layer_norm_param(const std::string& name) {
    return name.find(".ln.") != std::string::npos || name.find(".ln1.") != std::string::npos ||
           name.find(".ln2.") != std::string::npos || name.rfind("emb.ln", 0) == 0;
}

void Backbone::freeze() {
    params_.freeze_all();
    frozen_ = true;
}

void Backbone::set_layer_norms_trainable(bool trainable) {
    for (auto& [name, t] : params_.entries()) {
        if (is_layer_norm_param(name)) t.set_requires_grad(trainable);
    }
}

std::vector<Tensor> Backbone::encode(const TokenBatch& batch, const AdapterHook* adapters,
                                     bool training, Rng* dropout_rng) const {
    if (batch.seq > cfg_.max_len) {
        throw DataError("sequence length " + std::to_string(batch.seq) +
                        " exceeds max_len " + std::to_string(cfg_.max_len));
    }
    if (static_cast<int>(batch.ids.size()) != batch.batch * batch.seq ||
        batch.mask.size() != batch.ids.size()) {
        throw ShapeError("token batch is not rectangular");
    }
    for (int id : batch.ids) {
        if (id < 0 || id >= cfg_.vocab) {
            throw DataError("token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(cfg_.vocab));
        }
    }
    if (training && cfg_.dropout > 0.0 && dropout_rng == nullptr) {
        throw ContractError("training-mode encode needs a dropout rng");
    }

    std::vector<int> positions(batch.ids.size());
    for (int r = 0; r < batch.batch; ++r) {
        for (int s = 0; s < batch.seq; ++s) positions[r * batch.seq + s] = s;
    }
    Tensor x = add(embedding(params_.get("emb.tok"), batch.ids, {batch.batch, batch.seq}),
                   embedding(params_.get("emb.pos"), positions, {batch.batch, batch.seq}));
    x = layer_norm(x, params_.get("emb.ln.gamma"), params_.get("emb.ln.beta"));
    if (training && cfg_.dropout > 0.0) x = dropout(x, cfg_.dropout, *dropout_rng, training);

    std::vector<Tensor> outputs;
    outputs.reserve(cfg_.num_layers);
    for (int i = 0; i < cfg_.num_layers; ++i) {
        std::string p = "layer." + std::to_string(i) + ".";
        Tensor att = multi_head_attention(
            x, params_.get(p + "attn.wq"), params_.get(p + "attn.bq"), params_.get(p + "attn.wk"),
            params_.get(p + "attn.bk"), params_.get(p + "attn.wv"), params_.get(p + "attn.bv"),
            params_.get(p + "attn.wo"), params_.get(p + "attn.bo"), batch.batch, batch.seq,
            cfg_.num_heads, batch.mask);
        if (training && cfg_.dropout > 0.0) att = dropout(att, cfg_.dropout, *dropout_rng, training);
        x = layer_norm(add(x, att), params_.get(p + "ln1.gamma"), params_.get(p + "ln1.beta"));

        Tensor ff = add_rowwise(
            matmul(gelu(add_rowwise(matmul(x, params_.get(p + "ffn.w1")), params_.get(p + "ffn.b1"))),
                   params_.get(p + "ffn.w2")),
            params_.get(p + "ffn.b2"));
        if (training && cfg_.dropout > 0.0) ff = dropout(ff, cfg_.dropout, *dropout_rng, training);
        x = layer_norm(add(x, ff), params_.get(p + "ln2.gamma"), params_.get(p + "ln2.beta"));

        if (adapters != nullptr && *adapters) x = (*adapters)(x, i);
        outputs.push_back(x);
    }
    return outputs;
}

MlmMasking Backbone::make_mlm_masking(const TokenBatch& batch, double mask_rate, Rng& rng,
                                      int vocab_used) const {
    if (mask_rate <= 0.0 || mask_rate >= 1.0) throw ContractError("mask_rate must be in (0, 1)");
    std::vector<int> maskable;
    for (size_t i = 0; i < batch.ids.size(); ++i) {
        if (batch.mask[i]) maskable.push_back(static_cast<int>(i));
    }
    if (maskable.empty()) throw DataError("batch has no maskable positions");

    MlmMasking m;
    m.corrupted_ids = batch.ids;
    for (int pos : maskable) {
        if (rng.bernoulli(mask_rate)) m.positions.push_back(pos);
    }
    if (m.positions.empty()) {
        m.positions.push_back(maskable[rng.uniform_int(static_cast<int>(maskable.size()))]);
    }
    for (int pos : m.positions) {
        m.targets.push_back(batch.ids[pos]);
        double u = rng.uniform();
        if (u < 0.8) {
            m.corrupted_ids[pos] = Vocabulary::kMask;
        } else if (u < 0.9) {
            int lo = 3;  // skip specials
            m.corrupted_ids[pos] = lo + rng.uniform_int(std::max(1, vocab_used - lo));
        }  // else keep
    }
    return m;
}

Tensor Backbone::mlm_logits(const Tensor& last_hidden, const std::vector<int>& positions) const {
    Tensor rows = gather_rows(last_hidden, positions);
    return add_rowwise(matmul(rows, params_.get("mlm.w")), params_.get("mlm.b"));
}

Tensor Backbone::mlm_loss(const TokenBatch& batch, double mask_rate, Rng& rng, int vocab_used,
                          const AdapterHook* adapters, bool training, Rng* dropout_rng) const {
    MlmMasking m = make_mlm_masking(batch, mask_rate, rng, vocab_used);
    TokenBatch corrupted = batch;
    corrupted.ids = m.corrupted_ids;
    std::vector<Tensor> hidden = encode(corrupted, adapters, training, dropout_rng);
    Tensor logits = mlm_logits(hidden.back(), m.positions);
    return cross_entropy(logits, m.targets);
}

void Backbone::save(const std::filesystem::path& dir, uint64_t seed, int steps,
                    uint64_t corpus_hash_value) const {
    std::filesystem::create_directories(dir);
    params_.save(dir);
    nlohmann::json j;
    j["config"] = {{"num_layers", cfg_.num_layers}, {"hidden", cfg_.hidden},
                   {"num_heads", cfg_.num_heads},   {"ffn", cfg_.ffn},
                   {"vocab", cfg_.vocab},           {"max_len", cfg_.max_len},
                   {"dropout", cfg_.dropout},       {"mlm_mask_rate", cfg_.mlm_mask_rate}};
    j["seed"] = seed;
    j["steps"] = steps;
    j["corpus_hash"] = corpus_hash_value;
    j["parameters"] = params_.names();
    std::ofstream f(dir / "manifest.json", std::ios::trunc);
    if (!f) throw IoError("cannot write backbone manifest in " + dir.string());
    f << j.dump(2) << "\n";
}

Backbone Backbone::load(const std::filesystem::path& dir) {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw IoError("no backbone manifest in " + dir.string());
    nlohmann::json j = nlohmann::json::parse(f);
    BackboneConfig cfg;
    cfg.num_layers = j["config"]["num_layers"];
    cfg.hidden = j["config"]["hidden"];
    cfg.num_heads = j["config"]["num_heads"];
    cfg.ffn = j["config"]["ffn"];
    cfg.vocab = j["config"]["vocab"];
    cfg.max_len = j["config"]["max_len"];
    cfg.dropout = j["config"]["dropout"];
    cfg.mlm_mask_rate = j["config"]["mlm_mask_rate"];
    Rng rng(0);
    Backbone b(cfg, rng);
    b.params_.load(dir);
    b.freeze();
    return b;
}

Backbone Backbone::clone() const {
    Backbone b;
    b.cfg_ = cfg_;
    b.frozen_ = frozen_;
    b.params_ = params_.deep_clone();
    return b;
}

uint64_t corpus_hash(const std::vector<AnnotatedSentence>& corpus) {
    uint64_t h = 1469598103934665603ull;
    auto mix_int = [&h](int v) {
        for (int i = 0; i < 4; ++i) {
            h ^= (static_cast<uint32_t>(v) >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    };
    for (const AnnotatedSentence& s : corpus) {
        for (unsigned char c : s.language) {
            h ^= c;
            h *= 1099511628211ull;
        }
        for (int id : s.token_ids) mix_int(id);
        mix_int(-1);
    }
    return h;
}

PretrainResult pretrain(const LanguageFamily& family,
                        const std::vector<AnnotatedSentence>& corpus, BackboneConfig cfg,
                        const PretrainOptions& opts) {
    cfg.validate();
    if (corpus.empty()) throw DataError("pretraining corpus is empty");
    for (const AnnotatedSentence& s : corpus) {
        if (!family.language(s.language).spec.seen_in_pretraining) {
            throw DataError("pretraining corpus contaminated with held-out language '" +
                            s.language + "'");
        }
    }

    Rng root(opts.seed);
    Rng init = root.child("pretrain");
    Backbone model(cfg, init);
    Rng batch_rng = root.child("pretrain.batch");
    Rng mask_rng = root.child("pretrain.mask");
    Rng drop_rng = root.child("pretrain.dropout");

    Adam adam(model.params().trainable());
    LrSchedule schedule{opts.peak_lr, opts.warmup, opts.steps, true};

    std::vector<int> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    batch_rng.shuffle(order);
    size_t cursor = 0;

    PretrainResult result;
    double running = 0.0;
    int running_n = 0;
    for (int step = 0; step < opts.steps; ++step) {
        std::vector<const AnnotatedSentence*> sents;
        sents.reserve(opts.batch_size);
        for (int i = 0; i < opts.batch_size; ++i) {
            if (cursor >= order.size()) {
                batch_rng.shuffle(order);
                cursor = 0;
            }
            sents.push_back(&corpus[order[cursor++]]);
        }
        TokenBatch batch = TokenBatch::from_sentences(sents);
        Tensor loss = model.mlm_loss(batch, cfg.mlm_mask_rate, mask_rng,
                                     family.vocab().used(), nullptr, true, &drop_rng);
        double loss_value = loss.item();
        if (step == 0) result.initial_loss = loss_value;
        running += loss_value;
        ++running_n;
        if ((step + 1) % opts.log_every == 0 || step + 1 == opts.steps) {
            result.loss_curve.emplace_back(step + 1, running / running_n);
            running = 0.0;
            running_n = 0;
        }
        backward(loss);
        adam.step(schedule.at(step));
        adam.zero_grad();
    }
    result.final_loss = result.loss_curve.empty() ? result.initial_loss
                                                  : result.loss_curve.back().second;
    model.freeze();
    result.backbone = std::move(model);
    return result;
}

}  // namespace hyperx

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hyperx/adapters.hpp"
#include "hyperx/optim.hpp"
#include "hyperx/params.hpp"
#include "hyperx/synthdata.hpp"
#include "hyperx/tensor.hpp"

namespace hyperx {

struct BackboneConfig {
    int num_layers = 4;
    int hidden = 64;
    int num_heads = 4;
    int ffn = 256;
    int vocab = 2048;
    int max_len = 64;
    double dropout = 0.1;
    double mlm_mask_rate = 0.15;

    void validate() const;  // h divisible by heads, etc.
};

/// Rectangular padded batch of token ids; mask marks real tokens.
struct TokenBatch {
    int batch = 0;
    int seq = 0;
    std::vector<int> ids;       // batch*seq, row-major
    std::vector<uint8_t> mask;  // batch*seq

    static TokenBatch from_sentences(const std::vector<const AnnotatedSentence*>& sents);
};

/// MLM corruption of one batch: which flat positions are predicted, the ids
/// fed to the encoder (with [MASK]/random/keep applied) and the original ids
/// at the selected positions.
struct MlmMasking {
    std::vector<int> positions;
    std::vector<int> corrupted_ids;
    std::vector<int> targets;
};

/// Compact transformer encoder (post-layer-norm, GELU feed-forward) with an
/// MLM head. After pretraining the backbone is frozen; during adaptation only
/// its layer-norm parameters may be marked trainable again.
class Backbone {
  public:
    Backbone() = default;
    Backbone(BackboneConfig cfg, Rng& rng);

    const BackboneConfig& config() const { return cfg_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    bool frozen() const { return frozen_; }
    /// Freezes every parameter; layer-norms stay frozen until
    /// set_layer_norms_trainable.
    void freeze();
    void set_layer_norms_trainable(bool trainable);
    static bool is_layer_norm_param(const std::string& name);

    /// Hidden states after each of the L layers, each shaped (B, S, h). When
    /// an adapter hook is given it is applied at the end of every layer.
    std::vector<Tensor> encode(const TokenBatch& batch, const AdapterHook* adapters = nullptr,
                               bool training = false, Rng* dropout_rng = nullptr) const;

    /// 80/10/10 masking at the configured rate; at least one position is
    /// selected whenever the batch has any maskable token.
    MlmMasking make_mlm_masking(const TokenBatch& batch, double mask_rate, Rng& rng,
                                int vocab_used) const;

    Tensor mlm_logits(const Tensor& last_hidden, const std::vector<int>& positions) const;

    /// Cross-entropy over masked positions only.
    Tensor mlm_loss(const TokenBatch& batch, double mask_rate, Rng& rng, int vocab_used,
                    const AdapterHook* adapters = nullptr, bool training = false,
                    Rng* dropout_rng = nullptr) const;

    void save(const std::filesystem::path& dir, uint64_t seed, int steps,
              uint64_t corpus_hash) const;
    static Backbone load(const std::filesystem::path& dir);

    /// Independent copy (own parameter tensors).
    Backbone clone() const;

  private:
    BackboneConfig cfg_;
    ParameterStore params_;
    bool frozen_ = false;
};

struct PretrainResult {
    Backbone backbone;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<std::pair<int, double>> loss_curve;  // (step, smoothed loss)
};

struct PretrainOptions {
    int steps = 3000;
    int batch_size = 16;
    double peak_lr = 1e-3;
    int warmup = 300;
    uint64_t seed = 1;
    int log_every = 50;
};

/// Pretrains a backbone with MLM on the given corpus. Every sentence must
/// come from a language flagged seen_in_pretraining; any held-out language in
/// the corpus is a hard contamination error.
PretrainResult pretrain(const LanguageFamily& family,
                        const std::vector<AnnotatedSentence>& corpus, BackboneConfig cfg,
                        const PretrainOptions& opts);

uint64_t corpus_hash(const std::vector<AnnotatedSentence>& corpus);

}  // namespace hyperx

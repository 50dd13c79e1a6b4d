#pragma once

#include <filesystem>
#include <string>

#include "hyperx/backbone.hpp"
#include "hyperx/hypernet.hpp"
#include "hyperx/synthdata.hpp"
#include "hyperx/trainer.hpp"

namespace hyperx {

/// Full experiment configuration, one section per concern. Parsing is strict:
/// unknown sections or keys are fatal and come back with a nearest-match
/// suggestion. Every field has a default, and the fully resolved config is
/// echoed into each run manifest.
///
/// The seed in [regime] drives every stochastic component through fixed
/// derivation tags (see Rng::mix): "data" for the language family, "pretrain.*"
/// for backbone pretraining, "init.*" for model init, "train.*" for batch
/// order / masking / dropout, "fewshot.*" for few-shot sampling. The
/// HYPERX_SEED environment variable overrides the configured seed.
struct ExperimentConfig {
    struct BackboneSection {
        int layers = 4;
        int hidden = 64;
        int heads = 4;
        int ffn = 256;
        int vocab = 2048;
        int max_len = 64;
        double dropout = 0.1;
        double mlm_mask_rate = 0.15;
        int pretrain_steps = 3000;
        int pretrain_batch = 16;
        double pretrain_lr = 1e-3;
        int pretrain_warmup = 300;
        int pretrain_sentences = 2000;  // per pretraining language
    } backbone;

    struct DataSection {
        int languages = 8;
        int groups = 4;
        int unseen = 2;
        int train_sentences = 2000;
        int dev_sentences = 200;
        int test_sentences = 200;
        double entity_rate = 0.8;
        double related_overlap = 0.3;
        double mutation_rate = 0.35;
    } data;

    struct HypernetSection {
        int d_task = 16;
        int d_lang = 16;
        int d_layer = 16;
        int d_proj = 8;
        int proj_hidden = 0;  // 0 = d_task + d_lang + d_layer
        int bottleneck = 16;
        bool biases = true;
        int madx_lang_bottleneck = 16;
        int madx_task_bottleneck = 4;
    } hypernet;

    struct RegimeSection {
        std::string regime = "mixed_language";
        std::string partition;
        std::string task;
        std::string system = "hyperx";
        int steps = 2000;
        int batch = 16;
        double lr = 1e-3;
        int warmup = 200;
        int eval_every = 500;
        double temperature = 0.5;
        double mlm_weight = 1.0;
        int dev_cap = 100;
        int madx_lang_steps = 800;
        int madx_task_steps = 1200;
        uint64_t seed = 1;
    } regime;

    struct OutputSection {
        std::string dir = "runs";
        std::string run_name;      // empty = derived from system/regime/seed
        std::string backbone_dir;  // empty = <dir>/backbone
    } output;

    bool seed_from_env = false;

    std::string resolved_run_name() const;
    std::filesystem::path resolved_backbone_dir() const;
};

/// Parses the [backbone]/[data]/[hypernet]/[regime]/[output] sections.
/// Missing file, malformed lines, unknown sections or unknown keys are
/// ConfigError / ParseError. HYPERX_SEED, when set, overrides [regime] seed.
ExperimentConfig load_config(const std::filesystem::path& path);

std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const std::string& json_text);

FamilyConfig family_config(const ExperimentConfig& cfg);
BackboneConfig backbone_config(const ExperimentConfig& cfg);
HypernetConfig hypernet_config(const ExperimentConfig& cfg);
ModelOptions model_options(const ExperimentConfig& cfg);
/// steps/lr/... baseline for resolve_regime.
RegimeConfig regime_base(const ExperimentConfig& cfg);

}  // namespace hyperx

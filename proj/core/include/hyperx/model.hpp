#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hyperx/adapters.hpp"
#include "hyperx/backbone.hpp"
#include "hyperx/evalkit.hpp"
#include "hyperx/hypernet.hpp"
#include "hyperx/synthdata.hpp"

namespace hyperx {

enum class System { hyperx, full_finetune, madx };
const char* system_name(System s);
System parse_system(const std::string& name);

struct TaskHead {
    Tensor w;
    Tensor b;
};

/// Which parameters a MAD-X training stage updates.
enum class MadxStage { language, task };

struct ModelOptions {
    HypernetConfig hypernet;
    int madx_lang_bottleneck = 16;
    int madx_task_bottleneck = 4;
    uint64_t seed = 1;
};

/// A tagger over a backbone: one of the three systems plus per-task output
/// heads. Downstream tasks are "cat" (accuracy) and "bio" (span F1); "mlm" is
/// the auxiliary objective and reuses the backbone's frozen MLM head.
class Model {
  public:
    Model() = default;

    /// hyperx / madx freeze the backbone (hyperx re-enables layer norms);
    /// full_finetune marks everything trainable.
    static Model create(System system, Backbone backbone, const LanguageFamily& family,
                        const ModelOptions& opts);

    System system() const { return system_; }
    const Backbone& backbone() const { return backbone_; }
    Backbone& backbone() { return backbone_; }
    Hypernet& hypernet();
    const Hypernet& hypernet() const;
    const LanguageFamily& family() const { return *family_; }

    bool supports_mlm_auxiliary() const { return system_ == System::hyperx; }

    /// Adapter hook for a downstream batch of the given pair (null for
    /// full fine-tuning). For MAD-X this stacks language-then-task adapters.
    AdapterHook adapter_hook(const std::string& task, const std::string& language) const;
    /// Hook used for MLM batches (language adapter only for MAD-X).
    AdapterHook mlm_hook(const std::string& language) const;

    Tensor tagging_loss(const std::string& task, const std::string& language,
                        const std::vector<const AnnotatedSentence*>& sentences, bool training,
                        Rng* dropout_rng);
    Tensor mlm_loss_for(const std::string& language,
                        const std::vector<const AnnotatedSentence*>& sentences, Rng& mask_rng,
                        bool training, Rng* dropout_rng);

    /// Per-sentence predicted tag ids (evaluation mode, no graph).
    std::vector<std::vector<int>> predict_tags(const std::string& task,
                                               const std::string& language,
                                               const std::vector<AnnotatedSentence>& sentences,
                                               int eval_batch = 32) const;
    TagPredictor predictor() const;

    /// Trainables of the standard training phase for this system.
    std::vector<Tensor> trainables() const;
    /// MAD-X stages train disjoint parameter sets.
    std::vector<Tensor> madx_stage_trainables(MadxStage stage, const std::string& name) const;

    Census census() const;

    /// All trainable-phase parameters as one named store (checkpoints).
    ParameterStore checkpoint_params() const;
    void save_checkpoint(const std::filesystem::path& dir) const;
    void load_checkpoint(const std::filesystem::path& dir);

    /// Replaces the head of one task with a freshly initialized one of a new
    /// label count (the new-dataset few-shot protocol keeps everything else
    /// frozen and reuses the existing task embedding).
    void reset_head(const std::string& task, int num_labels, uint64_t seed);

    const std::map<std::string, TaskHead>& heads() const { return heads_; }
    StaticAdapter& language_adapter(const std::string& language);
    StaticAdapter& task_adapter(const std::string& task);
    const std::map<std::string, StaticAdapter>& language_adapters() const {
        return lang_adapters_;
    }

    /// Generated or static adapters for one pair, written as HXT1 files named
    /// adapter.{task}.{lang}.{layer}.{D|U|d_bias|u_bias}.
    void export_adapters(const std::filesystem::path& dir, const std::string& task,
                         const std::string& language) const;

    Model clone() const;

  private:
    int head_labels(const std::string& task) const;

    System system_ = System::hyperx;
    Backbone backbone_;
    std::unique_ptr<Hypernet> hypernet_;
    std::map<std::string, StaticAdapter> lang_adapters_;
    std::map<std::string, StaticAdapter> task_adapters_;
    std::map<std::string, TaskHead> heads_;
    std::map<std::string, int> head_label_counts_;
    const LanguageFamily* family_ = nullptr;
    ModelOptions opts_;
};

}  // namespace hyperx

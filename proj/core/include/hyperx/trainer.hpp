#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hyperx/model.hpp"
#include "hyperx/synthdata.hpp"

namespace hyperx {

struct TaskLanguagePair {
    std::string task;
    std::string language;

    bool operator==(const TaskLanguagePair& o) const {
        return task == o.task && language == o.language;
    }
    bool operator<(const TaskLanguagePair& o) const {
        return task != o.task ? task < o.task : language < o.language;
    }
    std::string str() const { return task + "/" + language; }
};

enum class Regime { single_task, multi_task, mixed_language };
const char* regime_name(Regime r);
Regime parse_regime(const std::string& name);

/// One side of the mixed-language construction. Downstream pairs trained here
/// are exactly the pairs evaluated zero-shot on the other side; the pivot
/// language is supervised on both sides.
struct Partition {
    std::string id;
    std::vector<TaskLanguagePair> train_downstream;  // includes pivot pairs
    std::vector<TaskLanguagePair> eval_pairs;        // zero-shot here
    std::vector<std::string> mlm_only_languages;     // no task data in this partition
};

/// Splits all non-pivot (task, language) pairs into two balanced partitions.
/// Assignment works at relatedness-group granularity so a held-out pair is
/// never supervised by its own group, and at least one group per side is
/// assigned as a block, which leaves its languages MLM-only in the other
/// partition.
std::pair<Partition, Partition> build_partitions(const std::vector<std::string>& tasks,
                                                 const LanguageFamily& family, uint64_t seed);

struct RegimeConfig {
    Regime regime = Regime::mixed_language;
    std::string partition;  // "A"/"B" for mixed_language, else empty
    std::string task;       // for single_task

    std::vector<TaskLanguagePair> train_pairs;  // downstream supervision
    std::vector<TaskLanguagePair> eval_pairs;   // zero-shot grid (non-pivot)
    std::vector<std::string> mlm_languages;     // auxiliary MLM (hyperx only)
    std::vector<std::string> mlm_only_languages;

    int steps = 2000;
    int batch_size = 16;
    double peak_lr = 1e-3;
    int warmup = 200;
    int eval_every = 500;
    double temperature = 0.5;
    double mlm_weight = 1.0;

    int train_sentences = 2000;
    int dev_sentences = 200;
    int test_sentences = 200;
    int dev_cap = 100;  // dev sentences scored per eval event

    int madx_lang_steps = 800;
    int madx_task_steps = 1200;

    uint64_t seed = 1;
};

/// Resolves regime/partition/task into concrete pair lists. MLM auxiliary
/// pairs are attached only for systems that support them.
RegimeConfig resolve_regime(Regime regime, const std::string& partition, const std::string& task,
                            System system, const LanguageFamily& family,
                            const RegimeConfig& base);

/// Temperature-scaled homogeneous batch scheduler. Pair p with dataset size
/// n_p is drawn with probability proportional to n_p^tau; every batch holds
/// sentences of exactly one pair. Exhausted datasets reshuffle (epoch
/// boundaries are reported).
class SamplingPlan {
  public:
    struct Entry {
        TaskLanguagePair pair;
        std::vector<AnnotatedSentence> data;
        double weight = 0.0;
        int epoch = 0;
        std::vector<int> order;
        size_t cursor = 0;
    };

    SamplingPlan(std::vector<Entry> entries, double temperature, uint64_t seed);

    struct Batch {
        int entry_index;
        TaskLanguagePair pair;
        std::vector<const AnnotatedSentence*> sentences;
        bool epoch_boundary = false;
        int epoch = 0;
    };
    Batch next_batch(int batch_size);

    const std::vector<Entry>& entries() const { return entries_; }

  private:
    std::vector<Entry> entries_;
    Rng rng_;
};

struct EvalEvent {
    int step = 0;
    std::string pair;
    std::string metric;
    double value = 0.0;
};

struct TrainResult {
    std::vector<EvalEvent> history;
    int best_step = 0;
    double best_score = 0.0;
    std::filesystem::path run_dir;
    std::filesystem::path best_checkpoint;
};

struct RunPersist {
    std::filesystem::path run_dir;      // created; must not already exist
    std::string run_name;
    std::string config_echo_json = "{}";
    std::string git_version = "unknown";
};

/// Standard training loop: homogeneous batches, linear warmup + decay,
/// periodic dev evaluation, best-checkpoint retention (reloaded into the
/// model before returning), manifest + metrics.jsonl persistence.
/// A non-finite loss aborts with a diagnostic dump of the offending batch.
TrainResult train(Model& model, const RegimeConfig& cfg, const RunPersist& persist);

/// The two-stage MAD-X protocol: language adapters via MLM for every
/// language, then the task adapter (plus head) on the pivot's task data with
/// language adapters frozen. Only valid for the single_task regime.
TrainResult train_madx(Model& model, const RegimeConfig& cfg, const RunPersist& persist);

enum class FewshotMode { existing_task, new_label_set };

struct FewshotOptions {
    int epochs = 50;
    int batch_size = 16;
    double lr = 1e-3;  // constant; decay disabled
    uint64_t seed = 1;
    int test_sentences = 200;
};

struct FewshotResult {
    double score_before = 0.0;
    double score_after = 0.0;
    std::string metric;
    int instances_used = 0;
};

/// Fine-tunes the already-trained model on k target instances (k = 0 is the
/// degenerate no-op and reproduces the zero-shot score exactly).
/// existing_task samples k instances regardless of labels and updates the
/// zero-shot trainables; new_label_set interprets k as shots per entity type
/// on the extended-label relabeling, trains a fresh head only, and reuses the
/// existing task embedding.
FewshotResult fewshot_finetune(Model& model, const TaskLanguagePair& pair, int k, FewshotMode mode,
                               const FewshotOptions& opts,
                               const std::optional<RunPersist>& persist = std::nullopt);

/// Selection metric of one eval event set: unweighted mean over downstream
/// train pairs; MLM-only stages fall back to the negated MLM dev loss.
double selection_score(const std::vector<EvalEvent>& events, int step);

}  // namespace hyperx

#include "hyperx/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

#include "hyperx/errors.hpp"
#include "hyperx/optim.hpp"

namespace hyperx {

const char* regime_name(Regime r) {
    switch (r) {
        case Regime::single_task: return "single_task";
        case Regime::multi_task: return "multi_task";
        case Regime::mixed_language: return "mixed_language";
    }
    return "?";
}

Regime parse_regime(const std::string& name) {
    if (name == "single_task") return Regime::single_task;
    if (name == "multi_task") return Regime::multi_task;
    if (name == "mixed_language") return Regime::mixed_language;
    throw ConfigError("unknown regime '" + name +
                      "' (expected single_task, multi_task or mixed_language)");
}

std::pair<Partition, Partition> build_partitions(const std::vector<std::string>& tasks,
                                                 const LanguageFamily& family, uint64_t seed) {
    int num_tasks = static_cast<int>(tasks.size());
    if (num_tasks < 2) throw ConfigError("partitions need at least two downstream tasks");
    const std::string& pivot = family.pivot();

    // non-pivot languages by relatedness group
    std::map<int, std::vector<std::string>> groups;
    for (const SyntheticLanguage& lang : family.languages()) {
        if (lang.spec.name == pivot) continue;
        groups[lang.spec.group].push_back(lang.spec.name);
    }
    if (groups.empty() || (groups.size() == 1 && groups.begin()->second.size() < 2)) {
        throw ConfigError("cannot build partitions: not enough non-pivot languages");
    }

    std::vector<std::vector<std::string>> group_langs;
    for (auto& [gid, langs] : groups) group_langs.push_back(langs);
    Rng rng(Rng::mix(seed, "partitions"));
    rng.shuffle(group_langs);

    // Patterns assign each task to a partition (bit set = partition A). The
    // all-A / all-B block patterns leave the group MLM-only on the other side.
    int num_patterns = 1 << num_tasks;
    const int block_a = num_patterns - 1;
    const int block_b = 0;
    std::vector<int> pattern_order(num_patterns);
    std::iota(pattern_order.begin(), pattern_order.end(), 0);
    rng.shuffle(pattern_order);

    int64_t total_pairs = 0;
    for (const auto& langs : group_langs) total_pairs += num_tasks * langs.size();
    int64_t target_a = total_pairs / 2;  // remainder goes to B
    bool need_blocks = group_langs.size() >= 2;

    std::vector<int> chosen(group_langs.size(), -1);
    std::function<bool(size_t, int64_t, bool, bool)> assign =
        [&](size_t g, int64_t a_pairs, bool has_a, bool has_b) -> bool {
        if (g == group_langs.size()) {
            if (a_pairs != target_a) return false;
            if (need_blocks && !(has_a && has_b)) return false;
            return true;
        }
        int64_t m = static_cast<int64_t>(group_langs[g].size());
        for (int pattern : pattern_order) {
            int64_t add = m * __builtin_popcount(static_cast<unsigned>(pattern));
            if (a_pairs + add > target_a) continue;
            chosen[g] = pattern;
            if (assign(g + 1, a_pairs + add, has_a || pattern == block_a,
                       has_b || pattern == block_b)) {
                return true;
            }
        }
        chosen[g] = -1;
        return false;
    };
    if (!assign(0, 0, false, false)) {
        throw ConfigError("cannot build partitions: constraint set is unsatisfiable for " +
                          std::to_string(total_pairs) + " pairs in " +
                          std::to_string(group_langs.size()) + " groups");
    }

    Partition a, b;
    a.id = "A";
    b.id = "B";
    for (const std::string& task : tasks) {
        a.train_downstream.push_back({task, pivot});
        b.train_downstream.push_back({task, pivot});
    }
    std::set<std::string> langs_in_a, langs_in_b;
    for (size_t g = 0; g < group_langs.size(); ++g) {
        for (int t = 0; t < num_tasks; ++t) {
            bool to_a = (chosen[g] >> t) & 1;
            for (const std::string& lang : group_langs[g]) {
                TaskLanguagePair pair{tasks[t], lang};
                if (to_a) {
                    a.train_downstream.push_back(pair);
                    b.eval_pairs.push_back(pair);
                    langs_in_a.insert(lang);
                } else {
                    b.train_downstream.push_back(pair);
                    a.eval_pairs.push_back(pair);
                    langs_in_b.insert(lang);
                }
            }
        }
    }
    for (const SyntheticLanguage& lang : family.languages()) {
        if (lang.spec.name == pivot) continue;
        if (!langs_in_a.count(lang.spec.name)) a.mlm_only_languages.push_back(lang.spec.name);
        if (!langs_in_b.count(lang.spec.name)) b.mlm_only_languages.push_back(lang.spec.name);
    }
    auto sort_pairs = [](Partition& p) {
        std::sort(p.train_downstream.begin(), p.train_downstream.end());
        std::sort(p.eval_pairs.begin(), p.eval_pairs.end());
    };
    sort_pairs(a);
    sort_pairs(b);
    return {a, b};
}

RegimeConfig resolve_regime(Regime regime, const std::string& partition, const std::string& task,
                            System system, const LanguageFamily& family,
                            const RegimeConfig& base) {
    RegimeConfig cfg = base;
    cfg.regime = regime;
    cfg.partition.clear();
    cfg.task.clear();
    cfg.train_pairs.clear();
    cfg.eval_pairs.clear();
    cfg.mlm_languages.clear();
    cfg.mlm_only_languages.clear();

    const std::vector<std::string> tasks = {"bio", "cat"};
    const std::string& pivot = family.pivot();

    if (regime != Regime::mixed_language && !partition.empty()) {
        throw ConfigError("--partition is only valid for the mixed_language regime");
    }

    switch (regime) {
        case Regime::single_task: {
            if (std::find(tasks.begin(), tasks.end(), task) == tasks.end()) {
                throw ConfigError("single_task regime needs task 'cat' or 'bio', got '" + task +
                                  "'");
            }
            cfg.task = task;
            cfg.train_pairs.push_back({task, pivot});
            for (const std::string& lang : family.language_names()) {
                if (lang != pivot) cfg.eval_pairs.push_back({task, lang});
            }
            break;
        }
        case Regime::multi_task: {
            for (const std::string& t : tasks) cfg.train_pairs.push_back({t, pivot});
            for (const std::string& t : tasks) {
                for (const std::string& lang : family.language_names()) {
                    if (lang != pivot) cfg.eval_pairs.push_back({t, lang});
                }
            }
            break;
        }
        case Regime::mixed_language: {
            if (partition != "A" && partition != "B") {
                throw ConfigError("mixed_language regime needs --partition A or B");
            }
            cfg.partition = partition;
            auto [a, b] = build_partitions(tasks, family, base.seed);
            const Partition& mine = partition == "A" ? a : b;
            cfg.train_pairs = mine.train_downstream;
            cfg.eval_pairs = mine.eval_pairs;
            cfg.mlm_only_languages = mine.mlm_only_languages;
            break;
        }
    }
    if (system == System::hyperx) {
        cfg.mlm_languages = family.language_names();
    }
    if (cfg.mlm_only_languages.empty() && regime != Regime::mixed_language) {
        std::set<std::string> supervised;
        for (const TaskLanguagePair& p : cfg.train_pairs) supervised.insert(p.language);
        for (const std::string& lang : family.language_names()) {
            if (!supervised.count(lang)) cfg.mlm_only_languages.push_back(lang);
        }
    }
    std::sort(cfg.eval_pairs.begin(), cfg.eval_pairs.end());
    return cfg;
}

SamplingPlan::SamplingPlan(std::vector<Entry> entries, double temperature, uint64_t seed)
    : entries_(std::move(entries)), rng_(seed) {
    if (entries_.empty()) throw ContractError("sampling plan with no pairs");
    double total = 0.0;
    for (Entry& e : entries_) {
        if (e.data.empty()) throw ContractError("empty dataset for pair " + e.pair.str());
        e.weight = std::pow(static_cast<double>(e.data.size()), temperature);
        total += e.weight;
        e.order.resize(e.data.size());
        std::iota(e.order.begin(), e.order.end(), 0);
        rng_.shuffle(e.order);
    }
    for (Entry& e : entries_) e.weight /= total;
}

SamplingPlan::Batch SamplingPlan::next_batch(int batch_size) {
    double u = rng_.uniform();
    double acc = 0.0;
    int index = static_cast<int>(entries_.size()) - 1;
    for (size_t i = 0; i < entries_.size(); ++i) {
        acc += entries_[i].weight;
        if (u < acc) {
            index = static_cast<int>(i);
            break;
        }
    }
    Entry& e = entries_[index];
    Batch batch;
    batch.entry_index = index;
    batch.pair = e.pair;
    batch.sentences.reserve(batch_size);
    for (int i = 0; i < batch_size; ++i) {
        if (e.cursor >= e.order.size()) {
            rng_.shuffle(e.order);
            e.cursor = 0;
            e.epoch += 1;
            batch.epoch_boundary = true;
        }
        batch.sentences.push_back(&e.data[e.order[e.cursor++]]);
    }
    batch.epoch = e.epoch;
    return batch;
}

double selection_score(const std::vector<EvalEvent>& events, int step) {
    double task_total = 0.0;
    int task_n = 0;
    double mlm_total = 0.0;
    int mlm_n = 0;
    for (const EvalEvent& e : events) {
        if (e.step != step) continue;
        if (e.metric == "accuracy" || e.metric == "span_f1") {
            task_total += e.value;
            ++task_n;
        } else if (e.metric == "neg_mlm_loss") {
            mlm_total += e.value;
            ++mlm_n;
        }
    }
    if (task_n > 0) return task_total / task_n;
    if (mlm_n > 0) return mlm_total / mlm_n;
    throw ContractError("no evaluation events at step " + std::to_string(step));
}

namespace {

using DevSets = std::map<TaskLanguagePair, std::vector<AnnotatedSentence>>;

void append_dev_events(Model& model, const DevSets& dev, int step, uint64_t seed,
                       std::vector<EvalEvent>& history) {
    NoGradGuard no_grad;
    for (const auto& [pair, sentences] : dev) {
        EvalEvent event;
        event.step = step;
        event.pair = pair.str();
        if (pair.task == "mlm") {
            // fixed masking stream per (pair, step): evaluation never touches
            // the training streams
            Rng mask_rng(Rng::mix(seed, "eval.mask." + pair.str() + "." + std::to_string(step)));
            std::vector<const AnnotatedSentence*> ptrs;
            ptrs.reserve(sentences.size());
            for (const AnnotatedSentence& s : sentences) ptrs.push_back(&s);
            double loss =
                model.mlm_loss_for(pair.language, ptrs, mask_rng, false, nullptr).item();
            event.metric = "neg_mlm_loss";
            event.value = -loss;
        } else {
            std::vector<std::vector<int>> pred =
                model.predict_tags(pair.task, pair.language, sentences);
            std::vector<std::vector<int>> gold;
            gold.reserve(sentences.size());
            for (const AnnotatedSentence& s : sentences) {
                gold.push_back(pair.task == "bio" ? s.bio_tags : s.cat_tags);
            }
            if (pair.task == "bio") {
                event.metric = "span_f1";
                event.value = span_f1(pred, gold, model.family().bio_labels());
            } else {
                event.metric = "accuracy";
                event.value = tag_accuracy(pred, gold);
            }
        }
        history.push_back(std::move(event));
    }
}

void dump_offending_batch(const std::filesystem::path& path, const TaskLanguagePair& pair,
                          const std::vector<const AnnotatedSentence*>& sentences, int step) {
    nlohmann::json j;
    j["step"] = step;
    j["pair"] = pair.str();
    nlohmann::json sents = nlohmann::json::array();
    for (const AnnotatedSentence* s : sentences) {
        nlohmann::json js;
        js["language"] = s->language;
        js["tokens"] = s->tokens;
        js["token_ids"] = s->token_ids;
        sents.push_back(std::move(js));
    }
    j["sentences"] = std::move(sents);
    std::ofstream f(path, std::ios::trunc);
    if (f) f << j.dump(2) << "\n";
}

struct LoopSpec {
    int steps = 0;
    int batch_size = 16;
    double peak_lr = 1e-3;
    int warmup = 0;
    bool decay = true;
    int eval_every = 0;  // 0 = final step only
    double mlm_weight = 1.0;
    uint64_t seed = 1;
    std::filesystem::path dump_dir;
    std::function<void(int step, double score)> on_best;  // optional
};

struct LoopResult {
    std::vector<EvalEvent> history;
    int best_step = 0;
    double best_score = 0.0;
};

// The shared optimization loop: homogeneous batches from the plan, Adam with
// the warmup/decay schedule, periodic dev scoring with best tracking.
LoopResult run_loop(Model& model, SamplingPlan& plan, const std::vector<Tensor>& trainables,
                    const DevSets& dev, const LoopSpec& spec) {
    if (trainables.empty()) throw ContractError("training with no trainable parameters");
    Adam adam(trainables);
    LrSchedule schedule{spec.peak_lr, spec.warmup, spec.steps, spec.decay};
    Rng root(spec.seed);
    Rng mask_rng = root.child("train.mask");
    Rng drop_rng = root.child("train.dropout");

    LoopResult result;
    result.best_score = -1e300;
    for (int step = 0; step < spec.steps; ++step) {
        SamplingPlan::Batch batch = plan.next_batch(spec.batch_size);
        for (const AnnotatedSentence* s : batch.sentences) {
            if (s->language != batch.pair.language) {
                throw ContractError("batch homogeneity violated for pair " + batch.pair.str());
            }
        }
        if (batch.epoch_boundary) {
            result.history.push_back(
                {step, batch.pair.str(), "epoch", static_cast<double>(batch.epoch)});
        }
        try {
            Tensor loss;
            if (batch.pair.task == "mlm") {
                loss = model.mlm_loss_for(batch.pair.language, batch.sentences, mask_rng, true,
                                          &drop_rng);
                if (spec.mlm_weight != 1.0) loss = scale(loss, spec.mlm_weight);
            } else {
                loss = model.tagging_loss(batch.pair.task, batch.pair.language, batch.sentences,
                                          true, &drop_rng);
            }
            backward(loss);
        } catch (const NumericError& e) {
            std::filesystem::path dump = spec.dump_dir / "nan_batch.json";
            if (!spec.dump_dir.empty()) {
                std::filesystem::create_directories(spec.dump_dir);
                dump_offending_batch(dump, batch.pair, batch.sentences, step);
            }
            throw NumericError(std::string(e.what()) + " at step " + std::to_string(step) +
                               " on pair " + batch.pair.str() +
                               (spec.dump_dir.empty() ? "" : "; batch dumped to " + dump.string()));
        }
        adam.step(schedule.at(step));
        adam.zero_grad();

        bool do_eval = !dev.empty() && (step + 1 == spec.steps ||
                                        (spec.eval_every > 0 && (step + 1) % spec.eval_every == 0));
        if (do_eval) {
            append_dev_events(model, dev, step + 1, spec.seed, result.history);
            double score = selection_score(result.history, step + 1);
            if (score > result.best_score) {
                result.best_score = score;
                result.best_step = step + 1;
                if (spec.on_best) spec.on_best(step + 1, score);
            }
        }
    }
    return result;
}

std::vector<SamplingPlan::Entry> build_entries(const LanguageFamily& family,
                                               const std::vector<TaskLanguagePair>& task_pairs,
                                               const std::vector<std::string>& mlm_languages,
                                               int train_sentences) {
    std::vector<SamplingPlan::Entry> entries;
    for (const TaskLanguagePair& pair : task_pairs) {
        SamplingPlan::Entry e;
        e.pair = pair;
        e.data = family.sample_corpus(pair.language, train_sentences, Split::train);
        entries.push_back(std::move(e));
    }
    for (const std::string& lang : mlm_languages) {
        SamplingPlan::Entry e;
        e.pair = {"mlm", lang};
        e.data = family.sample_corpus(lang, train_sentences, Split::train);
        entries.push_back(std::move(e));
    }
    return entries;
}

DevSets build_dev_sets(const LanguageFamily& family,
                       const std::vector<TaskLanguagePair>& task_pairs,
                       const std::vector<std::string>& mlm_languages, int dev_sentences,
                       int dev_cap) {
    DevSets dev;
    int cap = dev_cap > 0 ? std::min(dev_cap, dev_sentences) : dev_sentences;
    for (const TaskLanguagePair& pair : task_pairs) {
        std::vector<AnnotatedSentence> d = family.sample_corpus(pair.language, dev_sentences,
                                                                Split::dev);
        d.resize(cap);
        dev.emplace(pair, std::move(d));
    }
    for (const std::string& lang : mlm_languages) {
        std::vector<AnnotatedSentence> d =
            family.sample_corpus(lang, dev_sentences, Split::dev);
        d.resize(cap);
        dev.emplace(TaskLanguagePair{"mlm", lang}, std::move(d));
    }
    return dev;
}

void check_freeze_invariant(const Model& model) {
    if (model.system() == System::full_finetune) return;
    for (const auto& [name, t] : model.backbone().params().entries()) {
        if (!Backbone::is_layer_norm_param(name) && t.requires_grad()) {
            throw ContractError("frozen backbone has trainable non-layer-norm parameter " + name);
        }
        if (model.system() == System::madx && t.requires_grad()) {
            throw ContractError("MAD-X backbone must be fully frozen, found " + name);
        }
    }
}

nlohmann::json census_json(const Census& census) {
    nlohmann::json j;
    for (const auto& [module, n] : census.trainable) j["trainable"][module] = n;
    for (const auto& [module, n] : census.frozen) j["frozen"][module] = n;
    j["total_trainable"] = census.total_trainable();
    j["total_frozen"] = census.total_frozen();
    return j;
}

nlohmann::json pairs_json(const std::vector<TaskLanguagePair>& pairs) {
    nlohmann::json j = nlohmann::json::array();
    for (const TaskLanguagePair& p : pairs) j.push_back(p.str());
    return j;
}

void write_metrics(const std::filesystem::path& path, const std::vector<EvalEvent>& history) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    for (const EvalEvent& e : history) {
        nlohmann::json j;
        j["step"] = e.step;
        j["pair"] = e.pair;
        j["metric"] = e.metric;
        j["value"] = e.value;
        f << j.dump() << "\n";
    }
}

void write_manifest(const std::filesystem::path& run_dir, const Model& model,
                    const RegimeConfig& cfg, const RunPersist& persist,
                    const LoopResult& result, const std::filesystem::path& best_checkpoint) {
    nlohmann::json j;
    j["run_name"] = persist.run_name;
    j["system"] = system_name(model.system());
    j["regime"] = regime_name(cfg.regime);
    if (!cfg.partition.empty()) j["partition"] = cfg.partition;
    if (!cfg.task.empty()) j["task"] = cfg.task;
    j["seed"] = cfg.seed;
    j["git"] = persist.git_version;
    j["config"] = nlohmann::json::parse(persist.config_echo_json);
    j["census"] = census_json(model.census());
    j["train_pairs"] = pairs_json(cfg.train_pairs);
    j["eval_pairs"] = pairs_json(cfg.eval_pairs);
    j["mlm_languages"] = cfg.mlm_languages;
    j["mlm_only_languages"] = cfg.mlm_only_languages;
    j["best"] = {{"step", result.best_step},
                 {"score", result.best_score},
                 {"checkpoint", best_checkpoint.string()}};
    nlohmann::json hist = nlohmann::json::array();
    for (const EvalEvent& e : result.history) {
        hist.push_back({{"step", e.step}, {"pair", e.pair}, {"metric", e.metric},
                        {"value", e.value}});
    }
    j["history"] = std::move(hist);
    std::ofstream f(run_dir / "manifest.json", std::ios::trunc);
    if (!f) throw IoError("cannot write manifest in " + run_dir.string());
    f << j.dump(2) << "\n";
}

std::filesystem::path prepare_run_dir(const RunPersist& persist) {
    if (std::filesystem::exists(persist.run_dir)) {
        throw ConfigError("run directory already exists: " + persist.run_dir.string() +
                          " (runs are write-once)");
    }
    std::filesystem::create_directories(persist.run_dir / "checkpoints");
    return persist.run_dir;
}

}  // namespace

TrainResult train(Model& model, const RegimeConfig& cfg, const RunPersist& persist) {
    check_freeze_invariant(model);
    const LanguageFamily& family = model.family();
    if (model.system() == System::hyperx) {
        // the auxiliary task must cover every language
        for (const std::string& lang : family.language_names()) {
            if (std::find(cfg.mlm_languages.begin(), cfg.mlm_languages.end(), lang) ==
                cfg.mlm_languages.end()) {
                throw ContractError("hyperx regime is missing MLM pair for language " + lang);
            }
        }
    }
    std::filesystem::path run_dir = prepare_run_dir(persist);

    std::vector<std::string> mlm_langs =
        model.supports_mlm_auxiliary() ? cfg.mlm_languages : std::vector<std::string>{};
    SamplingPlan plan(build_entries(family, cfg.train_pairs, mlm_langs, cfg.train_sentences),
                      cfg.temperature, Rng::mix(cfg.seed, "train.batch"));
    DevSets dev = build_dev_sets(family, cfg.train_pairs, {}, cfg.dev_sentences, cfg.dev_cap);

    std::filesystem::path best_dir = run_dir / "checkpoints" / "best";
    LoopSpec spec;
    spec.steps = cfg.steps;
    spec.batch_size = cfg.batch_size;
    spec.peak_lr = cfg.peak_lr;
    spec.warmup = cfg.warmup;
    spec.decay = true;
    spec.eval_every = cfg.eval_every;
    spec.mlm_weight = cfg.mlm_weight;
    spec.seed = cfg.seed;
    spec.dump_dir = run_dir;
    spec.on_best = [&](int, double) { model.save_checkpoint(best_dir); };

    LoopResult result = run_loop(model, plan, model.trainables(), dev, spec);
    model.load_checkpoint(best_dir);

    write_metrics(run_dir / "metrics.jsonl", result.history);
    write_manifest(run_dir, model, cfg, persist, result, best_dir);

    TrainResult out;
    out.history = std::move(result.history);
    out.best_step = result.best_step;
    out.best_score = result.best_score;
    out.run_dir = run_dir;
    out.best_checkpoint = best_dir;
    return out;
}

TrainResult train_madx(Model& model, const RegimeConfig& cfg, const RunPersist& persist) {
    if (model.system() != System::madx) throw ContractError("train_madx on a non-madx model");
    if (cfg.regime != Regime::single_task) {
        throw ConfigError("madx supports only the single_task regime");
    }
    check_freeze_invariant(model);
    const LanguageFamily& family = model.family();
    std::filesystem::path run_dir = prepare_run_dir(persist);

    // freeze everything adapter-side, then open one stage at a time
    for (const std::string& lang : family.language_names()) {
        model.language_adapter(lang).params().set_trainable("", false);
    }
    for (const std::string task : {"cat", "bio"}) {
        model.task_adapter(task).params().set_trainable("", false);
    }

    std::vector<EvalEvent> history;

    // stage 1: language adapters, MLM per language
    for (const std::string& lang : family.language_names()) {
        model.language_adapter(lang).params().set_trainable("", true);
        SamplingPlan plan(build_entries(family, {}, {lang}, cfg.train_sentences), cfg.temperature,
                          Rng::mix(cfg.seed, "madx.lang." + lang));
        LoopSpec spec;
        spec.steps = cfg.madx_lang_steps;
        spec.batch_size = cfg.batch_size;
        spec.peak_lr = cfg.peak_lr;
        spec.warmup = std::min(cfg.warmup, cfg.madx_lang_steps / 10);
        spec.decay = true;
        spec.eval_every = 0;
        spec.seed = Rng::mix(cfg.seed, "madx.lang.loop." + lang);
        spec.dump_dir = run_dir;
        LoopResult r = run_loop(model, plan, model.madx_stage_trainables(MadxStage::language, lang),
                                {}, spec);
        history.insert(history.end(), r.history.begin(), r.history.end());
        model.language_adapter(lang).params().set_trainable("", false);
    }

    // stage 2: task adapter + head on the pivot, language adapters frozen
    const std::string& task = cfg.task;
    model.task_adapter(task).params().set_trainable("", true);
    SamplingPlan plan(build_entries(family, cfg.train_pairs, {}, cfg.train_sentences),
                      cfg.temperature, Rng::mix(cfg.seed, "madx.task." + task));
    DevSets dev = build_dev_sets(family, cfg.train_pairs, {}, cfg.dev_sentences, cfg.dev_cap);
    std::filesystem::path best_dir = run_dir / "checkpoints" / "best";
    LoopSpec spec;
    spec.steps = cfg.madx_task_steps;
    spec.batch_size = cfg.batch_size;
    spec.peak_lr = cfg.peak_lr;
    spec.warmup = std::min(cfg.warmup, cfg.madx_task_steps / 10);
    spec.decay = true;
    spec.eval_every = cfg.eval_every;
    spec.seed = Rng::mix(cfg.seed, "madx.task.loop." + task);
    spec.dump_dir = run_dir;
    spec.on_best = [&](int, double) { model.save_checkpoint(best_dir); };
    LoopResult r = run_loop(model, plan, model.madx_stage_trainables(MadxStage::task, task), dev,
                            spec);
    model.load_checkpoint(best_dir);
    history.insert(history.end(), r.history.begin(), r.history.end());

    LoopResult combined;
    combined.history = history;
    combined.best_step = r.best_step;
    combined.best_score = r.best_score;
    write_metrics(run_dir / "metrics.jsonl", history);
    write_manifest(run_dir, model, cfg, persist, combined, best_dir);

    TrainResult out;
    out.history = std::move(history);
    out.best_step = r.best_step;
    out.best_score = r.best_score;
    out.run_dir = run_dir;
    out.best_checkpoint = best_dir;
    return out;
}

FewshotResult fewshot_finetune(Model& model, const TaskLanguagePair& pair, int k, FewshotMode mode,
                               const FewshotOptions& opts,
                               const std::optional<RunPersist>& persist) {
    if (k < 0) throw ContractError("negative k");
    const LanguageFamily& family = model.family();
    FewshotResult result;
    result.metric = pair.task == "bio" ? "span_f1" : "accuracy";

    std::vector<AnnotatedSentence> test =
        family.sample_corpus(pair.language, opts.test_sentences, Split::test);
    std::vector<std::string> bio_labels = family.bio_labels();
    if (mode == FewshotMode::new_label_set) {
        test = family.relabel_with_extra_type(std::move(test));
        bio_labels = LanguageFamily::bio_labels_extended();
        model.reset_head(pair.task, static_cast<int>(bio_labels.size()), opts.seed);
    }

    auto evaluate = [&]() {
        std::vector<std::vector<int>> pred = model.predict_tags(pair.task, pair.language, test);
        std::vector<std::vector<int>> gold;
        gold.reserve(test.size());
        for (const AnnotatedSentence& s : test) {
            gold.push_back(pair.task == "bio" ? s.bio_tags : s.cat_tags);
        }
        if (pair.task == "bio") return span_f1(pred, gold, bio_labels);
        return tag_accuracy(pred, gold);
    };
    result.score_before = evaluate();

    std::vector<AnnotatedSentence> train_data;
    std::vector<Tensor> trainables;
    if (k > 0) {
        Rng sample_rng(Rng::mix(opts.seed, "fewshot.sample." + pair.str()));
        if (mode == FewshotMode::existing_task) {
            std::vector<AnnotatedSentence> pool =
                family.sample_corpus(pair.language, std::max(k, 200), Split::train);
            if (k > static_cast<int>(pool.size())) {
                throw DataError("k=" + std::to_string(k) + " exceeds available data (" +
                                std::to_string(pool.size()) + ")");
            }
            // sampled regardless of the labels
            std::vector<int> idx(pool.size());
            std::iota(idx.begin(), idx.end(), 0);
            sample_rng.shuffle(idx);
            for (int i = 0; i < k; ++i) train_data.push_back(pool[idx[i]]);
            trainables = model.trainables();
            if (model.system() == System::madx) {
                trainables = model.madx_stage_trainables(MadxStage::task, pair.task);
                std::vector<Tensor> lang_params =
                    model.madx_stage_trainables(MadxStage::language, pair.language);
                trainables.insert(trainables.end(), lang_params.begin(), lang_params.end());
            }
        } else {
            // stratified: k shots per entity type
            std::vector<AnnotatedSentence> pool = family.relabel_with_extra_type(
                family.sample_corpus(pair.language, 500, Split::train));
            std::vector<int> idx(pool.size());
            std::iota(idx.begin(), idx.end(), 0);
            sample_rng.shuffle(idx);
            int num_types = (static_cast<int>(bio_labels.size()) - 1) / 2;
            std::vector<int> needed(num_types, k);
            std::set<int> picked;
            for (int i : idx) {
                bool take = false;
                for (const EntitySpan& span : pool[i].spans) {
                    if (needed[span.type] > 0) take = true;
                }
                if (!take) continue;
                for (const EntitySpan& span : pool[i].spans) {
                    if (needed[span.type] > 0) needed[span.type] -= 1;
                }
                picked.insert(i);
                if (std::all_of(needed.begin(), needed.end(), [](int n) { return n == 0; })) break;
            }
            if (!std::all_of(needed.begin(), needed.end(), [](int n) { return n == 0; })) {
                throw DataError("not enough data for " + std::to_string(k) + " shots per label");
            }
            for (int i : picked) train_data.push_back(pool[i]);
            const TaskHead& head = model.heads().at(pair.task);
            trainables = {head.w, head.b};
        }

        Rng drop_rng(Rng::mix(opts.seed, "fewshot.dropout." + pair.str()));
        Adam adam(trainables);
        int steps_per_epoch =
            (static_cast<int>(train_data.size()) + opts.batch_size - 1) / opts.batch_size;
        Rng order_rng(Rng::mix(opts.seed, "fewshot.order." + pair.str()));
        std::vector<int> order(train_data.size());
        std::iota(order.begin(), order.end(), 0);
        for (int epoch = 0; epoch < opts.epochs; ++epoch) {
            order_rng.shuffle(order);
            for (int b = 0; b < steps_per_epoch; ++b) {
                std::vector<const AnnotatedSentence*> batch;
                for (int i = b * opts.batch_size;
                     i < std::min<int>((b + 1) * opts.batch_size,
                                       static_cast<int>(train_data.size()));
                     ++i) {
                    batch.push_back(&train_data[order[i]]);
                }
                Tensor loss =
                    model.tagging_loss(pair.task, pair.language, batch, true, &drop_rng);
                backward(loss);
                adam.step(opts.lr);  // constant rate, decay disabled
                adam.zero_grad();
            }
        }
        result.score_after = evaluate();
    } else {
        result.score_after = result.score_before;
    }
    result.instances_used = static_cast<int>(train_data.size());

    if (persist) {
        std::filesystem::path run_dir = prepare_run_dir(*persist);
        nlohmann::json j;
        j["run_name"] = persist->run_name;
        j["system"] = system_name(model.system());
        j["pair"] = pair.str();
        j["k"] = k;
        j["mode"] = mode == FewshotMode::existing_task ? "existing_task" : "new_label_set";
        j["metric"] = result.metric;
        j["score_before"] = result.score_before;
        j["score_after"] = result.score_after;
        j["instances_used"] = result.instances_used;
        j["seed"] = opts.seed;
        j["git"] = persist->git_version;
        j["config"] = nlohmann::json::parse(persist->config_echo_json);
        std::ofstream f(run_dir / "manifest.json", std::ios::trunc);
        if (!f) throw IoError("cannot write manifest in " + run_dir.string());
        f << j.dump(2) << "\n";
        std::ofstream m(run_dir / "metrics.jsonl", std::ios::trunc);
        nlohmann::json before = {{"step", 0}, {"pair", pair.str()}, {"metric", result.metric},
                                 {"value", result.score_before}};
        nlohmann::json after = {{"step", opts.epochs}, {"pair", pair.str()},
                                {"metric", result.metric}, {"value", result.score_after}};
        m << before.dump() << "\n" << after.dump() << "\n";
    }
    return result;
}

}  // namespace hyperx

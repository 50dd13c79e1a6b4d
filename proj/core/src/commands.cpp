#include "hyperx/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

#include <json.hpp>

#include "hyperx/config.hpp"
#include "hyperx/errors.hpp"
#include "hyperx/evalkit.hpp"
#include "hyperx/model.hpp"
#include "hyperx/trainer.hpp"

namespace hyperx::cli {

namespace {

nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open " + path.string());
    return nlohmann::json::parse(f);
}

struct LoadedRun {
    ExperimentConfig cfg;
    std::unique_ptr<LanguageFamily> family;
    Model model;
    nlohmann::json manifest;
    std::vector<TaskLanguagePair> train_pairs;
    std::vector<TaskLanguagePair> eval_pairs;
    std::string regime_desc;
};

std::vector<TaskLanguagePair> parse_pair_list(const nlohmann::json& arr) {
    std::vector<TaskLanguagePair> out;
    for (const auto& item : arr) {
        std::string s = item.get<std::string>();
        size_t slash = s.find('/');
        if (slash == std::string::npos) throw ParseError("malformed pair '" + s + "'");
        out.push_back({s.substr(0, slash), s.substr(slash + 1)});
    }
    return out;
}

LoadedRun load_run(const std::filesystem::path& run_dir) {
    LoadedRun lr;
    lr.manifest = read_json_file(run_dir / "manifest.json");
    lr.cfg = config_from_json(lr.manifest.at("config").dump());
    lr.family = std::make_unique<LanguageFamily>(family_config(lr.cfg));

    Backbone backbone = Backbone::load(lr.cfg.resolved_backbone_dir());
    System system = parse_system(lr.manifest.at("system").get<std::string>());
    lr.model = Model::create(system, std::move(backbone), *lr.family, model_options(lr.cfg));
    std::filesystem::path checkpoint =
        run_dir / lr.manifest.at("best").at("checkpoint").get<std::string>();
    lr.model.load_checkpoint(checkpoint);

    lr.train_pairs = parse_pair_list(lr.manifest.at("train_pairs"));
    lr.eval_pairs = parse_pair_list(lr.manifest.at("eval_pairs"));
    lr.regime_desc = lr.manifest.at("regime").get<std::string>();
    if (lr.manifest.contains("partition")) {
        lr.regime_desc += "-" + lr.manifest.at("partition").get<std::string>();
    }
    if (lr.manifest.contains("task")) {
        lr.regime_desc += "-" + lr.manifest.at("task").get<std::string>();
    }
    return lr;
}

std::filesystem::path fresh_dir(const std::filesystem::path& path) {
    if (std::filesystem::exists(path)) {
        throw ConfigError("output directory already exists: " + path.string());
    }
    std::filesystem::create_directories(path);
    return path;
}

std::vector<GridPair> to_grid(const std::vector<TaskLanguagePair>& pairs) {
    std::vector<GridPair> out;
    out.reserve(pairs.size());
    for (const TaskLanguagePair& p : pairs) out.push_back({p.task, p.language});
    return out;
}

bool has_format(const std::vector<std::string>& formats, const std::string& f) {
    return std::find(formats.begin(), formats.end(), f) != formats.end();
}

}  // namespace

std::string git_describe() {
    FILE* pipe = popen("git describe --always --tags --dirty 2>/dev/null", "r");
    if (pipe == nullptr) return "unknown";
    char buf[256];
    std::string out;
    while (fgets(buf, sizeof(buf), pipe) != nullptr) out += buf;
    pclose(pipe);
    while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
    return out.empty() ? "unknown" : out;
}

void cmd_pretrain(const std::filesystem::path& config_path) {
    ExperimentConfig cfg = load_config(config_path);
    if (cfg.seed_from_env) {
        std::cout << "seed overridden by HYPERX_SEED=" << cfg.regime.seed << "\n";
    }
    LanguageFamily family(family_config(cfg));
    std::filesystem::path out = cfg.resolved_backbone_dir();
    if (std::filesystem::exists(out)) {
        throw ConfigError("backbone directory already exists: " + out.string());
    }

    std::vector<AnnotatedSentence> corpus =
        family.pretraining_corpus(cfg.backbone.pretrain_sentences);
    PretrainOptions opts;
    opts.steps = cfg.backbone.pretrain_steps;
    opts.batch_size = cfg.backbone.pretrain_batch;
    opts.peak_lr = cfg.backbone.pretrain_lr;
    opts.warmup = cfg.backbone.pretrain_warmup;
    opts.seed = Rng::mix(cfg.regime.seed, "pretrain");

    PretrainResult result = pretrain(family, corpus, backbone_config(cfg), opts);
    result.backbone.save(out, opts.seed, opts.steps, corpus_hash(corpus));
    {
        std::ofstream f(out / "pretrain_loss.jsonl", std::ios::trunc);
        for (const auto& [step, loss] : result.loss_curve) {
            nlohmann::json j = {{"step", step}, {"metric", "mlm_loss"}, {"value", loss}};
            f << j.dump() << "\n";
        }
    }
    std::cout << "pretrained " << cfg.backbone.layers << "-layer backbone on "
              << corpus.size() << " sentences\n";
    std::cout << "initial mlm loss " << result.initial_loss << ", final mlm loss "
              << result.final_loss << "\n";
    std::cout << "checkpoint: " << out.string() << "\n";
}

void cmd_train(const std::filesystem::path& config_path, const TrainOverrides& overrides) {
    ExperimentConfig cfg = load_config(config_path);
    if (overrides.regime) cfg.regime.regime = *overrides.regime;
    if (overrides.partition) cfg.regime.partition = *overrides.partition;
    if (overrides.system) cfg.regime.system = *overrides.system;
    if (overrides.task) cfg.regime.task = *overrides.task;
    if (cfg.seed_from_env) {
        std::cout << "seed overridden by HYPERX_SEED=" << cfg.regime.seed << "\n";
    }

    System system = parse_system(cfg.regime.system);
    Regime regime = parse_regime(cfg.regime.regime);
    if (system == System::madx && regime != Regime::single_task) {
        throw ConfigError("madx cannot run the " + cfg.regime.regime +
                          " regime; only single_task is supported");
    }

    LanguageFamily family(family_config(cfg));
    std::filesystem::path bdir = cfg.resolved_backbone_dir();
    if (!std::filesystem::exists(bdir / "manifest.json")) {
        throw ConfigError("backbone checkpoint not found at " + bdir.string() +
                          " (run `hyperx pretrain` first)");
    }
    Backbone backbone = Backbone::load(bdir);
    {
        nlohmann::json bman = read_json_file(bdir / "manifest.json");
        uint64_t want = corpus_hash(family.pretraining_corpus(cfg.backbone.pretrain_sentences));
        uint64_t have = bman.at("corpus_hash").get<uint64_t>();
        if (want != have) {
            throw ConfigError("backbone at " + bdir.string() +
                              " was pretrained on different data (config or seed mismatch)");
        }
    }

    Model model = Model::create(system, std::move(backbone), family, model_options(cfg));
    RegimeConfig rc = resolve_regime(regime, cfg.regime.partition, cfg.regime.task, system, family,
                                     regime_base(cfg));

    RunPersist persist;
    persist.run_name = cfg.resolved_run_name();
    persist.run_dir = std::filesystem::path(cfg.output.dir) / persist.run_name;
    persist.config_echo_json = config_to_json(cfg);
    persist.git_version = git_describe();

    TrainResult result = system == System::madx ? train_madx(model, rc, persist)
                                                : train(model, rc, persist);
    std::cout << "run " << persist.run_name << ": best dev score " << result.best_score
              << " at step " << result.best_step << "\n";
    std::cout << "manifest: " << (result.run_dir / "manifest.json").string() << "\n";
}

void cmd_eval(const std::vector<std::string>& run_dirs, const EvalOptions& opts) {
    if (run_dirs.empty()) throw ConfigError("eval needs at least one run directory");
    for (const std::string& dir : run_dirs) {
        LoadedRun lr = load_run(dir);

        std::vector<TaskLanguagePair> grid_pairs = lr.eval_pairs;
        for (const TaskLanguagePair& p : lr.train_pairs) {
            if (p.task != "mlm") grid_pairs.push_back(p);
        }
        std::sort(grid_pairs.begin(), grid_pairs.end());
        grid_pairs.erase(std::unique(grid_pairs.begin(), grid_pairs.end()), grid_pairs.end());

        EvalReport report = zero_shot_grid(
            lr.model.predictor(), *lr.family, to_grid(grid_pairs), to_grid(lr.train_pairs),
            lr.cfg.data.test_sentences, lr.manifest.at("system").get<std::string>(),
            lr.regime_desc);

        std::filesystem::path out = opts.out_dir.empty()
                                        ? std::filesystem::path(dir + "-eval")
                                        : (run_dirs.size() == 1
                                               ? std::filesystem::path(opts.out_dir)
                                               : std::filesystem::path(opts.out_dir) /
                                                     lr.manifest.at("run_name").get<std::string>());
        fresh_dir(out);
        if (has_format(opts.formats, "jsonl")) {
            std::ofstream f(out / "report.jsonl", std::ios::trunc);
            f << report.to_jsonl();
        }
        if (has_format(opts.formats, "csv")) {
            std::ofstream f(out / "report.csv", std::ios::trunc);
            f << report.to_csv();
        }
        if (has_format(opts.formats, "text")) {
            std::ofstream f(out / "report.txt", std::ios::trunc);
            f << report.to_text();
        }
        for (const std::string& spec : opts.export_adapters) {
            size_t slash = spec.find('/');
            if (slash == std::string::npos) {
                throw ConfigError("--export-adapters expects task/language, got '" + spec + "'");
            }
            lr.model.export_adapters(out / "adapters", spec.substr(0, slash),
                                     spec.substr(slash + 1));
        }
        std::cout << report.to_text();
        std::cout << "report written to " << out.string() << "\n";
    }
}

void cmd_fewshot(const std::string& run_dir, const FewshotCliOptions& opts) {
    LoadedRun lr = load_run(run_dir);
    const LanguageFamily& family = *lr.family;

    std::vector<TaskLanguagePair> pairs;
    if (opts.pairs == "unseen") {
        for (const TaskLanguagePair& p : lr.eval_pairs) {
            if (!family.language(p.language).spec.seen_in_pretraining) pairs.push_back(p);
        }
    } else if (opts.pairs == "eval") {
        pairs = lr.eval_pairs;
    } else {
        std::istringstream is(opts.pairs);
        std::string item;
        while (std::getline(is, item, ',')) {
            size_t slash = item.find('/');
            if (slash == std::string::npos) {
                throw ConfigError("--pairs expects task/language entries, got '" + item + "'");
            }
            pairs.push_back({item.substr(0, slash), item.substr(slash + 1)});
        }
    }
    if (opts.new_labels) {
        // the new-dataset protocol replaces the softmax layer of the span task
        std::vector<TaskLanguagePair> filtered;
        for (const TaskLanguagePair& p : pairs) {
            if (p.task == "bio") filtered.push_back(p);
        }
        pairs = filtered;
    }
    if (pairs.empty()) throw ConfigError("no pairs selected for few-shot fine-tuning");

    std::string run_name = lr.manifest.at("run_name").get<std::string>();
    std::filesystem::path base = opts.out_dir.empty()
                                     ? std::filesystem::path(run_dir).parent_path()
                                     : std::filesystem::path(opts.out_dir);

    std::cout << "pair\tk\tmode\tbefore\tafter\n";
    for (const TaskLanguagePair& pair : pairs) {
        for (int k : opts.ks) {
            Model model = lr.model.clone();
            FewshotOptions fopts;
            fopts.batch_size = lr.cfg.regime.batch;
            fopts.lr = lr.cfg.regime.lr;
            fopts.seed = lr.cfg.regime.seed;
            fopts.test_sentences = lr.cfg.data.test_sentences;
            FewshotMode mode =
                opts.new_labels ? FewshotMode::new_label_set : FewshotMode::existing_task;
            RunPersist persist;
            persist.run_name = run_name + "-fewshot" + (opts.new_labels ? "-new" : "") + "-" +
                               pair.task + "-" + pair.language + "-k" + std::to_string(k);
            persist.run_dir = base / persist.run_name;
            persist.config_echo_json = config_to_json(lr.cfg);
            persist.git_version = git_describe();
            FewshotResult r = fewshot_finetune(model, pair, k, mode, fopts, persist);
            std::cout << pair.str() << "\t" << k << "\t"
                      << (opts.new_labels ? "new_label_set" : "existing_task") << "\t"
                      << r.score_before << "\t" << r.score_after << "\n";
        }
    }
}

void cmd_report(const std::vector<std::string>& eval_dirs, const ReportOptions& opts) {
    if (eval_dirs.empty()) throw ConfigError("report needs at least one eval directory");
    auto read_report = [](const std::string& dir) {
        std::filesystem::path path = std::filesystem::path(dir) / "report.jsonl";
        std::ifstream f(path);
        if (!f) throw ConfigError("no report.jsonl in " + dir);
        std::stringstream ss;
        ss << f.rdbuf();
        return EvalReport::from_jsonl(ss.str());
    };
    std::vector<EvalReport> reports;
    for (const std::string& dir : eval_dirs) reports.push_back(read_report(dir));

    std::set<std::string> tasks;
    for (const EvalReport& r : reports) {
        for (const PairScore& p : r.pairs) tasks.insert(p.task);
    }

    std::optional<std::filesystem::path> out;
    if (!opts.out_dir.empty()) out = fresh_dir(opts.out_dir);

    for (const std::string& task : tasks) {
        std::string csv = comparison_csv(reports, task);
        if (has_format(opts.formats, "text") || has_format(opts.formats, "csv")) {
            std::cout << "== " << task << "\n" << csv << "\n";
        }
        if (out && has_format(opts.formats, "csv")) {
            std::ofstream f(*out / ("comparison-" + task + ".csv"), std::ios::trunc);
            f << csv;
        }
    }

    if (!opts.baseline.empty()) {
        EvalReport baseline = read_report(opts.baseline);
        for (const EvalReport& r : reports) {
            std::vector<ErrorReduction> red = error_reduction(r, baseline);
            std::ostringstream os;
            os << "task,language,error_reduction_percent\n";
            for (const ErrorReduction& e : red) {
                os << e.task << "," << e.language << ",";
                if (e.percent) {
                    os << *e.percent;
                } else {
                    os << "n/a";
                }
                os << "\n";
            }
            std::cout << "== error reduction: " << r.system << ":" << r.regime << " vs "
                      << baseline.system << "\n"
                      << os.str() << "\n";
            if (out) {
                std::ofstream f(*out / ("error-reduction-" + r.system + "-" + r.regime + ".csv"),
                                std::ios::trunc);
                f << os.str();
            }
        }
    }
}

}  // namespace hyperx::cli

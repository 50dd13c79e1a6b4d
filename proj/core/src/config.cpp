#include "hyperx/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "hyperx/errors.hpp"

namespace hyperx {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int edit_distance(const std::string& a, const std::string& b) {
    std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
    for (size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
    for (size_t i = 1; i <= a.size(); ++i) {
        cur[0] = static_cast<int>(i);
        for (size_t j = 1; j <= b.size(); ++j) {
            int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

std::string suggest(const std::string& got, const std::vector<std::string>& known) {
    std::string best;
    int best_d = 1 << 30;
    for (const std::string& k : known) {
        int d = edit_distance(got, k);
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    if (!best.empty() && best_d <= std::max<int>(2, static_cast<int>(got.size()) / 2)) {
        return " (did you mean '" + best + "'?)";
    }
    return "";
}

int parse_int(const std::string& section, const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        long long v = std::stoll(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return static_cast<int>(v);
    } catch (const std::exception&) {
        throw ConfigError("[" + section + "] " + key + ": '" + value + "' is not an integer");
    }
}

uint64_t parse_u64(const std::string& section, const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        unsigned long long v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return static_cast<uint64_t>(v);
    } catch (const std::exception&) {
        throw ConfigError("[" + section + "] " + key + ": '" + value +
                          "' is not a non-negative integer");
    }
}

double parse_double(const std::string& section, const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("[" + section + "] " + key + ": '" + value + "' is not a number");
    }
}

bool parse_bool(const std::string& section, const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("[" + section + "] " + key + ": '" + value + "' is not a boolean");
}

struct KeyBinding {
    std::string section;
    std::string key;
    std::function<void(ExperimentConfig&, const std::string&)> apply;
};

std::vector<KeyBinding> bindings() {
    std::vector<KeyBinding> b;
    auto add_int = [&b](const std::string& sec, const std::string& key, auto member) {
        b.push_back({sec, key, [sec, key, member](ExperimentConfig& c, const std::string& v) {
                         member(c) = parse_int(sec, key, v);
                     }});
    };
    auto add_double = [&b](const std::string& sec, const std::string& key, auto member) {
        b.push_back({sec, key, [sec, key, member](ExperimentConfig& c, const std::string& v) {
                         member(c) = parse_double(sec, key, v);
                     }});
    };
    auto add_bool = [&b](const std::string& sec, const std::string& key, auto member) {
        b.push_back({sec, key, [sec, key, member](ExperimentConfig& c, const std::string& v) {
                         member(c) = parse_bool(sec, key, v);
                     }});
    };
    auto add_string = [&b](const std::string& sec, const std::string& key, auto member) {
        b.push_back({sec, key, [member](ExperimentConfig& c, const std::string& v) {
                         member(c) = v;
                     }});
    };

    add_int("backbone", "layers", [](ExperimentConfig& c) -> int& { return c.backbone.layers; });
    add_int("backbone", "hidden", [](ExperimentConfig& c) -> int& { return c.backbone.hidden; });
    add_int("backbone", "heads", [](ExperimentConfig& c) -> int& { return c.backbone.heads; });
    add_int("backbone", "ffn", [](ExperimentConfig& c) -> int& { return c.backbone.ffn; });
    add_int("backbone", "vocab", [](ExperimentConfig& c) -> int& { return c.backbone.vocab; });
    add_int("backbone", "max_len", [](ExperimentConfig& c) -> int& { return c.backbone.max_len; });
    add_double("backbone", "dropout",
               [](ExperimentConfig& c) -> double& { return c.backbone.dropout; });
    add_double("backbone", "mlm_mask_rate",
               [](ExperimentConfig& c) -> double& { return c.backbone.mlm_mask_rate; });
    add_int("backbone", "pretrain_steps",
            [](ExperimentConfig& c) -> int& { return c.backbone.pretrain_steps; });
    add_int("backbone", "pretrain_batch",
            [](ExperimentConfig& c) -> int& { return c.backbone.pretrain_batch; });
    add_double("backbone", "pretrain_lr",
               [](ExperimentConfig& c) -> double& { return c.backbone.pretrain_lr; });
    add_int("backbone", "pretrain_warmup",
            [](ExperimentConfig& c) -> int& { return c.backbone.pretrain_warmup; });
    add_int("backbone", "pretrain_sentences",
            [](ExperimentConfig& c) -> int& { return c.backbone.pretrain_sentences; });

    add_int("data", "languages", [](ExperimentConfig& c) -> int& { return c.data.languages; });
    add_int("data", "groups", [](ExperimentConfig& c) -> int& { return c.data.groups; });
    add_int("data", "unseen", [](ExperimentConfig& c) -> int& { return c.data.unseen; });
    add_int("data", "train_sentences",
            [](ExperimentConfig& c) -> int& { return c.data.train_sentences; });
    add_int("data", "dev_sentences",
            [](ExperimentConfig& c) -> int& { return c.data.dev_sentences; });
    add_int("data", "test_sentences",
            [](ExperimentConfig& c) -> int& { return c.data.test_sentences; });
    add_double("data", "entity_rate",
               [](ExperimentConfig& c) -> double& { return c.data.entity_rate; });
    add_double("data", "related_overlap",
               [](ExperimentConfig& c) -> double& { return c.data.related_overlap; });
    add_double("data", "mutation_rate",
               [](ExperimentConfig& c) -> double& { return c.data.mutation_rate; });

    add_int("hypernet", "d_task", [](ExperimentConfig& c) -> int& { return c.hypernet.d_task; });
    add_int("hypernet", "d_lang", [](ExperimentConfig& c) -> int& { return c.hypernet.d_lang; });
    add_int("hypernet", "d_layer", [](ExperimentConfig& c) -> int& { return c.hypernet.d_layer; });
    add_int("hypernet", "d_proj", [](ExperimentConfig& c) -> int& { return c.hypernet.d_proj; });
    add_int("hypernet", "proj_hidden",
            [](ExperimentConfig& c) -> int& { return c.hypernet.proj_hidden; });
    add_int("hypernet", "bottleneck",
            [](ExperimentConfig& c) -> int& { return c.hypernet.bottleneck; });
    add_bool("hypernet", "biases", [](ExperimentConfig& c) -> bool& { return c.hypernet.biases; });
    add_int("hypernet", "madx_lang_bottleneck",
            [](ExperimentConfig& c) -> int& { return c.hypernet.madx_lang_bottleneck; });
    add_int("hypernet", "madx_task_bottleneck",
            [](ExperimentConfig& c) -> int& { return c.hypernet.madx_task_bottleneck; });

    add_string("regime", "regime",
               [](ExperimentConfig& c) -> std::string& { return c.regime.regime; });
    add_string("regime", "partition",
               [](ExperimentConfig& c) -> std::string& { return c.regime.partition; });
    add_string("regime", "task", [](ExperimentConfig& c) -> std::string& { return c.regime.task; });
    add_string("regime", "system",
               [](ExperimentConfig& c) -> std::string& { return c.regime.system; });
    add_int("regime", "steps", [](ExperimentConfig& c) -> int& { return c.regime.steps; });
    add_int("regime", "batch", [](ExperimentConfig& c) -> int& { return c.regime.batch; });
    add_double("regime", "lr", [](ExperimentConfig& c) -> double& { return c.regime.lr; });
    add_int("regime", "warmup", [](ExperimentConfig& c) -> int& { return c.regime.warmup; });
    add_int("regime", "eval_every",
            [](ExperimentConfig& c) -> int& { return c.regime.eval_every; });
    add_double("regime", "temperature",
               [](ExperimentConfig& c) -> double& { return c.regime.temperature; });
    add_double("regime", "mlm_weight",
               [](ExperimentConfig& c) -> double& { return c.regime.mlm_weight; });
    add_int("regime", "dev_cap", [](ExperimentConfig& c) -> int& { return c.regime.dev_cap; });
    add_int("regime", "madx_lang_steps",
            [](ExperimentConfig& c) -> int& { return c.regime.madx_lang_steps; });
    add_int("regime", "madx_task_steps",
            [](ExperimentConfig& c) -> int& { return c.regime.madx_task_steps; });
    b.push_back({"regime", "seed", [](ExperimentConfig& c, const std::string& v) {
                     c.regime.seed = parse_u64("regime", "seed", v);
                 }});

    add_string("output", "dir", [](ExperimentConfig& c) -> std::string& { return c.output.dir; });
    add_string("output", "run_name",
               [](ExperimentConfig& c) -> std::string& { return c.output.run_name; });
    add_string("output", "backbone_dir",
               [](ExperimentConfig& c) -> std::string& { return c.output.backbone_dir; });
    return b;
}

}  // namespace

std::string ExperimentConfig::resolved_run_name() const {
    if (!output.run_name.empty()) return output.run_name;
    std::string name = regime.system + "-" + regime.regime;
    if (!regime.partition.empty()) name += "-" + regime.partition;
    if (!regime.task.empty()) name += "-" + regime.task;
    name += "-s" + std::to_string(regime.seed);
    return name;
}

std::filesystem::path ExperimentConfig::resolved_backbone_dir() const {
    if (!output.backbone_dir.empty()) return output.backbone_dir;
    return std::filesystem::path(output.dir) / "backbone";
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config file not found: " + path.string());

    static const std::vector<KeyBinding> all = bindings();
    std::vector<std::string> section_names = {"backbone", "data", "hypernet", "regime", "output"};

    ExperimentConfig cfg;
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') {
                throw ParseError(path.string() + ":" + std::to_string(lineno) +
                                 ": malformed section header");
            }
            section = trim(t.substr(1, t.size() - 2));
            if (std::find(section_names.begin(), section_names.end(), section) ==
                section_names.end()) {
                throw ConfigError("unknown config section [" + section + "]" +
                                  suggest(section, section_names));
            }
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": expected key = value");
        }
        if (section.empty()) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": key outside any section");
        }
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        const KeyBinding* binding = nullptr;
        std::vector<std::string> section_keys;
        for (const KeyBinding& kb : all) {
            if (kb.section != section) continue;
            section_keys.push_back(kb.key);
            if (kb.key == key) binding = &kb;
        }
        if (binding == nullptr) {
            throw ConfigError("unknown key '" + key + "' in section [" + section + "]" +
                              suggest(key, section_keys));
        }
        binding->apply(cfg, value);
    }

    if (const char* env = std::getenv("HYPERX_SEED")) {
        cfg.regime.seed = parse_u64("regime", "seed (HYPERX_SEED)", env);
        cfg.seed_from_env = true;
    }
    return cfg;
}

std::string config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["backbone"] = {{"layers", c.backbone.layers},
                     {"hidden", c.backbone.hidden},
                     {"heads", c.backbone.heads},
                     {"ffn", c.backbone.ffn},
                     {"vocab", c.backbone.vocab},
                     {"max_len", c.backbone.max_len},
                     {"dropout", c.backbone.dropout},
                     {"mlm_mask_rate", c.backbone.mlm_mask_rate},
                     {"pretrain_steps", c.backbone.pretrain_steps},
                     {"pretrain_batch", c.backbone.pretrain_batch},
                     {"pretrain_lr", c.backbone.pretrain_lr},
                     {"pretrain_warmup", c.backbone.pretrain_warmup},
                     {"pretrain_sentences", c.backbone.pretrain_sentences}};
    j["data"] = {{"languages", c.data.languages},
                 {"groups", c.data.groups},
                 {"unseen", c.data.unseen},
                 {"train_sentences", c.data.train_sentences},
                 {"dev_sentences", c.data.dev_sentences},
                 {"test_sentences", c.data.test_sentences},
                 {"entity_rate", c.data.entity_rate},
                 {"related_overlap", c.data.related_overlap},
                 {"mutation_rate", c.data.mutation_rate}};
    j["hypernet"] = {{"d_task", c.hypernet.d_task},
                     {"d_lang", c.hypernet.d_lang},
                     {"d_layer", c.hypernet.d_layer},
                     {"d_proj", c.hypernet.d_proj},
                     {"proj_hidden", c.hypernet.proj_hidden},
                     {"bottleneck", c.hypernet.bottleneck},
                     {"biases", c.hypernet.biases},
                     {"madx_lang_bottleneck", c.hypernet.madx_lang_bottleneck},
                     {"madx_task_bottleneck", c.hypernet.madx_task_bottleneck}};
    j["regime"] = {{"regime", c.regime.regime},
                   {"partition", c.regime.partition},
                   {"task", c.regime.task},
                   {"system", c.regime.system},
                   {"steps", c.regime.steps},
                   {"batch", c.regime.batch},
                   {"lr", c.regime.lr},
                   {"warmup", c.regime.warmup},
                   {"eval_every", c.regime.eval_every},
                   {"temperature", c.regime.temperature},
                   {"mlm_weight", c.regime.mlm_weight},
                   {"dev_cap", c.regime.dev_cap},
                   {"madx_lang_steps", c.regime.madx_lang_steps},
                   {"madx_task_steps", c.regime.madx_task_steps},
                   {"seed", c.regime.seed}};
    j["output"] = {{"dir", c.output.dir},
                   {"run_name", c.output.run_name},
                   {"backbone_dir", c.output.backbone_dir}};
    j["seed_from_env"] = c.seed_from_env;
    return j.dump();
}

ExperimentConfig config_from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    ExperimentConfig c;
    const auto& b = j.at("backbone");
    c.backbone.layers = b.at("layers");
    c.backbone.hidden = b.at("hidden");
    c.backbone.heads = b.at("heads");
    c.backbone.ffn = b.at("ffn");
    c.backbone.vocab = b.at("vocab");
    c.backbone.max_len = b.at("max_len");
    c.backbone.dropout = b.at("dropout");
    c.backbone.mlm_mask_rate = b.at("mlm_mask_rate");
    c.backbone.pretrain_steps = b.at("pretrain_steps");
    c.backbone.pretrain_batch = b.at("pretrain_batch");
    c.backbone.pretrain_lr = b.at("pretrain_lr");
    c.backbone.pretrain_warmup = b.at("pretrain_warmup");
    c.backbone.pretrain_sentences = b.at("pretrain_sentences");
    const auto& d = j.at("data");
    c.data.languages = d.at("languages");
    c.data.groups = d.at("groups");
    c.data.unseen = d.at("unseen");
    c.data.train_sentences = d.at("train_sentences");
    c.data.dev_sentences = d.at("dev_sentences");
    c.data.test_sentences = d.at("test_sentences");
    c.data.entity_rate = d.at("entity_rate");
    c.data.related_overlap = d.at("related_overlap");
    c.data.mutation_rate = d.at("mutation_rate");
    const auto& h = j.at("hypernet");
    c.hypernet.d_task = h.at("d_task");
    c.hypernet.d_lang = h.at("d_lang");
    c.hypernet.d_layer = h.at("d_layer");
    c.hypernet.d_proj = h.at("d_proj");
    c.hypernet.proj_hidden = h.at("proj_hidden");
    c.hypernet.bottleneck = h.at("bottleneck");
    c.hypernet.biases = h.at("biases");
    c.hypernet.madx_lang_bottleneck = h.at("madx_lang_bottleneck");
    c.hypernet.madx_task_bottleneck = h.at("madx_task_bottleneck");
    const auto& r = j.at("regime");
    c.regime.regime = r.at("regime");
    c.regime.partition = r.at("partition");
    c.regime.task = r.at("task");
    c.regime.system = r.at("system");
    c.regime.steps = r.at("steps");
    c.regime.batch = r.at("batch");
    c.regime.lr = r.at("lr");
    c.regime.warmup = r.at("warmup");
    c.regime.eval_every = r.at("eval_every");
    c.regime.temperature = r.at("temperature");
    c.regime.mlm_weight = r.at("mlm_weight");
    c.regime.dev_cap = r.at("dev_cap");
    c.regime.madx_lang_steps = r.at("madx_lang_steps");
    c.regime.madx_task_steps = r.at("madx_task_steps");
    c.regime.seed = r.at("seed");
    const auto& o = j.at("output");
    c.output.dir = o.at("dir");
    c.output.run_name = o.at("run_name");
    c.output.backbone_dir = o.at("backbone_dir");
    c.seed_from_env = j.value("seed_from_env", false);
    return c;
}

FamilyConfig family_config(const ExperimentConfig& cfg) {
    FamilyConfig f;
    f.num_languages = cfg.data.languages;
    f.num_groups = cfg.data.groups;
    f.num_unseen = cfg.data.unseen;
    f.entity_rate = cfg.data.entity_rate;
    f.related_overlap = cfg.data.related_overlap;
    f.mutation_rate = cfg.data.mutation_rate;
    f.vocab_capacity = cfg.backbone.vocab;
    f.seed = Rng::mix(cfg.regime.seed, "data");
    return f;
}

BackboneConfig backbone_config(const ExperimentConfig& cfg) {
    BackboneConfig b;
    b.num_layers = cfg.backbone.layers;
    b.hidden = cfg.backbone.hidden;
    b.num_heads = cfg.backbone.heads;
    b.ffn = cfg.backbone.ffn;
    b.vocab = cfg.backbone.vocab;
    b.max_len = cfg.backbone.max_len;
    b.dropout = cfg.backbone.dropout;
    b.mlm_mask_rate = cfg.backbone.mlm_mask_rate;
    return b;
}

HypernetConfig hypernet_config(const ExperimentConfig& cfg) {
    HypernetConfig h;
    h.dim_task = cfg.hypernet.d_task;
    h.dim_language = cfg.hypernet.d_lang;
    h.dim_layer = cfg.hypernet.d_layer;
    h.dim_projected = cfg.hypernet.d_proj;
    h.projector_hidden = cfg.hypernet.proj_hidden;
    h.hidden = cfg.backbone.hidden;
    h.bottleneck = cfg.hypernet.bottleneck;
    h.generate_biases = cfg.hypernet.biases;
    return h;
}

ModelOptions model_options(const ExperimentConfig& cfg) {
    ModelOptions m;
    m.hypernet = hypernet_config(cfg);
    m.madx_lang_bottleneck = cfg.hypernet.madx_lang_bottleneck;
    m.madx_task_bottleneck = cfg.hypernet.madx_task_bottleneck;
    m.seed = cfg.regime.seed;
    return m;
}

RegimeConfig regime_base(const ExperimentConfig& cfg) {
    RegimeConfig r;
    r.steps = cfg.regime.steps;
    r.batch_size = cfg.regime.batch;
    r.peak_lr = cfg.regime.lr;
    r.warmup = cfg.regime.warmup;
    r.eval_every = cfg.regime.eval_every;
    r.temperature = cfg.regime.temperature;
    r.mlm_weight = cfg.regime.mlm_weight;
    r.train_sentences = cfg.data.train_sentences;
    r.dev_sentences = cfg.data.dev_sentences;
    r.test_sentences = cfg.data.test_sentences;
    r.dev_cap = cfg.regime.dev_cap;
    r.madx_lang_steps = cfg.regime.madx_lang_steps;
    r.madx_task_steps = cfg.regime.madx_task_steps;
    r.seed = cfg.regime.seed;
    return r;
}

}  // namespace hyperx

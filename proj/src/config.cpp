#include "ccam/config.hpp"

#include <fstream>
#include <set>

#include "ccam/error.hpp"

namespace ccam {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key))
            throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

}  // namespace

std::string RunConfig::classifier_checkpoint() const {
    return model.checkpoint.empty() ? output_dir + "/classifier.json" : model.checkpoint;
}

std::string RunConfig::translator_checkpoint() const {
    return translator.checkpoint.empty() ? output_dir + "/translator.json" : translator.checkpoint;
}

std::string RunConfig::concept_set_path() const {
    return concept_set.empty() ? dataset.dir + "/concepts.json" : concept_set;
}

std::vector<double> RunConfig::threshold_grid() const {
    if (evaluate.grid_step < 1 || evaluate.grid_step > 100)
        throw ConfigError("evaluate.grid_step must be in [1,100]");
    std::vector<double> g;
    for (int n = evaluate.grid_step; n <= 100; n += evaluate.grid_step) g.push_back(n);
    return g;
}

json RunConfig::to_json() const {
    return {{"schema_version", 1},
            {"seed", seed},
            {"jobs", jobs},
            {"output_dir", output_dir},
            {"dataset",
             {{"dir", dataset.dir}, {"count", dataset.count}, {"class_rule", dataset.class_rule}}},
            {"model",
             {{"kind", model.kind},
              {"stages", model.stages},
              {"checkpoint", model.checkpoint},
              {"train",
               {{"epochs", model.train_epochs},
                {"lr", model.train_lr},
                {"momentum", model.train_momentum},
                {"batch_size", model.train_batch_size},
                {"target_accuracy", model.target_accuracy}}}}},
            {"vlm",
             {{"name", vlm.name}, {"dim", vlm.dim}, {"epsilon", vlm.epsilon}, {"path", vlm.path}}},
            {"translator",
             {{"hidden", translator.hidden},
              {"checkpoint", translator.checkpoint},
              {"train", translator.train.to_json()}}},
            {"explain",
             {{"k_channels", explain.k_channels},
              {"patch_grid", explain.patch_grid},
              {"coverage", explain.coverage}}},
            {"evaluate",
             {{"mode", evaluate.mode},
              {"candidate_k", evaluate.candidate_k},
              {"grid_step", evaluate.grid_step},
              {"plot_samples", evaluate.plot_samples}}},
            {"concept_set", concept_set}};
}

RunConfig RunConfig::from_json(const json& j) {
    RunConfig c;
    reject_unknown(j, {"schema_version", "seed", "jobs", "output_dir", "dataset", "model", "vlm",
                       "translator", "explain", "evaluate", "concept_set"},
                   "config");
    c.seed = j.value("seed", c.seed);
    c.jobs = j.value("jobs", c.jobs);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.concept_set = j.value("concept_set", c.concept_set);
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        reject_unknown(d, {"dir", "count", "class_rule"}, "config.dataset");
        c.dataset.dir = d.value("dir", c.dataset.dir);
        c.dataset.count = d.value("count", c.dataset.count);
        c.dataset.class_rule = d.value("class_rule", c.dataset.class_rule);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        reject_unknown(m, {"kind", "stages", "checkpoint", "train"}, "config.model");
        c.model.kind = m.value("kind", c.model.kind);
        c.model.stages = m.value("stages", c.model.stages);
        c.model.checkpoint = m.value("checkpoint", c.model.checkpoint);
        if (m.contains("train")) {
            const json& t = m.at("train");
            reject_unknown(t, {"epochs", "lr", "momentum", "batch_size", "target_accuracy"},
                           "config.model.train");
            c.model.train_epochs = t.value("epochs", c.model.train_epochs);
            c.model.train_lr = t.value("lr", c.model.train_lr);
            c.model.train_momentum = t.value("momentum", c.model.train_momentum);
            c.model.train_batch_size = t.value("batch_size", c.model.train_batch_size);
            c.model.target_accuracy = t.value("target_accuracy", c.model.target_accuracy);
        }
    }
    if (j.contains("vlm")) {
        const json& v = j.at("vlm");
        reject_unknown(v, {"name", "dim", "epsilon", "path"}, "config.vlm");
        c.vlm.name = v.value("name", c.vlm.name);
        c.vlm.dim = v.value("dim", c.vlm.dim);
        c.vlm.epsilon = v.value("epsilon", c.vlm.epsilon);
        c.vlm.path = v.value("path", c.vlm.path);
    }
    if (j.contains("translator")) {
        const json& t = j.at("translator");
        reject_unknown(t, {"hidden", "checkpoint", "train"}, "config.translator");
        c.translator.hidden = t.value("hidden", c.translator.hidden);
        c.translator.checkpoint = t.value("checkpoint", c.translator.checkpoint);
        if (t.contains("train")) {
            reject_unknown(t.at("train"),
                           {"max_epochs", "base_lr", "warmup_peak_lr", "warmup_epochs",
                            "lr_decay_factor", "plateau_epochs", "early_stop_patience", "momentum",
                            "lambda_sim", "batch_size", "seed", "use_similarity_loss",
                            "multi_layer"},
                           "config.translator.train");
            c.translator.train = TrainConfig::from_json(t.at("train"));
        }
    }
    if (j.contains("explain")) {
        const json& e = j.at("explain");
        reject_unknown(e, {"k_channels", "patch_grid", "coverage"}, "config.explain");
        c.explain.k_channels = e.value("k_channels", c.explain.k_channels);
        c.explain.patch_grid = e.value("patch_grid", c.explain.patch_grid);
        c.explain.coverage = e.value("coverage", c.explain.coverage);
    }
    if (j.contains("evaluate")) {
        const json& e = j.at("evaluate");
        reject_unknown(e, {"mode", "candidate_k", "grid_step", "plot_samples"},
                       "config.evaluate");
        c.evaluate.mode = e.value("mode", c.evaluate.mode);
        c.evaluate.candidate_k = e.value("candidate_k", c.evaluate.candidate_k);
        c.evaluate.grid_step = e.value("grid_step", c.evaluate.grid_step);
        c.evaluate.plot_samples = e.value("plot_samples", c.evaluate.plot_samples);
    }
    return c;
}

void apply_override(json& j, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override '" + assignment + "' is not of the form key.path=value");
    const std::string path = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    json* node = &j;
    std::size_t pos = 0;
    for (;;) {
        const std::size_t dot = path.find('.', pos);
        const std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key part");
        if (dot == std::string::npos) {
            json parsed = json::parse(value, nullptr, false);
            (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
            return;
        }
        node = &(*node)[key];
        pos = dot + 1;
    }
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
    for (const std::string& o : overrides) apply_override(j, o);
    return RunConfig::from_json(j);
}

}  // namespace ccam

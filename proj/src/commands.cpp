#include "ccam/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "ccam/error.hpp"
#include "ccam/parallel.hpp"
#include "ccam/png_io.hpp"
#include "ccam/svg_plot.hpp"

namespace fs = std::filesystem;

namespace ccam {

using nlohmann::json;

ConceptExplanation explain_concept(const Classifier& model, const TranslatorNetwork& h,
                                   bool multi_layer, const Tensor& image,
                                   const ConceptText& concept_text, const VlmEmbedding& txt, int K,
                                   int out_h, int out_w) {
    ConceptExplanation out;
    out.concept_text = concept_text;
    GradSession session(model, image);
    Var score = concept_score_var(session, h, txt, multi_layer);
    out.score = session.tape().val(score).data[0];
    std::vector<LayerActivations> acts = session.activations();
    for (int layer = 1; layer <= session.num_layers(); ++layer) {
        ChannelWeights w = concept_weights(session, score, layer);
        ConceptRegionMap region = region_map(acts[layer - 1], w, out_h, out_w);
        region.concept_text = concept_text;
        const int k_layer = std::min<int>(K, acts[layer - 1].maps.dim(0));
        MaskingCurve curve = masking_curve(model, &h, multi_layer, image,
                                           ConceptTarget{concept_text, txt}, layer, k_layer);
        region.association_score = curve_auc(curve);
        out.candidates.push_back(std::move(region));
        out.curves.push_back(std::move(curve));
    }
    return out;
}

std::map<std::string, double> category_means(
    const std::vector<std::pair<std::string, double>>& samples) {
    std::map<std::string, double> sums;
    std::map<std::string, int> counts;
    for (const auto& [cat, v] : samples) {
        sums[cat] += v;
        counts[cat] += 1;
    }
    std::map<std::string, double> out;
    for (auto& [cat, s] : sums) out[cat] = s / counts[cat];
    return out;
}

double macro_average(const std::map<std::string, double>& per_category) {
    if (per_category.empty()) return 0.0;
    double s = 0.0;
    for (const auto& [cat, v] : per_category) s += v;
    return s / static_cast<double>(per_category.size());
}

std::unique_ptr<VlmEncoder> make_vlm(const RunConfig& cfg,
                                     const std::vector<ConceptText>& concepts) {
    if (cfg.vlm.name == "toy") {
        std::vector<std::string> vocab;
        for (const auto& c : concepts) vocab.push_back(c.label);
        return build_toy_vlm(vocab, cfg.seed, cfg.vlm.epsilon, cfg.vlm.dim);
    }
    if (cfg.vlm.name == "precomputed") {
        if (cfg.vlm.path.empty()) throw ConfigError("precomputed VLM needs vlm.path");
        return std::make_unique<PrecomputedVlm>(cfg.vlm.path);
    }
    throw ConfigError("unknown VLM '" + cfg.vlm.name + "' (expected 'toy' or 'precomputed')");
}

namespace {

std::uint64_t file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return fnv1a(bytes.data(), bytes.size());
}

std::string config_hash(const RunConfig& cfg) {
    const std::string dump = cfg.to_json().dump();
    std::ostringstream os;
    os << std::hex << fnv1a(dump.data(), dump.size());
    return os.str();
}

void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(1) << "\n";
}

struct LoadedPipeline {
    DiskDataset data;
    std::unique_ptr<Classifier> model;
    std::unique_ptr<VlmEncoder> vlm;
    TranslatorNetwork translator;
    std::vector<VlmEmbedding> texts;  // normalized, aligned with data.concepts
};

LoadedPipeline load_pipeline(const RunConfig& cfg, bool need_translator) {
    LoadedPipeline p;
    p.data = load_dataset(cfg.dataset.dir);
    p.model = load_classifier(cfg.classifier_checkpoint());
    p.vlm = make_vlm(cfg, p.data.concepts);
    if (need_translator) p.translator = load_translator(cfg.translator_checkpoint());
    for (const auto& c : p.data.concepts) {
        VlmEmbedding e = p.vlm->embed_text(c);
        if (!e.normalized) {
            e.values = normalized(e.values);
            e.normalized = true;
        }
        p.texts.push_back(std::move(e));
    }
    return p;
}

int report_error(const std::string& command, const std::exception& e) {
    std::cerr << "conceptcam " << command << ": " << e.what() << "\n";
    return 1;
}

}  // namespace

int cmd_synth(const RunConfig& cfg) {
    try {
        SyntheticDataset data = generate_dataset(cfg.dataset.count, cfg.seed,
                                                 class_rule_from_string(cfg.dataset.class_rule));
        write_dataset(data, cfg.dataset.dir);
        std::cout << "wrote " << data.scenes.size() << " scenes to " << cfg.dataset.dir
                  << " (manifest hash " << std::hex
                  << file_hash(cfg.dataset.dir + "/manifest.json") << std::dec << ")\n";
        return 0;
    } catch (const std::exception& e) {
        return report_error("synth", e);
    }
}

int cmd_train(const RunConfig& cfg) {
    try {
        DiskDataset data = load_dataset(cfg.dataset.dir);
        fs::create_directories(cfg.output_dir);

        json classifier_info;
        std::unique_ptr<Classifier> model;
        const std::string ckpt = cfg.classifier_checkpoint();
        if (fs::exists(ckpt)) {
            model = load_classifier(ckpt);
            classifier_info["trained"] = false;
        } else {
            if (cfg.model.kind != "conv")
                throw ConfigError("only the conv backbone can be trained from scratch here");
            const int h = data.images.at(0).dim(1), w = data.images.at(0).dim(2);
            auto conv = build_toy_classifier(cfg.model.stages,
                                             static_cast<int>(data.class_names.size()), h, w,
                                             cfg.seed);
            ClassifierTrainOptions opts;
            opts.max_epochs = cfg.model.train_epochs;
            opts.lr = cfg.model.train_lr;
            opts.momentum = cfg.model.train_momentum;
            opts.batch_size = cfg.model.train_batch_size;
            opts.target_val_accuracy = cfg.model.target_accuracy;
            opts.seed = cfg.seed;
            ClassifierTrainReport crep = train_classifier(*conv, data.images, data.labels,
                                                          data.train_indices, data.val_indices,
                                                          opts, cfg.jobs);
            model = std::move(conv);
            save_classifier(*model, ckpt);
            classifier_info["trained"] = true;
            classifier_info["epochs"] = crep.epochs_run;
            classifier_info["val_accuracy"] = crep.epoch_val_accuracy;
            classifier_info["test_accuracy"] = classification_accuracy(
                *model, data.images, data.labels, data.test_indices, cfg.jobs);
        }

        std::unique_ptr<VlmEncoder> vlm = make_vlm(cfg, data.concepts);
        TrainConfig tcfg = cfg.translator.train;
        if (tcfg.seed == 0) tcfg.seed = cfg.seed;
        TrainResult result =
            train_translator(*model, *vlm, data.images, data.train_indices, data.val_indices,
                             data.concepts, cfg.translator.hidden, tcfg, cfg.jobs);

        const std::string tpath = cfg.translator_checkpoint();
        save_translator(result.translator, tpath,
                        {{"config_hash", config_hash(cfg)},
                         {"vlm_id", vlm->id()},
                         {"multi_layer", tcfg.multi_layer}});
        result.report.checkpoint_path = tpath;

        json report = result.report.to_json();
        report["schema_version"] = 1;
        report["classifier"] = classifier_info;
        report["use_similarity_loss"] = tcfg.use_similarity_loss;
        write_json_file(cfg.output_dir + "/train_report.json", report);
        std::cout << "translator checkpoint: " << tpath << "\n"
                  << "stopped at epoch " << result.report.stopped_epoch << ", best epoch "
                  << result.report.best_epoch << ", final validation loss "
                  << result.report.validation.back().total << "\n";
        return 0;
    } catch (const std::exception& e) {
        return report_error("train", e);
    }
}

int cmd_explain(const RunConfig& cfg, const std::string& image_path,
                const std::vector<std::string>& concept_filter) {
    try {
        LoadedPipeline p = load_pipeline(cfg, true);
        const Tensor image = read_png_rgb(image_path);
        fs::create_directories(cfg.output_dir);
        const std::string image_id = fs::path(image_path).stem().string();
        const bool multi = cfg.translator.train.multi_layer;

        std::vector<int> selected;
        json warnings = json::array();
        if (concept_filter.empty()) {
            for (std::size_t i = 0; i < p.data.concepts.size(); ++i)
                selected.push_back(static_cast<int>(i));
        } else {
            for (const std::string& want : concept_filter) {
                bool found = false;
                for (std::size_t i = 0; i < p.data.concepts.size(); ++i)
                    if (p.data.concepts[i].label == want) {
                        selected.push_back(static_cast<int>(i));
                        found = true;
                        break;
                    }
                if (!found) warnings.push_back("unknown concept label '" + want + "'");
            }
        }

        const ClassPrediction pred = p.model->forward(image, nullptr);
        json record;
        record["schema_version"] = 1;
        record["image"] = image_id;
        record["prediction"] = {{"logits", pred.logits},
                                {"probabilities", pred.probabilities},
                                {"predicted_class", pred.predicted_class}};

        struct PerConcept {
            json entry;
            double contribution;
            std::string label;
            MaskingCurve class_curve;
        };
        std::vector<PerConcept> rows(selected.size());
        parallel_for(selected.size(), cfg.jobs, [&](std::size_t si) {
            const int ci = selected[si];
            const ConceptText& concept_text = p.data.concepts[ci];
            ConceptExplanation ex =
                explain_concept(*p.model, p.translator, multi, image, concept_text, p.texts[ci],
                                cfg.explain.k_channels, image.dim(1), image.dim(2));
            int best_layer = 1;
            for (std::size_t l = 1; l < ex.candidates.size(); ++l)
                if (ex.candidates[l].association_score >
                    ex.candidates[best_layer - 1].association_score)
                    best_layer = static_cast<int>(l) + 1;
            const ConceptRegionMap& best = ex.candidates[best_layer - 1];

            const std::string stem =
                cfg.output_dir + "/region_" + image_id + "_" + concept_text.label;
            const Tensor& up = *best.upsampled;
            double lo = up.data[0], hi = up.data[0];
            for (double v : up.data) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            Tensor scaled = up;
            const double range = hi - lo;
            if (range > 0.0)
                for (double& v : scaled.data) v = (v - lo) / range;
            write_png_gray(stem + ".png", scaled);
            write_raw_map(stem + ".raw", up);
            write_json_file(stem + ".json", {{"layer", best.layer_index},
                                             {"scale_min", lo},
                                             {"scale_max", hi},
                                             {"association_score", best.association_score}});

            const int k_layer =
                std::min<int>(cfg.explain.k_channels,
                              p.model->layer_channels()[best_layer - 1]);
            MaskingCurve class_curve =
                masking_curve(*p.model, &p.translator, multi, image, pred.predicted_class,
                              best_layer, k_layer);
            ContributionScore contrib = concept_contribution(
                *p.model, p.translator, multi, image, concept_text, p.texts[ci],
                pred.predicted_class, best_layer, cfg.explain.k_channels);

            json assoc = json::array();
            for (const auto& c : ex.candidates)
                assoc.push_back({{"layer", c.layer_index}, {"score", c.association_score}});
            PerConcept& row = rows[si];
            row.label = concept_text.label;
            row.contribution = contrib.value;
            row.class_curve = class_curve;
            row.entry = {{"label", concept_text.label},
                         {"category", category_to_string(concept_text.category)},
                         {"score", ex.score},
                         {"association_scores", assoc},
                         {"best_layer", best_layer},
                         {"contribution", contrib.value},
                         {"artifacts",
                          {{"png", stem + ".png"}, {"raw", stem + ".raw"},
                           {"sidecar", stem + ".json"}}}};
        });

        // report sorted by absolute contribution, largest first
        std::vector<std::size_t> order(rows.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return std::fabs(rows[a].contribution) > std::fabs(rows[b].contribution);
        });
        json concepts_json = json::array();
        std::vector<std::pair<std::string, double>> bars;
        std::vector<SvgSeries> curve_series;
        const char* colors[6] = {"#4878cf", "#d65f5f", "#6acc65", "#956cb4", "#d5bb67", "#8c613c"};
        for (std::size_t oi = 0; oi < order.size(); ++oi) {
            const PerConcept& row = rows[order[oi]];
            concepts_json.push_back(row.entry);
            bars.emplace_back(row.label, row.contribution);
            if (oi < 6) {
                SvgSeries s;
                s.label = row.label;
                s.color = colors[oi];
                s.x = row.class_curve.x;
                s.y = row.class_curve.y;
                curve_series.push_back(std::move(s));
            }
        }
        record["concepts"] = concepts_json;
        record["warnings"] = warnings;

        write_json_file(cfg.output_dir + "/explanation_" + image_id + ".json", record);
        write_svg_lines(cfg.output_dir + "/masking_curves_" + image_id + ".svg",
                        "class score decrease under channel masking", "fraction of top-K masked",
                        "score decrease", curve_series);
        write_svg_bars(cfg.output_dir + "/contributions_" + image_id + ".svg",
                       "concept contributions", bars);
        std::cout << "explanation written for " << image_id << " (" << concepts_json.size()
                  << " concepts)\n";
        return 0;
    } catch (const std::exception& e) {
        return report_error("explain", e);
    }
}

namespace {

struct EvalOutcome {
    bool skipped = false;
    std::string skip_reason;
    RegionEvalResult best_of_k;
    int best_layer = 0;
    RegionEvalResult top1;
    int top1_layer = 0;
    ThresholdCurve chosen_curve;     // for plot emission
    double mask_fraction = 0.0;
};

json mode_section(const std::vector<std::pair<int, int>>& jobs,
                  const std::vector<EvalOutcome>& outcomes, const DiskDataset& data,
                  bool top1_mode, int candidate_k) {
    json samples = json::array();
    std::vector<std::pair<std::string, double>> nra_samples, epg_samples, auc_samples;
    std::vector<std::pair<std::string, double>> hit_samples;  // includes failures as 0
    json skipped = json::array();
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        const auto& [scene_idx, concept_idx] = jobs[i];
        const EvalOutcome& o = outcomes[i];
        const ConceptText& concept_text = data.concepts[concept_idx];
        const std::string cat = category_to_string(concept_text.category);
        if (o.skipped) {
            skipped.push_back({{"image", data.ids[scene_idx]},
                               {"concept", concept_text.label},
                               {"reason", o.skip_reason}});
            hit_samples.emplace_back(cat, 0.0);  // failures count as nra = 0
            continue;
        }
        const RegionEvalResult& r = top1_mode ? o.top1 : o.best_of_k;
        const int layer = top1_mode ? o.top1_layer : o.best_layer;
        samples.push_back({{"image", data.ids[scene_idx]},
                           {"concept", concept_text.label},
                           {"category", cat},
                           {"layer", layer},
                           {"epg", r.epg},
                           {"auc", r.auc},
                           {"auc_high", r.auc_high},
                           {"auc_low", r.auc_low},
                           {"nra", r.nra},
                           {"hit", r.hit}});
        nra_samples.emplace_back(cat, r.nra);
        epg_samples.emplace_back(cat, r.epg);
        auc_samples.emplace_back(cat, r.auc);
        hit_samples.emplace_back(cat, r.hit ? 1.0 : 0.0);
    }
    auto to_json_map = [](const std::map<std::string, double>& m) {
        json j = json::object();
        for (const auto& [k, v] : m) j[k] = v;
        return j;
    };
    const auto nra_cat = category_means(nra_samples);
    const auto epg_cat = category_means(epg_samples);
    const auto auc_cat = category_means(auc_samples);
    const auto hit_cat = category_means(hit_samples);
    json out;
    out["k"] = top1_mode ? 1 : candidate_k;
    out["samples"] = samples;
    out["per_category"] = {{"nra", to_json_map(nra_cat)},
                           {"epg", to_json_map(epg_cat)},
                           {"auc", to_json_map(auc_cat)},
                           {"hit_rate", to_json_map(hit_cat)}};
    out["average"] = {{"nra", macro_average(nra_cat)},
                      {"epg", macro_average(epg_cat)},
                      {"auc", macro_average(auc_cat)},
                      {"hit_rate", macro_average(hit_cat)}};
    out["skipped"] = skipped;
    return out;
}

}  // namespace

int cmd_evaluate(const RunConfig& cfg) {
    try {
        LoadedPipeline p = load_pipeline(cfg, true);
        fs::create_directories(cfg.output_dir);
        const bool multi = cfg.translator.train.multi_layer;
        const std::vector<double> grid = cfg.threshold_grid();

        std::vector<std::pair<int, int>> jobs;  // (scene index, concept index)
        for (int idx : p.data.test_indices) {
            const auto mit = p.data.masks.find(p.data.ids[idx]);
            if (mit == p.data.masks.end()) continue;
            for (std::size_t ci = 0; ci < p.data.concepts.size(); ++ci)
                if (mit->second.count(p.data.concepts[ci].label))
                    jobs.emplace_back(idx, static_cast<int>(ci));
        }
        if (jobs.empty()) throw ConfigError("no evaluable (image, concept) samples found");

        std::vector<EvalOutcome> outcomes(jobs.size());
        parallel_for(jobs.size(), cfg.jobs, [&](std::size_t i) {
            const auto& [scene_idx, concept_idx] = jobs[i];
            EvalOutcome& o = outcomes[i];
            const ConceptText& concept_text = p.data.concepts[concept_idx];
            const BinaryMask& mask = p.data.masks.at(p.data.ids[scene_idx]).at(concept_text.label);
            const Tensor& image = p.data.images[scene_idx];
            try {
                if (mask.count() == 0) throw MetricUndefinedError("mask has no positive pixels");
                ConceptExplanation ex = explain_concept(*p.model, p.translator, multi, image,
                                                        concept_text, p.texts[concept_idx],
                                                        cfg.explain.k_channels, mask.h, mask.w);
                o.best_of_k = evaluate_candidates(ex.candidates, mask,
                                                  EvalMode::best_nra_of_top_k,
                                                  cfg.evaluate.candidate_k, grid, &o.best_layer);
                o.top1 = evaluate_candidates(ex.candidates, mask, EvalMode::top1_by_association,
                                             1, grid, &o.top1_layer);
                const Tensor& chosen = *ex.candidates[o.best_layer - 1].upsampled;
                o.chosen_curve = threshold_curve(chosen, mask, grid);
                o.mask_fraction = mask.fraction();
            } catch (const MetricUndefinedError& e) {
                o.skipped = true;
                o.skip_reason = e.what();
            }
        });

        if (cfg.evaluate.mode != "both") eval_mode_from_string(cfg.evaluate.mode);
        json results;
        results["schema_version"] = 1;
        results["seed"] = cfg.seed;
        results["dataset"] = cfg.dataset.dir;
        json modes = json::object();
        if (cfg.evaluate.mode == "both" || cfg.evaluate.mode == "best_nra_of_top_k")
            modes["best_nra_of_top_k"] =
                mode_section(jobs, outcomes, p.data, false, cfg.evaluate.candidate_k);
        if (cfg.evaluate.mode == "both" || cfg.evaluate.mode == "top1_by_association")
            modes["top1_by_association"] = mode_section(jobs, outcomes, p.data, true, 1);
        results["modes"] = modes;
        write_json_file(cfg.output_dir + "/results.json", results);

        // threshold-curve plots for the first few evaluable samples
        fs::create_directories(cfg.output_dir + "/plots");
        int plotted = 0;
        for (std::size_t i = 0; i < jobs.size() && plotted < cfg.evaluate.plot_samples; ++i) {
            const EvalOutcome& o = outcomes[i];
            if (o.skipped) continue;
            const auto& [scene_idx, concept_idx] = jobs[i];
            const double m = o.mask_fraction;
            SvgSeries pred{"predicted", "#4878cf", {}, {}};
            SvgSeries ideal{"ideal", "#6acc65", {}, {}};
            SvgSeries rnd{"random", "#ee854a", {}, {}};
            for (std::size_t g = 0; g < grid.size(); ++g) {
                const double a = grid[g] / 100.0;
                pred.x.push_back(a);
                pred.y.push_back(o.chosen_curve.ious[g]);
                ideal.x.push_back(a);
                ideal.y.push_back(a <= m ? a / m : m / a);
                rnd.x.push_back(a);
                rnd.y.push_back(a * m / (a + m - a * m));
            }
            const std::string name = cfg.output_dir + "/plots/curve_" + p.data.ids[scene_idx] +
                                     "_" + p.data.concepts[concept_idx].label + ".svg";
            write_svg_lines(name, "threshold-IoU", "top-n% threshold fraction", "IoU",
                            {pred, ideal, rnd});
            ++plotted;
        }

        const json& head = results["modes"].begin().value();
        std::cout << "evaluated " << jobs.size() << " samples; "
                  << results["modes"].begin().key() << " Avg. NRA " << head["average"]["nra"]
                  << ", Hit Rate " << head["average"]["hit_rate"] << "\n";
        return 0;
    } catch (const std::exception& e) {
        return report_error("evaluate", e);
    }
}

}  // namespace ccam

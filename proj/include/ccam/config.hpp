#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "ccam/translator.hpp"

namespace ccam {

// One JSON file drives every command; unknown keys are rejected so typos
// fail loudly. Dotted-key overrides come from the command line.
struct RunConfig {
    std::uint64_t seed = 7;
    int jobs = 1;
    std::string output_dir = "out";

    struct Dataset {
        std::string dir = "data";
        int count = 2000;
        std::string class_rule = "shape_kind";
    } dataset;

    struct Model {
        std::string kind = "conv";
        std::vector<int> stages{8, 16, 32, 64};
        std::string checkpoint;  // defaults to <output_dir>/classifier.json
        int train_epochs = 10;
        double train_lr = 0.05;
        double train_momentum = 0.9;
        int train_batch_size = 32;
        double target_accuracy = 0.97;
    } model;

    struct Vlm {
        std::string name = "toy";
        int dim = 64;
        double epsilon = 0.05;
        std::string path;  // embedding export for the precomputed adapter
    } vlm;

    struct Translator {
        std::vector<int> hidden{96, 80};
        std::string checkpoint;  // defaults to <output_dir>/translator.json
        TrainConfig train;
    } translator;

    struct Explain {
        int k_channels = 20;
        int patch_grid = 8;
        double coverage = 0.2;
    } explain;

    struct Evaluate {
        std::string mode = "both";  // both | best_nra_of_top_k | top1_by_association
        int candidate_k = 4;
        int grid_step = 1;
        int plot_samples = 4;
    } evaluate;

    std::string concept_set;  // defaults to <dataset.dir>/concepts.json

    std::string classifier_checkpoint() const;
    std::string translator_checkpoint() const;
    std::string concept_set_path() const;
    std::vector<double> threshold_grid() const;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
};

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides = {});

// "a.b.c=value" with JSON-style value parsing (number/bool/string).
void apply_override(nlohmann::json& j, const std::string& assignment);

}  // namespace ccam

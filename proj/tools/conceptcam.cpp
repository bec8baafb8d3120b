#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ccam/commands.hpp"
#include "ccam/config.hpp"
#include "ccam/parallel.hpp"

int main(int argc, char** argv) {
    CLI::App app{"concept explanations for image classifiers"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    long long seed = -1;
    int jobs = 0;
    int k = 0;
    std::string mode;
    std::string out_dir;
    bool no_similarity_loss = false;
    bool single_layer = false;

    app.add_option("--config", config_path, "run configuration JSON")->required();
    app.add_option("--set", overrides, "dotted-key override, e.g. translator.train.base_lr=0.05");
    app.add_option("--seed", seed, "override the run seed");
    app.add_option("--jobs", jobs, "parallel jobs for evaluation fan-out");
    app.add_option("--k", k, "top-K channels for masking curves");
    app.add_option("--mode", mode, "evaluation mode: best_nra_of_top_k | top1_by_association");
    app.add_option("--out", out_dir, "output directory");
    app.add_flag("--no-similarity-loss", no_similarity_loss,
                 "train the translator on the embedding loss alone");
    app.add_flag("--single-layer", single_layer,
                 "use only the final layer embedding instead of the concatenation");

    auto* synth = app.add_subcommand("synth", "generate the synthetic benchmark dataset");
    auto* train = app.add_subcommand("train", "train the classifier (if needed) and translator");
    auto* explain = app.add_subcommand("explain", "explain one image");
    auto* evaluate = app.add_subcommand("evaluate", "region metrics over the test split");

    std::string image_path;
    std::vector<std::string> concept_filter;
    explain->add_option("--image", image_path, "input image (PNG)")->required();
    explain->add_option("--concepts", concept_filter, "restrict to these concept labels");

    CLI11_PARSE(app, argc, argv);

    try {
        if (seed >= 0) overrides.push_back("seed=" + std::to_string(seed));
        if (jobs > 0) overrides.push_back("jobs=" + std::to_string(jobs));
        if (k > 0) overrides.push_back("explain.k_channels=" + std::to_string(k));
        if (!out_dir.empty()) overrides.push_back("output_dir=" + out_dir);
        if (!mode.empty()) {
            if (mode != "both") ccam::eval_mode_from_string(mode);  // validate early
            overrides.push_back("evaluate.mode=" + mode);
        }
        if (no_similarity_loss) overrides.push_back("translator.train.use_similarity_loss=false");
        if (single_layer) overrides.push_back("translator.train.multi_layer=false");

        ccam::RunConfig cfg = ccam::load_run_config(config_path, overrides);
        if (cfg.jobs <= 0) cfg.jobs = ccam::default_jobs();

        if (synth->parsed()) return ccam::cmd_synth(cfg);
        if (train->parsed()) return ccam::cmd_train(cfg);
        if (explain->parsed()) return ccam::cmd_explain(cfg, image_path, concept_filter);
        if (evaluate->parsed()) return ccam::cmd_evaluate(cfg);
    } catch (const std::exception& e) {
        std::cerr << "conceptcam: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

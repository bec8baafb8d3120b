#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ccam/autodiff.hpp"
#include "ccam/model.hpp"
#include "ccam/rng.hpp"
#include "ccam/vlm.hpp"

namespace ccam {

// MLP mapping pooled classifier embeddings into the VLM embedding space.
// tanh on hidden layers, identity on the output layer.
struct TranslatorNetwork {
    std::vector<std::pair<int, int>> layer_dims;  // (in, out) per layer
    std::vector<Tensor> weights;                  // (out, in)
    std::vector<Tensor> biases;                   // (out)

    static TranslatorNetwork create(const std::vector<std::pair<int, int>>& dims);
    void init(Rng& rng);

    int in_dim() const { return layer_dims.front().first; }
    int out_dim() const { return layer_dims.back().second; }

    std::vector<double> apply(const std::vector<double>& z) const;
    Var apply_on_tape(Tape& tape, Var z, std::vector<Var>* param_vars) const;

    std::vector<Tensor*> params();

    nlohmann::json to_json() const;
    static TranslatorNetwork from_json(const nlohmann::json& j);
};

void save_translator(const TranslatorNetwork& h, const std::string& path,
                     const nlohmann::json& extra = {});
TranslatorNetwork load_translator(const std::string& path);

// Raw (un-normalized) image-modality embedding.
VlmEmbedding translate(const TranslatorNetwork& h, const std::vector<double>& z);

// Similarity of the translated embedding with a concept text embedding.
double concept_score(const TranslatorNetwork& h, const ConcatEmbedding& z,
                     const VlmEmbedding& txt);

struct LossValues {
    double emb = 0.0;
    double sim = 0.0;
    double total = 0.0;
};

// emb: MSE between the translated vector and the raw VLM image embedding.
// sim: mean over the concept batch of squared score differences; zero when
// the similarity loss is disabled.
LossValues losses(const TranslatorNetwork& h, const std::vector<double>& z,
                  const VlmEmbedding& vlm_img, const std::vector<VlmEmbedding>& txt_batch,
                  double lambda_sim, bool use_similarity_loss);

struct TrainConfig {
    int max_epochs = 150;
    double base_lr = 0.1;
    double warmup_peak_lr = 0.2;
    int warmup_epochs = 5;  // 0 disables warm-up
    double lr_decay_factor = 0.1;
    int plateau_epochs = 4;
    int early_stop_patience = 10;
    double momentum = 0.9;
    double lambda_sim = 0.001;
    int batch_size = 64;
    std::uint64_t seed = 0;
    bool use_similarity_loss = true;
    bool multi_layer = true;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochLosses {
    double emb = 0.0;
    double sim = 0.0;
    double total = 0.0;
};

struct TrainReport {
    std::vector<EpochLosses> train;
    std::vector<EpochLosses> validation;
    int stopped_epoch = 0;
    int best_epoch = 0;
    double final_lr = 0.0;
    std::string checkpoint_path;

    nlohmann::json to_json() const;
};

struct TrainResult {
    TranslatorNetwork translator;
    TrainReport report;
};

// Trains the translator against frozen classifier and VLM snapshots.
// hidden_dims describes the hidden widths; input width follows cfg.multi_layer
// and output width is the VLM dimension. Per-image embeddings are
// precomputed once since both backbones are frozen.
TrainResult train_translator(const Classifier& model, const VlmEncoder& vlm,
                             const std::vector<Tensor>& images,
                             const std::vector<int>& train_split,
                             const std::vector<int>& val_split,
                             const std::vector<ConceptText>& concepts,
                             const std::vector<int>& hidden_dims, const TrainConfig& cfg,
                             int jobs = 1);

}  // namespace ccam

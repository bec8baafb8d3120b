#pragma once

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "ccam/autodiff.hpp"
#include "ccam/rng.hpp"
#include "ccam/tensor.hpp"

namespace ccam {

// Per-layer feature maps captured from a classifier. layer_index is 1-based
// and strictly increasing within one capture.
struct LayerActivations {
    int layer_index = 0;
    Tensor maps;  // (C,H,W)
};

struct PooledEmbedding {
    int layer_index = 0;
    std::vector<double> values;
};

struct ConcatEmbedding {
    struct Slice {
        int layer_index;
        int start;
        int length;
    };
    std::vector<double> values;
    std::vector<Slice> layer_offsets;
};

struct ClassPrediction {
    std::vector<double> logits;
    std::vector<double> probabilities;
    int predicted_class = 0;
};

ClassPrediction prediction_from_logits(const std::vector<double>& logits);

// Spatial mean per channel.
PooledEmbedding pool_layer(const LayerActivations& acts);

// In-order concatenation of pooled layer embeddings; rejects duplicate layers.
ConcatEmbedding concat_layers(const std::vector<PooledEmbedding>& pooled);

// Row-major reshape of a token sequence into (D, S, S) activation maps. When
// has_class_token is set the first token is dropped before the reshape.
LayerActivations tokens_to_grid(const Tensor& tokens, bool has_class_token, int layer_index = 1);

// A frozen differentiable classifier with declared capture points. Instances
// are immutable after load/init, so const use is thread-safe.
class Classifier {
public:
    virtual ~Classifier() = default;

    virtual int num_layers() const = 0;
    virtual int num_classes() const = 0;
    virtual int input_height() const = 0;
    virtual int input_width() const = 0;
    virtual std::vector<int> layer_channels() const = 0;

    virtual ClassPrediction forward(const Tensor& image,
                                    std::vector<LayerActivations>* captures) const = 0;

    // Recomputes everything downstream of layer_index from a replacement
    // activation; layers below are taken from base unchanged.
    virtual ClassPrediction forward_from(int layer_index, const LayerActivations& replacement,
                                         const std::vector<LayerActivations>& base,
                                         std::vector<LayerActivations>* downstream) const = 0;

    // Differentiable forward. Captured activations come back as tape vars so
    // gradients of any downstream scalar w.r.t. them are obtainable. When
    // param_vars is non-null, parameters are bound as gradient-tracked leaves
    // in the same order as params().
    virtual Var forward_on_tape(Tape& tape, const Tensor& image, std::vector<Var>* captures,
                                std::vector<Var>* param_vars) const = 0;

    virtual std::vector<Tensor*> params() = 0;
    virtual std::vector<const Tensor*> params() const = 0;
    virtual void init_params(Rng& rng) = 0;
    virtual nlohmann::json to_json() const = 0;
};

// Stage = conv3x3(pad 1) -> ReLU -> avgpool 2x2; capture after each stage,
// then global average pool + linear head.
class ConvBackbone : public Classifier {
public:
    ConvBackbone(int in_channels, int height, int width, std::vector<int> stage_channels,
                 int num_classes);

    int num_layers() const override { return static_cast<int>(stage_channels_.size()); }
    int num_classes() const override { return num_classes_; }
    int input_height() const override { return height_; }
    int input_width() const override { return width_; }
    std::vector<int> layer_channels() const override { return stage_channels_; }

    ClassPrediction forward(const Tensor& image,
                            std::vector<LayerActivations>* captures) const override;
    ClassPrediction forward_from(int layer_index, const LayerActivations& replacement,
                                 const std::vector<LayerActivations>& base,
                                 std::vector<LayerActivations>* downstream) const override;
    Var forward_on_tape(Tape& tape, const Tensor& image, std::vector<Var>* captures,
                        std::vector<Var>* param_vars) const override;

    std::vector<Tensor*> params() override;
    std::vector<const Tensor*> params() const override;
    void init_params(Rng& rng) override;
    nlohmann::json to_json() const override;
    static std::unique_ptr<ConvBackbone> from_json(const nlohmann::json& j);

    Tensor& head_weight() { return head_w_; }
    Tensor& head_bias() { return head_b_; }
    Tensor& stage_weight(int s) { return conv_w_[s]; }
    Tensor& stage_bias(int s) { return conv_b_[s]; }
    const Tensor& stage_weight(int s) const { return conv_w_[s]; }
    const Tensor& stage_bias(int s) const { return conv_b_[s]; }

private:
    void check_input(const Tensor& image) const;
    Tensor stage_forward(int stage, const Tensor& input) const;

    int in_channels_, height_, width_;
    std::vector<int> stage_channels_;
    int num_classes_;
    std::vector<Tensor> conv_w_, conv_b_;
    Tensor head_w_, head_b_;
};

// Patch-embedding token mixer. Blocks mix each token with a projection of the
// token mean; captured blocks are exposed as (D,S,S) grids.
class TokenBackbone : public Classifier {
public:
    TokenBackbone(int in_channels, int height, int width, int patch, int embed_dim, int blocks,
                  std::vector<int> capture_blocks, int num_classes);

    int num_layers() const override { return static_cast<int>(capture_blocks_.size()); }
    int num_classes() const override { return num_classes_; }
    int input_height() const override { return height_; }
    int input_width() const override { return width_; }
    std::vector<int> layer_channels() const override;

    ClassPrediction forward(const Tensor& image,
                            std::vector<LayerActivations>* captures) const override;
    ClassPrediction forward_from(int layer_index, const LayerActivations& replacement,
                                 const std::vector<LayerActivations>& base,
                                 std::vector<LayerActivations>* downstream) const override;
    Var forward_on_tape(Tape& tape, const Tensor& image, std::vector<Var>* captures,
                        std::vector<Var>* param_vars) const override;

    std::vector<Tensor*> params() override;
    std::vector<const Tensor*> params() const override;
    void init_params(Rng& rng) override;
    nlohmann::json to_json() const override;
    static std::unique_ptr<TokenBackbone> from_json(const nlohmann::json& j);

    int grid_side() const { return side_; }

private:
    Tensor image_to_patch_rows(const Tensor& image) const;
    Tensor block_forward(int block, const Tensor& tokens) const;
    ClassPrediction head_forward(const Tensor& tokens) const;

    int in_channels_, height_, width_, patch_, embed_dim_, blocks_;
    std::vector<int> capture_blocks_;  // 1-based block ids, ascending
    int num_classes_;
    int side_;
    Tensor embed_w_, embed_b_;
    std::vector<Tensor> tok_w_, tok_b_, mix_w_, mix_b_;
    Tensor head_w_, head_b_;
};

struct ForwardCapture {
    std::vector<LayerActivations> activations;
    ClassPrediction prediction;
};

// Plain forward pass with captured activations. Errors on input-shape
// mismatch and on models with no declared capture points.
ForwardCapture forward_with_activations(const Classifier& model, const Tensor& image);

std::vector<PooledEmbedding> pool_all(const std::vector<LayerActivations>& acts);

struct MaskedRecompute {
    ClassPrediction prediction;
    ConcatEmbedding concat;
    std::vector<PooledEmbedding> pooled;
};

// Replaces whole activation channels at layer_index by mask_value and
// recomputes everything downstream; layers below keep their base values.
MaskedRecompute recompute_masked(const Classifier& model,
                                 const std::vector<LayerActivations>& base, int layer_index,
                                 const std::vector<int>& channels, double mask_value);

MaskedRecompute mask_channels_and_recompute(const Classifier& model, const Tensor& image,
                                            int layer_index, const std::vector<int>& channels,
                                            double mask_value);

// One differentiation job over one image: a private tape holding the captured
// activations, pooled embeddings, concat embedding and class prediction.
class GradSession {
public:
    GradSession(const Classifier& model, const Tensor& image);

    Tape& tape() { return tape_; }
    int num_layers() const { return static_cast<int>(captures_.size()); }

    Var activation_var(int layer_index) const;
    Var pooled_var(int layer_index) const;
    Var concat_var() const { return concat_; }
    Var logits_var() const { return logits_; }
    Var probabilities_var() const { return probs_; }
    Var class_score_var(int class_index);

    std::vector<LayerActivations> activations() const;
    std::vector<PooledEmbedding> pooled() const;
    ConcatEmbedding concat() const;
    ClassPrediction prediction() const;

    // Runs backward for the scalar (cached) and returns d(scalar)/d(maps).
    Tensor activation_gradient(Var scalar, int layer_index);

private:
    Tape tape_;
    std::vector<Var> captures_;
    std::vector<Var> pooled_;
    Var concat_, logits_, probs_;
    int last_backward_ = -1;
};

// Registry: builds a classifier from a spec object or loads one from a
// checkpoint written by save_classifier.
std::unique_ptr<Classifier> make_classifier(const nlohmann::json& spec);
std::unique_ptr<Classifier> load_classifier(const std::string& path);
void save_classifier(const Classifier& model, const std::string& path);

}  // namespace ccam

#pragma once

#include <array>
#include <optional>
#include <variant>
#include <vector>

#include "ccam/model.hpp"
#include "ccam/translator.hpp"
#include "ccam/vlm.hpp"

namespace ccam {

struct ChannelWeights {
    int layer_index = 0;
    std::vector<double> weights;
};

// Gradient-weighted fusion of one layer's activation maps, localizing a
// concept (or a class, for the reference saliency route).
struct ConceptRegionMap {
    ConceptText concept_text;
    int layer_index = 0;
    Tensor map;                      // (H_l, W_l), nonnegative
    std::optional<Tensor> upsampled;  // (H, W) at image resolution
    double association_score = 0.0;
};

enum class CurveTarget { concept_score, class_score };

// Cumulative channel-masking trace. x runs over the masked fraction of the
// top-K set; y holds base-score minus masked-score (may go negative).
struct MaskingCurve {
    std::vector<double> x;
    std::vector<double> y;
    double base_score = 0.0;
    CurveTarget target = CurveTarget::concept_score;
};

struct ContributionScore {
    ConceptText concept_text;
    int layer_index = 0;
    double value = 0.0;
};

// Per-channel weights: spatial gradient sum of the score divided by the
// pooling normalization (H_l * W_l).
ChannelWeights concept_weights(GradSession& session, Var score, int layer_index);

// ReLU of the weighted channel sum; upsampled bilinearly to (out_h, out_w).
ConceptRegionMap region_map(const LayerActivations& acts, const ChannelWeights& w, int out_h,
                            int out_w);

// Classic class-score saliency at the final captured layer. Independent
// arithmetic from concept_weights/region_map, usable as an equivalence check.
ConceptRegionMap gradcam_map(GradSession& session, int class_index, int out_h, int out_w);

// Builds the concept prediction score on the session's tape: translated
// embedding (normalized) dotted with the normalized text embedding.
Var concept_score_var(GradSession& session, const TranslatorNetwork& h, const VlmEmbedding& txt,
                      bool multi_layer);

struct ConceptTarget {
    ConceptText concept_text;
    VlmEmbedding text;
};
using MaskTarget = std::variant<ConceptTarget, int>;  // int = class index

// Masks the top-K channels one by one (importance = weight * pooled value,
// mask value = mean pooled value over all channels of the layer) and records
// the score decrease after each step. The translator may be null for class
// targets.
MaskingCurve masking_curve(const Classifier& model, const TranslatorNetwork* h, bool multi_layer,
                           const Tensor& image, const MaskTarget& target, int layer_index, int K);

// Trapezoidal area of y over x in [0,1].
double curve_auc(const MaskingCurve& curve);

// Impact of masking on the concept score, per layer; K is clamped to each
// layer's channel count.
std::vector<std::pair<int, double>> association_scores(const Classifier& model,
                                                       const TranslatorNetwork& h, bool multi_layer,
                                                       const Tensor& image,
                                                       const ConceptText& concept_text,
                                                       const VlmEmbedding& txt, int K);

// Impact on the class score when masking channels in the order chosen by the
// concept's importances. Negative values mean masking raises the class score.
ContributionScore concept_contribution(const Classifier& model, const TranslatorNetwork& h,
                                       bool multi_layer, const Tensor& image,
                                       const ConceptText& concept_text, const VlmEmbedding& txt,
                                       int class_index, int layer_index, int K);

struct CounterfactualResult {
    Tensor masked_image;
    ClassPrediction before;
    ClassPrediction after;
};

// Candidate for patch-based counterfactuals: highest association among maps
// at least as fine as the patch grid (a coarser map cannot rank the
// patches). Falls back to the overall association argmax. Returns an index
// into candidates.
int counterfactual_layer_choice(const std::vector<ConceptRegionMap>& candidates, int patch_grid);

// Replaces the patches with the highest mean region value by the fill color.
CounterfactualResult counterfactual_patch_mask(const Classifier& model, const Tensor& image,
                                               const ConceptRegionMap& region, int patch_grid,
                                               double coverage,
                                               const std::array<double, 3>& fill_color);

}  // namespace ccam

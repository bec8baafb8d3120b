#pragma once

#include <map>
#include <string>
#include <vector>

#include "ccam/config.hpp"
#include "ccam/explain.hpp"
#include "ccam/metrics.hpp"
#include "ccam/synthetic.hpp"

namespace ccam {

// Per-layer candidates with association scores plus the concept prediction
// score, computed from one differentiation session per (image, concept) job.
struct ConceptExplanation {
    ConceptText concept_text;
    double score = 0.0;  // S^t on this image
    std::vector<ConceptRegionMap> candidates;  // one per layer
    std::vector<MaskingCurve> curves;          // concept-score curves per layer
};

ConceptExplanation explain_concept(const Classifier& model, const TranslatorNetwork& h,
                                   bool multi_layer, const Tensor& image,
                                   const ConceptText& concept_text, const VlmEmbedding& txt, int K,
                                   int out_h, int out_w);

// Report plumbing: mean per category, then the mean of those means ("Avg.").
std::map<std::string, double> category_means(
    const std::vector<std::pair<std::string, double>>& samples);
double macro_average(const std::map<std::string, double>& per_category);

std::unique_ptr<VlmEncoder> make_vlm(const RunConfig& cfg,
                                     const std::vector<ConceptText>& concepts);

// CLI entry points. Each validates its inputs, writes only under the
// configured output paths and returns a process exit code.
int cmd_synth(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_explain(const RunConfig& cfg, const std::string& image_path,
                const std::vector<std::string>& concept_filter);
int cmd_evaluate(const RunConfig& cfg);

}  // namespace ccam

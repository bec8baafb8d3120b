#include "ccam/explain.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "ccam/error.hpp"
#include "ccam/resize.hpp"

namespace ccam {

ChannelWeights concept_weights(GradSession& session, Var score, int layer_index) {
    Tensor grad = session.activation_gradient(score, layer_index);
    const int c = grad.dim(0);
    const int hw = grad.dim(1) * grad.dim(2);
    ChannelWeights out;
    out.layer_index = layer_index;
    out.weights.resize(c);
    const double inv_gamma = 1.0 / static_cast<double>(hw);
    for (int k = 0; k < c; ++k) {
        double s = 0.0;
        const double* p = grad.data.data() + static_cast<std::size_t>(k) * hw;
        for (int i = 0; i < hw; ++i) s += p[i];
        out.weights[k] = s * inv_gamma;
    }
    return out;
}

ConceptRegionMap region_map(const LayerActivations& acts, const ChannelWeights& w, int out_h,
                            int out_w) {
    if (acts.layer_index != w.layer_index)
        throw ConfigError("region_map: weights belong to layer " + std::to_string(w.layer_index) +
                          ", activations to layer " + std::to_string(acts.layer_index));
    const int c = acts.maps.dim(0);
    if (static_cast<int>(w.weights.size()) != c)
        throw ShapeError("region_map: channel count mismatch");
    const int h = acts.maps.dim(1), wd = acts.maps.dim(2);
    ConceptRegionMap out;
    out.layer_index = acts.layer_index;
    out.map = Tensor({h, wd});
    for (int k = 0; k < c; ++k) {
        const double wk = w.weights[k];
        if (wk == 0.0) continue;
        const double* p = acts.maps.data.data() + static_cast<std::size_t>(k) * h * wd;
        for (int i = 0; i < h * wd; ++i) out.map.data[i] += wk * p[i];
    }
    for (double& v : out.map.data) v = v > 0.0 ? v : 0.0;
    if (out_h > 0 && out_w > 0) {
        Tensor up = bilinear_resize(out.map, out_h, out_w);
        for (double& v : up.data) v = v > 0.0 ? v : 0.0;
        out.upsampled = std::move(up);
    }
    return out;
}

ConceptRegionMap gradcam_map(GradSession& session, int class_index, int out_h, int out_w) {
    const int layer = session.num_layers();
    Var score = session.class_score_var(class_index);
    Tensor grad = session.activation_gradient(score, layer);
    const Tensor maps = session.tape().val(session.activation_var(layer));
    const int c = maps.dim(0), h = maps.dim(1), w = maps.dim(2);
    const double gamma = static_cast<double>(h * w);
    ConceptRegionMap out;
    out.layer_index = layer;
    out.map = Tensor({h, w});
    for (int k = 0; k < c; ++k) {
        double alpha = 0.0;
        const double* g = grad.data.data() + static_cast<std::size_t>(k) * h * w;
        for (int i = 0; i < h * w; ++i) alpha += g[i];
        alpha /= gamma;
        const double* a = maps.data.data() + static_cast<std::size_t>(k) * h * w;
        for (int i = 0; i < h * w; ++i) out.map.data[i] += alpha * a[i];
    }
    for (double& v : out.map.data) v = v > 0.0 ? v : 0.0;
    if (out_h > 0 && out_w > 0) {
        Tensor up = bilinear_resize(out.map, out_h, out_w);
        for (double& v : up.data) v = v > 0.0 ? v : 0.0;
        out.upsampled = std::move(up);
    }
    return out;
}

Var concept_score_var(GradSession& session, const TranslatorNetwork& h, const VlmEmbedding& txt,
                      bool multi_layer) {
    if (txt.modality != Modality::text)
        throw ConfigError("concept_score_var expects a text embedding");
    Tape& tape = session.tape();
    Var z = multi_layer ? session.concat_var() : session.pooled_var(session.num_layers());
    Var out = h.apply_on_tape(tape, z, nullptr);
    Var on = tape.l2_normalize(out);
    Tensor t = Tensor::vec(txt.normalized ? txt.values : normalized(txt.values));
    return tape.dot(on, tape.constant(t));
}

namespace {

std::vector<int> ranked_channels(const std::vector<double>& importance) {
    std::vector<int> idx(importance.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (importance[a] != importance[b]) return importance[a] > importance[b];
        return a < b;  // deterministic tie-break: lower channel first
    });
    return idx;
}

double recompute_concat_score(const MaskedRecompute& rec, const TranslatorNetwork& h,
                              bool multi_layer, const std::vector<double>& txt_normed) {
    const std::vector<double>& z =
        multi_layer ? rec.concat.values : rec.pooled.back().values;
    const std::vector<double> out = h.apply(z);
    return dot(normalized(out), txt_normed);
}

struct CurveSetup {
    std::vector<double> importance;
    double base_score = 0.0;
};

MaskingCurve run_curve(const Classifier& model, const std::vector<LayerActivations>& base,
                       int layer_index, int K, const CurveSetup& setup, CurveTarget target_kind,
                       const std::function<double(const MaskedRecompute&)>& score_of) {
    const int channels = base[layer_index - 1].maps.dim(0);
    if (K < 1 || K > channels)
        throw ConfigError("top-K of " + std::to_string(K) + " invalid for a layer with " +
                          std::to_string(channels) + " channels");
    PooledEmbedding pooled = pool_layer(base[layer_index - 1]);
    double mask_value = 0.0;
    for (double v : pooled.values) mask_value += v;
    mask_value /= static_cast<double>(pooled.values.size());

    const std::vector<int> order = ranked_channels(setup.importance);
    MaskingCurve curve;
    curve.target = target_kind;
    curve.base_score = setup.base_score;
    curve.x.push_back(0.0);
    curve.y.push_back(0.0);
    std::vector<int> masked;
    for (int i = 1; i <= K; ++i) {
        masked.push_back(order[i - 1]);
        MaskedRecompute rec = recompute_masked(model, base, layer_index, masked, mask_value);
        curve.x.push_back(static_cast<double>(i) / K);
        curve.y.push_back(setup.base_score - score_of(rec));
    }
    return curve;
}

}  // namespace

MaskingCurve masking_curve(const Classifier& model, const TranslatorNetwork* h, bool multi_layer,
                           const Tensor& image, const MaskTarget& target, int layer_index, int K) {
    GradSession session(model, image);
    std::vector<LayerActivations> base = session.activations();
    std::vector<PooledEmbedding> pooled = session.pooled();

    if (std::holds_alternative<ConceptTarget>(target)) {
        if (h == nullptr) throw ConfigError("concept masking curve needs a loaded translator");
        const ConceptTarget& ct = std::get<ConceptTarget>(target);
        Var score = concept_score_var(session, *h, ct.text, multi_layer);
        ChannelWeights w = concept_weights(session, score, layer_index);
        CurveSetup setup;
        setup.base_score = session.tape().val(score).data[0];
        setup.importance.resize(w.weights.size());
        for (std::size_t k = 0; k < w.weights.size(); ++k)
            setup.importance[k] = w.weights[k] * pooled[layer_index - 1].values[k];
        const std::vector<double> txt_normed =
            ct.text.normalized ? ct.text.values : normalized(ct.text.values);
        return run_curve(model, base, layer_index, K, setup, CurveTarget::concept_score,
                         [&](const MaskedRecompute& rec) {
                             return recompute_concat_score(rec, *h, multi_layer, txt_normed);
                         });
    }

    const int class_index = std::get<int>(target);
    Var score = session.class_score_var(class_index);
    ChannelWeights w = concept_weights(session, score, layer_index);
    CurveSetup setup;
    setup.base_score = session.prediction().probabilities[class_index];
    setup.importance.resize(w.weights.size());
    for (std::size_t k = 0; k < w.weights.size(); ++k)
        setup.importance[k] = w.weights[k] * pooled[layer_index - 1].values[k];
    return run_curve(model, base, layer_index, K, setup, CurveTarget::class_score,
                     [&](const MaskedRecompute& rec) {
                         return rec.prediction.probabilities[class_index];
                     });
}

double curve_auc(const MaskingCurve& curve) {
    double auc = 0.0;
    for (std::size_t i = 0; i + 1 < curve.x.size(); ++i)
        auc += 0.5 * (curve.y[i] + curve.y[i + 1]) * (curve.x[i + 1] - curve.x[i]);
    return auc;
}

std::vector<std::pair<int, double>> association_scores(const Classifier& model,
                                                       const TranslatorNetwork& h, bool multi_layer,
                                                       const Tensor& image,
                                                       const ConceptText& concept_text,
                                                       const VlmEmbedding& txt, int K) {
    (void)concept_text;
    GradSession session(model, image);
    std::vector<LayerActivations> base = session.activations();
    std::vector<PooledEmbedding> pooled = session.pooled();
    Var score = concept_score_var(session, h, txt, multi_layer);
    const double base_score = session.tape().val(score).data[0];
    const std::vector<double> txt_normed = txt.normalized ? txt.values : normalized(txt.values);

    std::vector<std::pair<int, double>> out;
    for (int layer = 1; layer <= session.num_layers(); ++layer) {
        ChannelWeights w = concept_weights(session, score, layer);
        CurveSetup setup;
        setup.base_score = base_score;
        setup.importance.resize(w.weights.size());
        for (std::size_t k = 0; k < w.weights.size(); ++k)
            setup.importance[k] = w.weights[k] * pooled[layer - 1].values[k];
        const int k_layer = std::min<int>(K, base[layer - 1].maps.dim(0));
        MaskingCurve curve =
            run_curve(model, base, layer, k_layer, setup, CurveTarget::concept_score,
                      [&](const MaskedRecompute& rec) {
                          return recompute_concat_score(rec, h, multi_layer, txt_normed);
                      });
        out.emplace_back(layer, curve_auc(curve));
    }
    return out;
}

ContributionScore concept_contribution(const Classifier& model, const TranslatorNetwork& h,
                                       bool multi_layer, const Tensor& image,
                                       const ConceptText& concept_text, const VlmEmbedding& txt,
                                       int class_index, int layer_index, int K) {
    GradSession session(model, image);
    std::vector<LayerActivations> base = session.activations();
    std::vector<PooledEmbedding> pooled = session.pooled();
    Var score = concept_score_var(session, h, txt, multi_layer);
    ChannelWeights w = concept_weights(session, score, layer_index);

    // channels chosen by the concept, impact measured on the class
    CurveSetup setup;
    setup.base_score = session.prediction().probabilities[class_index];
    setup.importance.resize(w.weights.size());
    for (std::size_t k = 0; k < w.weights.size(); ++k)
        setup.importance[k] = w.weights[k] * pooled[layer_index - 1].values[k];
    const int k_layer = std::min<int>(K, base[layer_index - 1].maps.dim(0));
    MaskingCurve curve = run_curve(model, base, layer_index, k_layer, setup,
                                   CurveTarget::class_score, [&](const MaskedRecompute& rec) {
                                       return rec.prediction.probabilities[class_index];
                                   });
    ContributionScore out;
    out.concept_text = concept_text;
    out.layer_index = layer_index;
    out.value = curve_auc(curve);
    return out;
}

int counterfactual_layer_choice(const std::vector<ConceptRegionMap>& candidates, int patch_grid) {
    if (candidates.empty()) throw ConfigError("no region candidates");
    int best = -1;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (candidates[i].map.dim(0) < patch_grid || candidates[i].map.dim(1) < patch_grid)
            continue;
        if (best < 0 ||
            candidates[i].association_score > candidates[best].association_score)
            best = static_cast<int>(i);
    }
    if (best >= 0) return best;
    best = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i)
        if (candidates[i].association_score > candidates[best].association_score)
            best = static_cast<int>(i);
    return best;
}

CounterfactualResult counterfactual_patch_mask(const Classifier& model, const Tensor& image,
                                               const ConceptRegionMap& region, int patch_grid,
                                               double coverage,
                                               const std::array<double, 3>& fill_color) {
    if (!(coverage >= 0.0 && coverage <= 1.0))
        throw ConfigError("coverage must be within [0,1]");
    if (patch_grid < 1) throw ConfigError("patch_grid must be >= 1");
    if (!region.upsampled.has_value())
        throw ConfigError("counterfactual needs an upsampled region map");
    const Tensor& up = *region.upsampled;
    const int h = image.dim(1), w = image.dim(2);
    if (up.dim(0) != h || up.dim(1) != w)
        throw ShapeError("region map resolution does not match the image");

    const int cells = patch_grid * patch_grid;
    std::vector<double> cell_mean(cells, 0.0);
    for (int cy = 0; cy < patch_grid; ++cy) {
        const int y0 = cy * h / patch_grid;
        const int y1 = (cy + 1) * h / patch_grid;
        for (int cx = 0; cx < patch_grid; ++cx) {
            const int x0 = cx * w / patch_grid;
            const int x1 = (cx + 1) * w / patch_grid;
            double s = 0.0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) s += up.at2(y, x);
            const int area = (y1 - y0) * (x1 - x0);
            cell_mean[cy * patch_grid + cx] = area > 0 ? s / area : 0.0;
        }
    }
    std::vector<int> order(cells);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (cell_mean[a] != cell_mean[b]) return cell_mean[a] > cell_mean[b];
        return a < b;  // row-major tie-break
    });
    const int n_masked = static_cast<int>(std::ceil(coverage * cells - 1e-12));

    CounterfactualResult out;
    out.before = model.forward(image, nullptr);
    out.masked_image = image;
    for (int i = 0; i < n_masked; ++i) {
        const int cell = order[i];
        const int cy = cell / patch_grid, cx = cell % patch_grid;
        const int y0 = cy * h / patch_grid, y1 = (cy + 1) * h / patch_grid;
        const int x0 = cx * w / patch_grid, x1 = (cx + 1) * w / patch_grid;
        for (int c = 0; c < 3; ++c)
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) out.masked_image.at3(c, y, x) = fill_color[c];
    }
    out.after = model.forward(out.masked_image, nullptr);
    return out;
}

}  // namespace ccam

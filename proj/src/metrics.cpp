#include "ccam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ccam/error.hpp"

namespace ccam {

std::vector<double> default_threshold_grid() {
    std::vector<double> g(100);
    for (int i = 0; i < 100; ++i) g[i] = i + 1.0;
    return g;
}

namespace {

void check_pair(const Tensor& region, const BinaryMask& mask) {
    if (region.ndim() != 2) throw ShapeError("region map must be (H,W)");
    if (region.dim(0) != mask.h || region.dim(1) != mask.w)
        throw ShapeError("region " + region.shape_str() + " vs mask (" + std::to_string(mask.h) +
                         "," + std::to_string(mask.w) + ")");
}

int top_count(double n_percent, int pixels) {
    return static_cast<int>(std::ceil(n_percent * pixels / 100.0 - 1e-9));
}

// pixel order: value descending, row-major index ascending on ties
std::vector<int> pixel_order(const Tensor& region) {
    std::vector<int> idx(region.numel());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (region.data[a] != region.data[b]) return region.data[a] > region.data[b];
        return a < b;
    });
    return idx;
}

}  // namespace

double iou_at_threshold(const Tensor& region, const BinaryMask& mask, double n_percent) {
    check_pair(region, mask);
    if (!(n_percent > 0.0 && n_percent <= 100.0))
        throw ConfigError("threshold percent must be in (0,100]");
    const int mask_count = mask.count();
    if (mask_count == 0) throw MetricUndefinedError("mask has no positive pixels");
    const int pixels = static_cast<int>(region.numel());
    const int k = top_count(n_percent, pixels);
    const std::vector<int> order = pixel_order(region);
    int inter = 0;
    for (int i = 0; i < k; ++i) inter += mask.data[order[i]] ? 1 : 0;
    const int uni = k + mask_count - inter;
    return static_cast<double>(inter) / uni;
}

ThresholdCurve threshold_curve(const Tensor& region, const BinaryMask& mask,
                               const std::vector<double>& grid) {
    check_pair(region, mask);
    if (grid.empty()) throw ConfigError("threshold grid is empty");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!(grid[i] > 0.0 && grid[i] <= 100.0))
            throw ConfigError("threshold grid values must be in (0,100]");
        if (i > 0 && grid[i] <= grid[i - 1])
            throw ConfigError("threshold grid must be strictly increasing");
    }
    const int mask_count = mask.count();
    if (mask_count == 0) throw MetricUndefinedError("mask has no positive pixels");

    const int pixels = static_cast<int>(region.numel());
    const std::vector<int> order = pixel_order(region);
    std::vector<int> prefix_inter(pixels + 1, 0);
    for (int i = 0; i < pixels; ++i)
        prefix_inter[i + 1] = prefix_inter[i] + (mask.data[order[i]] ? 1 : 0);

    ThresholdCurve out;
    out.thresholds = grid;
    out.ious.reserve(grid.size());
    for (double n : grid) {
        const int k = top_count(n, pixels);
        const int inter = prefix_inter[k];
        out.ious.push_back(static_cast<double>(inter) / (k + mask_count - inter));
    }
    // constant extension down to fraction 0, trapezoids between grid points
    double auc = out.ious[0] * (grid[0] / 100.0);
    for (std::size_t i = 1; i < grid.size(); ++i)
        auc += 0.5 * (out.ious[i - 1] + out.ious[i]) * (grid[i] - grid[i - 1]) / 100.0;
    out.auc = auc;
    return out;
}

std::pair<double, double> reference_aucs(double mask_fraction, const std::vector<double>& grid) {
    if (!(mask_fraction > 0.0 && mask_fraction <= 1.0))
        throw MetricUndefinedError("mask fraction must be in (0,1]");
    if (grid.empty()) throw ConfigError("threshold grid is empty");
    const double m = mask_fraction;
    const double auc_high = m / 2.0 - m * std::log(m);
    auto rand_iou = [m](double a) { return a * m / (a + m - a * m); };
    double auc_low = rand_iou(grid[0] / 100.0) * (grid[0] / 100.0);
    for (std::size_t i = 1; i < grid.size(); ++i)
        auc_low += 0.5 * (rand_iou(grid[i - 1] / 100.0) + rand_iou(grid[i] / 100.0)) *
                   (grid[i] - grid[i - 1]) / 100.0;
    return {auc_high, auc_low};
}

double nra(double auc, double auc_high, double auc_low) {
    if (!(auc_high > auc_low)) throw MetricUndefinedError("auc_high must exceed auc_low");
    return (auc - auc_low) / (auc_high - auc_low);
}

double epg(const Tensor& region, const BinaryMask& mask) {
    check_pair(region, mask);
    if (mask.count() == 0) throw MetricUndefinedError("mask has no positive pixels");
    double inside = 0.0, total = 0.0;
    for (std::int64_t i = 0; i < region.numel(); ++i) {
        const double v = region.data[i];
        if (v < 0.0) throw ConfigError("epg expects a nonnegative map");
        total += v;
        if (mask.data[i]) inside += v;
    }
    if (total == 0.0) throw MetricUndefinedError("region map is all zero");
    return inside / total;
}

double hit_rate(const std::vector<RegionEvalResult>& results) {
    if (results.empty()) throw ConfigError("hit_rate over an empty result list");
    int hits = 0;
    for (const auto& r : results) hits += r.nra > 0.5 ? 1 : 0;
    return static_cast<double>(hits) / results.size();
}

RegionEvalResult evaluate_region(const Tensor& region, const BinaryMask& mask,
                                 const std::vector<double>& grid) {
    RegionEvalResult out;
    out.epg = epg(region, mask);  // also rejects all-zero maps and empty masks
    ThresholdCurve curve = threshold_curve(region, mask, grid);
    out.auc = curve.auc;
    auto [high, low] = reference_aucs(mask.fraction(), grid);
    out.auc_high = high;
    out.auc_low = low;
    out.nra = nra(out.auc, high, low);
    out.hit = out.nra > 0.5;
    return out;
}

EvalMode eval_mode_from_string(const std::string& s) {
    if (s == "best_nra_of_top_k") return EvalMode::best_nra_of_top_k;
    if (s == "top1_by_association") return EvalMode::top1_by_association;
    throw ConfigError("unknown evaluation mode '" + s + "'");
}

std::string eval_mode_to_string(EvalMode m) {
    return m == EvalMode::best_nra_of_top_k ? "best_nra_of_top_k" : "top1_by_association";
}

RegionEvalResult evaluate_candidates(const std::vector<ConceptRegionMap>& candidates,
                                     const BinaryMask& mask, EvalMode mode, int k,
                                     const std::vector<double>& grid, int* chosen_layer) {
    if (candidates.empty()) throw ConfigError("no region candidates");
    if (k < 1) throw ConfigError("candidate k must be >= 1");
    std::vector<int> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (candidates[a].association_score != candidates[b].association_score)
            return candidates[a].association_score > candidates[b].association_score;
        return candidates[a].layer_index < candidates[b].layer_index;
    });

    auto region_of = [&](const ConceptRegionMap& c) -> const Tensor& {
        return c.upsampled.has_value() ? *c.upsampled : c.map;
    };

    if (mode == EvalMode::top1_by_association) {
        const ConceptRegionMap& c = candidates[order[0]];
        RegionEvalResult r = evaluate_region(region_of(c), mask, grid);
        if (chosen_layer) *chosen_layer = c.layer_index;
        return r;
    }

    const int take = std::min<int>(k, static_cast<int>(order.size()));
    bool found = false;
    RegionEvalResult best{};
    int best_layer = 0;
    for (int i = 0; i < take; ++i) {
        const ConceptRegionMap& c = candidates[order[i]];
        RegionEvalResult r;
        try {
            r = evaluate_region(region_of(c), mask, grid);
        } catch (const MetricUndefinedError&) {
            continue;  // degenerate candidate; others may still work
        }
        if (!found || r.nra > best.nra) {
            best = r;
            best_layer = c.layer_index;
            found = true;
        }
    }
    if (!found) throw MetricUndefinedError("every candidate region map is degenerate");
    if (chosen_layer) *chosen_layer = best_layer;
    return best;
}

}  // namespace ccam

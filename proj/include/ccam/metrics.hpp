#pragma once

#include <cstdint>
#include <vector>

#include "ccam/explain.hpp"
#include "ccam/tensor.hpp"

namespace ccam {

struct BinaryMask {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> data;  // 0/1

    BinaryMask() = default;
    BinaryMask(int height, int width) : h(height), w(width), data(height * width, 0) {}
    std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * w + x]; }
    std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * w + x]; }
    int count() const {
        int c = 0;
        for (auto v : data) c += v ? 1 : 0;
        return c;
    }
    double fraction() const { return static_cast<double>(count()) / (h * w); }
};

// Relationship between the top-n% threshold on map values and segmentation
// IoU; auc integrates IoU over the threshold fraction in [0,1] (trapezoids
// between grid points, constant extension from the first point down to 0).
struct ThresholdCurve {
    std::vector<double> thresholds;  // percents, strictly increasing in (0,100]
    std::vector<double> ious;
    double auc = 0.0;
};

struct RegionEvalResult {
    double epg = 0.0;
    double auc = 0.0;
    double auc_high = 0.0;
    double auc_low = 0.0;
    double nra = 0.0;
    bool hit = false;  // nra > 0.5
};

std::vector<double> default_threshold_grid();  // 1..100 step 1

// IoU between the mask and the ceil(n% * pixels) highest-valued pixels of the
// region map (value ties broken in row-major order).
double iou_at_threshold(const Tensor& region, const BinaryMask& mask, double n_percent);

ThresholdCurve threshold_curve(const Tensor& region, const BinaryMask& mask,
                               const std::vector<double>& grid);

// Ideal and random reference AUCs for a mask covering fraction m of the
// image. The ideal bound is the closed form m/2 - m*ln(m); the random curve
// a*m/(a+m-a*m) is integrated on the same grid as threshold_curve.
std::pair<double, double> reference_aucs(double mask_fraction, const std::vector<double>& grid);

double nra(double auc, double auc_high, double auc_low);

// Fraction of the map's total mass inside the mask.
double epg(const Tensor& region, const BinaryMask& mask);

double hit_rate(const std::vector<RegionEvalResult>& results);

RegionEvalResult evaluate_region(const Tensor& region, const BinaryMask& mask,
                                 const std::vector<double>& grid);

enum class EvalMode { best_nra_of_top_k, top1_by_association };

EvalMode eval_mode_from_string(const std::string& s);
std::string eval_mode_to_string(EvalMode m);

// Candidate selection over per-layer region maps carrying association
// scores. best_nra_of_top_k evaluates the k highest-association candidates
// and keeps the best NRA; top1_by_association evaluates only the argmax.
RegionEvalResult evaluate_candidates(const std::vector<ConceptRegionMap>& candidates,
                                     const BinaryMask& mask, EvalMode mode, int k,
                                     const std::vector<double>& grid, int* chosen_layer = nullptr);

}  // namespace ccam

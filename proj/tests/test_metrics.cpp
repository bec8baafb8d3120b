#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "ccam/error.hpp"
#include "ccam/metrics.hpp"
#include "ccam/rng.hpp"

using namespace ccam;

namespace {

BinaryMask random_mask(int h, int w, int positives, Rng& rng) {
    BinaryMask m(h, w);
    std::vector<int> idx(h * w);
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    for (int i = 0; i < positives; ++i) m.data[idx[i]] = 1;
    return m;
}

Tensor indicator_map(const BinaryMask& m) {
    Tensor t({m.h, m.w});
    for (std::size_t i = 0; i < m.data.size(); ++i) t.data[i] = m.data[i] ? 1.0 : 0.0;
    return t;
}

Tensor random_map(int h, int w, Rng& rng) {
    Tensor t({h, w});
    for (double& v : t.data) v = rng.uniform();
    return t;
}

}  // namespace

TEST_CASE("iou_at_threshold: perfect overlap, disjoint, hand-evaluated 2x2") {
    Rng rng(1);
    BinaryMask mask = random_mask(8, 8, 16, rng);
    Tensor ideal = indicator_map(mask);
    CHECK(iou_at_threshold(ideal, mask, 25.0) == doctest::Approx(1.0));

    // disjoint: region top half, mask bottom half
    BinaryMask bottom(4, 4);
    for (int x = 0; x < 4; ++x) bottom.at(3, x) = 1;
    Tensor top({4, 4});
    for (int x = 0; x < 4; ++x) top.at2(0, x) = 1.0;
    CHECK(iou_at_threshold(top, bottom, 25.0) == doctest::Approx(0.0));

    // 2x2, values 4,3,2,1 row-major, mask = top-left only, n=50
    Tensor r({2, 2});
    r.data = {4, 3, 2, 1};
    BinaryMask m(2, 2);
    m.at(0, 0) = 1;
    CHECK(iou_at_threshold(r, m, 50.0) == doctest::Approx(0.5));
}

TEST_CASE("iou_at_threshold errors: empty mask, bad percent, shape") {
    Tensor r({2, 2});
    r.data = {1, 2, 3, 4};
    BinaryMask empty(2, 2);
    CHECK_THROWS_AS(iou_at_threshold(r, empty, 50.0), MetricUndefinedError);
    BinaryMask m(2, 2);
    m.at(0, 0) = 1;
    CHECK_THROWS_AS(iou_at_threshold(r, m, 0.0), ConfigError);
    CHECK_THROWS_AS(iou_at_threshold(r, m, 101.0), ConfigError);
    BinaryMask wrong(3, 2);
    wrong.at(0, 0) = 1;
    CHECK_THROWS_AS(iou_at_threshold(r, wrong, 50.0), ShapeError);
}

TEST_CASE("ideal map threshold curve approaches the closed-form upper bound") {
    Rng rng(2);
    const std::vector<double> grid = default_threshold_grid();
    for (int trial = 0; trial < 5; ++trial) {
        const int positives = 100 + static_cast<int>(rng.below(1800));
        BinaryMask mask = random_mask(64, 64, positives, rng);
        Tensor ideal = indicator_map(mask);
        ThresholdCurve curve = threshold_curve(ideal, mask, grid);
        auto [high, low] = reference_aucs(mask.fraction(), grid);
        CHECK(curve.auc == doctest::Approx(high).epsilon(0.01));
        CHECK(curve.auc <= high + 0.01);
        CHECK(low < high);
    }
}

TEST_CASE("constant map with a row-major-aligned mask behaves ideally") {
    // 4x4 constant map, mask = first row; row-major tie-break selects it first
    Tensor flat({4, 4}, 1.0);
    BinaryMask mask(4, 4);
    for (int x = 0; x < 4; ++x) mask.at(0, x) = 1;
    const std::vector<double> grid = default_threshold_grid();
    ThresholdCurve curve = threshold_curve(flat, mask, grid);
    // exhaustive evaluation of all 16 prefix sizes
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const int k = static_cast<int>(std::ceil(grid[i] * 16 / 100.0 - 1e-9));
        const int inter = std::min(k, 4);
        const double expect = static_cast<double>(inter) / (k + 4 - inter);
        CHECK(curve.ious[i] == doctest::Approx(expect));
    }
    auto [high, low] = reference_aucs(0.25, grid);
    (void)low;
    CHECK(curve.auc == doctest::Approx(high).epsilon(0.03));
}

TEST_CASE("single-point grid: auc equals the full-image IoU, which is the mask fraction") {
    Rng rng(3);
    BinaryMask mask = random_mask(16, 16, 64, rng);
    Tensor region = random_map(16, 16, rng);
    ThresholdCurve curve = threshold_curve(region, mask, {100.0});
    CHECK(curve.auc == doctest::Approx(0.25));
    CHECK(curve.ious[0] == doctest::Approx(0.25));
}

TEST_CASE("reference_aucs closed forms") {
    const std::vector<double> grid = default_threshold_grid();
    auto [high1, low1] = reference_aucs(1.0, grid);
    CHECK(high1 == doctest::Approx(0.5).epsilon(1e-12));
    // m=1: ideal and random curves coincide (IoU = a), so NRA degenerates
    CHECK(low1 == doctest::Approx(0.5).epsilon(1e-3));
    CHECK_THROWS_AS(nra(0.5, high1, low1), MetricUndefinedError);

    auto [high_half, low_half] = reference_aucs(0.5, grid);
    CHECK(high_half == doctest::Approx(0.25 + 0.5 * std::log(2.0)).epsilon(1e-9));
    CHECK(low_half < high_half);

    CHECK_THROWS_AS(reference_aucs(0.0, grid), MetricUndefinedError);
    CHECK_THROWS_AS(reference_aucs(1.5, grid), MetricUndefinedError);
}

TEST_CASE("random IoU at a=m=0.5 is one third") {
    // spot value of the ratio-of-expectations formula
    const double a = 0.5, m = 0.5;
    CHECK(a * m / (a + m - a * m) == doctest::Approx(1.0 / 3));
}

TEST_CASE("random-curve formula tracks a Monte Carlo oracle pointwise") {
    Rng rng(4);
    const int h = 32, w = 32;
    BinaryMask mask = random_mask(h, w, 256, rng);  // m = 0.25
    const double m = 0.25;
    std::vector<int> idx(h * w);
    std::iota(idx.begin(), idx.end(), 0);
    for (double n : {5.0, 10.0, 25.0, 50.0, 75.0, 100.0}) {
        const int k = static_cast<int>(std::ceil(n * h * w / 100.0 - 1e-9));
        double mean = 0.0;
        const int draws = 1000;
        for (int d = 0; d < draws; ++d) {
            rng.shuffle(idx);
            int inter = 0;
            for (int i = 0; i < k; ++i) inter += mask.data[idx[i]] ? 1 : 0;
            mean += static_cast<double>(inter) / (k + mask.count() - inter);
        }
        mean /= draws;
        const double a = n / 100.0;
        const double formula = a * m / (a + m - a * m);
        CHECK(std::fabs(mean - formula) < 0.02);
    }
}

TEST_CASE("nra: endpoints, midpoint, and the degenerate guard") {
    CHECK(nra(0.8, 0.8, 0.2) == doctest::Approx(1.0));
    CHECK(nra(0.2, 0.8, 0.2) == doctest::Approx(0.0));
    CHECK(nra(0.5, 0.8, 0.2) == doctest::Approx(0.5));
    CHECK_THROWS_AS(nra(0.5, 0.2, 0.2), MetricUndefinedError);
    CHECK_THROWS_AS(nra(0.5, 0.1, 0.2), MetricUndefinedError);
}

TEST_CASE("epg: containment, proportionality, arithmetic, errors") {
    BinaryMask mask(2, 2);
    mask.at(0, 0) = 1;

    Tensor inside({2, 2});
    inside.at2(0, 0) = 5.0;
    CHECK(epg(inside, mask) == doctest::Approx(1.0));

    Tensor uniform({2, 2}, 1.0);
    CHECK(epg(uniform, mask) == doctest::Approx(0.25));

    Tensor split({2, 2});
    split.at2(0, 0) = 3.0;
    split.at2(1, 1) = 1.0;
    CHECK(epg(split, mask) == doctest::Approx(0.75));

    Tensor zero({2, 2});
    CHECK_THROWS_AS(epg(zero, mask), MetricUndefinedError);
    BinaryMask empty(2, 2);
    CHECK_THROWS_AS(epg(uniform, empty), MetricUndefinedError);
    Tensor negative({2, 2}, -1.0);
    CHECK_THROWS_AS(epg(negative, mask), ConfigError);
}

TEST_CASE("IoU components are monotone in the threshold") {
    Rng rng(5);
    Tensor region = random_map(16, 16, rng);
    BinaryMask mask = random_mask(16, 16, 40, rng);
    const std::vector<double> grid = default_threshold_grid();
    ThresholdCurve curve = threshold_curve(region, mask, grid);
    // reconstruct intersection/union from IoU and check both grow with n
    double prev_inter = -1.0, prev_union = -1.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const int k = static_cast<int>(std::ceil(grid[i] * 256 / 100.0 - 1e-9));
        const double iou = curve.ious[i];
        const double inter = iou * (k + 40) / (1.0 + iou);
        const double uni = k + 40 - inter;
        CHECK(inter >= prev_inter - 1e-9);
        CHECK(uni >= prev_union - 1e-9);
        prev_inter = inter;
        prev_union = uni;
    }
}

TEST_CASE("scale invariance of IoU selection and EPG") {
    Rng rng(6);
    Tensor region = random_map(8, 8, rng);
    BinaryMask mask = random_mask(8, 8, 12, rng);
    Tensor scaled = region;
    for (double& v : scaled.data) v *= 123.5;
    for (double n : {10.0, 40.0, 90.0})
        CHECK(iou_at_threshold(region, mask, n) == iou_at_threshold(scaled, mask, n));
    CHECK(std::fabs(epg(region, mask) - epg(scaled, mask)) < 1e-9);
}

TEST_CASE("any region map stays below the ideal bound") {
    Rng rng(7);
    const std::vector<double> grid = default_threshold_grid();
    for (int trial = 0; trial < 20; ++trial) {
        Tensor region = random_map(32, 32, rng);
        BinaryMask mask = random_mask(32, 32, 64 + static_cast<int>(rng.below(512)), rng);
        ThresholdCurve curve = threshold_curve(region, mask, grid);
        auto [high, low] = reference_aucs(mask.fraction(), grid);
        (void)low;
        CHECK(curve.auc <= high + 0.01);
    }
}

TEST_CASE("random maps have near-zero mean NRA") {
    Rng rng(8);
    const std::vector<double> grid = default_threshold_grid();
    BinaryMask mask = random_mask(32, 32, 256, rng);  // fixed mask, fraction 0.25
    auto [high, low] = reference_aucs(0.25, grid);
    double mean = 0.0;
    for (int i = 0; i < 100; ++i) {
        Tensor region = random_map(32, 32, rng);
        ThresholdCurve curve = threshold_curve(region, mask, grid);
        mean += nra(curve.auc, high, low);
    }
    mean /= 100.0;
    CHECK(std::fabs(mean) < 0.05);
}

TEST_CASE("epg stays within [0,1] for arbitrary nonnegative maps") {
    Rng rng(9);
    for (int trial = 0; trial < 25; ++trial) {
        Tensor region = random_map(8, 8, rng);
        BinaryMask mask = random_mask(8, 8, 1 + static_cast<int>(rng.below(63)), rng);
        const double v = epg(region, mask);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("hit_rate: fractions and the strict boundary") {
    auto mk = [](double nra_value) {
        RegionEvalResult r;
        r.nra = nra_value;
        r.hit = nra_value > 0.5;
        return r;
    };
    CHECK(hit_rate({mk(0.6), mk(0.4), mk(0.7)}) == doctest::Approx(2.0 / 3));
    CHECK(hit_rate({mk(0.1), mk(0.2)}) == 0.0);
    CHECK(hit_rate({mk(0.5)}) == 0.0);  // exactly 0.5 is not a hit
    CHECK_THROWS_AS(hit_rate({}), ConfigError);
}

TEST_CASE("evaluate_candidates: both modes and the k=1 coincidence") {
    Rng rng(10);
    BinaryMask mask = random_mask(16, 16, 48, rng);
    const std::vector<double> grid = default_threshold_grid();

    // candidate A: high association, poor region; candidate B: the reverse
    ConceptRegionMap a;
    a.layer_index = 1;
    a.association_score = 0.9;
    a.map = Tensor({16, 16});
    a.upsampled = random_map(16, 16, rng);
    ConceptRegionMap b;
    b.layer_index = 2;
    b.association_score = 0.1;
    b.map = Tensor({16, 16});
    b.upsampled = indicator_map(mask);

    RegionEvalResult top1 =
        evaluate_candidates({a, b}, mask, EvalMode::top1_by_association, 1, grid);
    RegionEvalResult best2 =
        evaluate_candidates({a, b}, mask, EvalMode::best_nra_of_top_k, 2, grid);
    CHECK(best2.nra > top1.nra);
    CHECK(best2.nra == doctest::Approx(1.0).epsilon(0.02));

    int layer = 0;
    RegionEvalResult best1 =
        evaluate_candidates({a, b}, mask, EvalMode::best_nra_of_top_k, 1, grid, &layer);
    CHECK(best1.nra == doctest::Approx(top1.nra));
    CHECK(layer == 1);

    CHECK_THROWS_AS(evaluate_candidates({a, b}, mask, EvalMode::best_nra_of_top_k, 0, grid),
                    ConfigError);
    CHECK_THROWS_AS(evaluate_candidates({}, mask, EvalMode::best_nra_of_top_k, 2, grid),
                    ConfigError);
}

TEST_CASE("evaluate_candidates skips degenerate maps but fails when all are") {
    Rng rng(11);
    BinaryMask mask = random_mask(8, 8, 16, rng);
    const std::vector<double> grid = default_threshold_grid();
    ConceptRegionMap dead;
    dead.layer_index = 1;
    dead.association_score = 0.9;
    dead.map = Tensor({8, 8});
    dead.upsampled = Tensor({8, 8});
    ConceptRegionMap alive = dead;
    alive.layer_index = 2;
    alive.association_score = 0.1;
    alive.upsampled = indicator_map(mask);

    RegionEvalResult r =
        evaluate_candidates({dead, alive}, mask, EvalMode::best_nra_of_top_k, 2, grid);
    CHECK(r.nra > 0.9);
    CHECK_THROWS_AS(evaluate_candidates({dead}, mask, EvalMode::best_nra_of_top_k, 2, grid),
                    MetricUndefinedError);
}

TEST_CASE("four candidates reproduce the best-of-top-4 protocol shape") {
    Rng rng(12);
    BinaryMask mask = random_mask(16, 16, 64, rng);
    const std::vector<double> grid = default_threshold_grid();
    std::vector<ConceptRegionMap> layers(4);
    for (int l = 0; l < 4; ++l) {
        layers[l].layer_index = l + 1;
        layers[l].association_score = 0.1 * (l + 1);
        layers[l].map = Tensor({16, 16});
        layers[l].upsampled = random_map(16, 16, rng);
    }
    layers[1].upsampled = indicator_map(mask);  // the best region hides at rank 3
    int chosen = 0;
    RegionEvalResult r =
        evaluate_candidates(layers, mask, EvalMode::best_nra_of_top_k, 4, grid, &chosen);
    CHECK(chosen == 2);
    CHECK(r.nra == doctest::Approx(1.0).epsilon(0.02));
}

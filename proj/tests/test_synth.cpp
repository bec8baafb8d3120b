#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <set>

#include "ccam/error.hpp"
#include "ccam/synthetic.hpp"

using namespace ccam;
namespace fs = std::filesystem;

namespace {

// reference benchmark shared across the suite
SyntheticDataset& reference() {
    static SyntheticDataset data = generate_dataset(2000, 20240501, ClassRule::shape_kind);
    return data;
}

std::vector<std::string> vocab_of(const SyntheticDataset& data) {
    std::vector<std::string> v;
    for (const auto& c : data.concepts) v.push_back(c.label);
    return v;
}

std::set<std::string> present_concepts(const Scene& scene) {
    std::set<std::string> out;
    for (const auto& [label, mask] : scene.concept_masks) {
        (void)mask;
        out.insert(label);
    }
    return out;
}

}  // namespace

TEST_CASE("generation is deterministic down to every byte") {
    SyntheticDataset a = generate_dataset(20, 99, ClassRule::shape_kind);
    SyntheticDataset b = generate_dataset(20, 99, ClassRule::shape_kind);
    REQUIRE(a.scenes.size() == b.scenes.size());
    for (std::size_t i = 0; i < a.scenes.size(); ++i) {
        CHECK(a.scenes[i].image.data == b.scenes[i].image.data);
        CHECK(a.scenes[i].class_label == b.scenes[i].class_label);
    }
    CHECK(a.train_indices == b.train_indices);
    CHECK(a.test_indices == b.test_indices);
}

TEST_CASE("a single scene has exact, image-consistent masks") {
    SyntheticDataset data = generate_dataset(1, 7, ClassRule::shape_kind);
    REQUIRE(data.scenes.size() == 1);
    const Scene& s = data.scenes[0];
    // each color mask holds exactly the pixels rendered in that palette color
    for (ShapeColor c : {ShapeColor::red, ShapeColor::green, ShapeColor::blue,
                         ShapeColor::yellow}) {
        const std::string label = shape_color_name(c);
        const auto pc = palette_color(c);
        auto it = s.concept_masks.find(label);
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                double d = 0.0;
                for (int ch = 0; ch < 3; ++ch) {
                    const double diff = s.image.at3(ch, y, x) - pc[ch];
                    d += diff * diff;
                }
                const bool near = d < 0.02;  // jitter stays far below palette spacing
                const bool in_mask = it != s.concept_masks.end() && it->second.at(y, x);
                CHECK(near == in_mask);
            }
    }
    // every mask respects the minimum shape area
    for (const auto& [label, mask] : s.concept_masks) {
        (void)label;
        CHECK(mask.count() >= 16);
    }
}

TEST_CASE("images are 8-bit quantized so the PNG round trip is exact") {
    const Scene& s = reference().scenes[0];
    for (double v : s.image.data) {
        const double q = std::lround(v * 255.0) / 255.0;
        CHECK(v == q);
    }
}

TEST_CASE("color-concept mask fractions stay within the pinned band") {
    const SyntheticDataset& data = reference();
    const std::set<std::string> colors{"red", "green", "blue", "yellow"};
    int total = 0, within = 0;
    for (const auto& scene : data.scenes) {
        for (const auto& [label, mask] : scene.concept_masks) {
            if (!colors.count(label)) continue;
            ++total;
            const double f = mask.fraction();
            if (f > 0.01 && f < 0.6) ++within;
        }
    }
    REQUIRE(total > 0);
    CHECK(static_cast<double>(within) / total >= 0.95);
}

TEST_CASE("class labels are near-balanced under the shape rule") {
    const SyntheticDataset& data = reference();
    std::vector<int> counts(3, 0);
    for (const auto& s : data.scenes) counts[s.class_label]++;
    for (int c = 0; c < 3; ++c)
        CHECK(static_cast<double>(counts[c]) / data.scenes.size() > 0.15);
}

TEST_CASE("untrained classifier sits near chance level") {
    const SyntheticDataset& data = reference();
    auto model = build_toy_classifier({6, 12}, 3, 64, 64, 5);
    std::vector<int> eval(data.test_indices.begin(), data.test_indices.end());
    const double acc = classification_accuracy(*model, data.images(), data.labels(), eval, 2);
    CHECK(std::fabs(acc - 1.0 / 3) <= 0.1);
}

TEST_CASE("capture points: one per conv stage, bounds enforced") {
    auto model = build_toy_classifier({4, 8, 16}, 3, 64, 64, 1);
    CHECK(model->num_layers() == 3);
    CHECK_THROWS_AS(build_toy_classifier({4}, 3, 64, 64, 1), ConfigError);
    CHECK_THROWS_AS(build_toy_classifier({4, 8, 16, 32, 64}, 3, 64, 64, 1), ConfigError);
}

TEST_CASE("a short training run learns the color task well above chance") {
    // the shape-kind task at full scale is exercised by the acceptance suite
    SyntheticDataset data = generate_dataset(300, 31, ClassRule::color_biased);
    auto model = build_toy_classifier({6, 12}, 4, 64, 64, 31);
    ClassifierTrainOptions opts;
    opts.max_epochs = 10;
    opts.lr = 0.05;
    opts.batch_size = 16;
    opts.seed = 31;
    opts.target_val_accuracy = 0.9;
    ClassifierTrainReport rep = train_classifier(*model, data.images(), data.labels(),
                                                 data.train_indices, data.val_indices, opts, 2);
    CHECK(rep.epochs_run >= 1);
    CHECK(rep.epoch_val_accuracy.back() >= 0.75);
}

TEST_CASE("toy VLM at epsilon=0: embedding is exactly the normalized concept sum") {
    SyntheticDataset data = generate_dataset(30, 44, ClassRule::shape_kind);
    auto vlm = build_toy_vlm(vocab_of(data), 44, 0.0);
    for (const auto& scene : data.scenes) {
        VlmEmbedding img = vlm->embed_image(scene.image);
        std::vector<double> expect(vlm->dim(), 0.0);
        for (const std::string& label : present_concepts(scene)) {
            for (std::size_t i = 0; i < vocab_of(data).size(); ++i)
                if (vocab_of(data)[i] == label)
                    for (int d = 0; d < vlm->dim(); ++d) expect[d] += vlm->text_matrix()[i][d];
        }
        expect = normalized(expect);
        REQUIRE(img.values.size() == expect.size());
        for (std::size_t d = 0; d < expect.size(); ++d)
            CHECK(img.values[d] == doctest::Approx(expect[d]).epsilon(1e-12));
    }
}

TEST_CASE("text rows are orthonormal") {
    SyntheticDataset data = generate_dataset(1, 3, ClassRule::shape_kind);
    auto vlm = build_toy_vlm(vocab_of(data), 3, 0.05);
    const auto& rows = vlm->text_matrix();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(l2_norm(rows[i]) == doctest::Approx(1.0).epsilon(1e-9));
        for (std::size_t j = i + 1; j < rows.size(); ++j)
            CHECK(std::fabs(dot(rows[i], rows[j])) <= 0.1);
    }
    CHECK_THROWS_AS(build_toy_vlm(std::vector<std::string>(65, "x"), 3, 0.0), ConfigError);
}

TEST_CASE("oracle separability: similarity ranking recovers the present set exactly") {
    const SyntheticDataset& data = reference();
    auto vlm = build_toy_vlm(vocab_of(data), data.seed, 0.0);
    int checked = 0;
    for (std::size_t i = 0; i < data.scenes.size(); i += 10) {  // every 10th scene
        const Scene& scene = data.scenes[i];
        VlmEmbedding img = vlm->embed_image(scene.image);
        const std::set<std::string> present = present_concepts(scene);
        double min_present = 1e9, max_absent = -1e9;
        for (const auto& c : data.concepts) {
            const double s = vlm_similarity(img, vlm->embed_text(c));
            if (present.count(c.label))
                min_present = std::min(min_present, s);
            else
                max_absent = std::max(max_absent, s);
        }
        CHECK(min_present > max_absent);
        ++checked;
    }
    CHECK(checked == 200);
}

TEST_CASE("present/absent similarity margin holds at the working noise level") {
    const SyntheticDataset& data = reference();
    auto vlm = build_toy_vlm(vocab_of(data), data.seed, 0.05);
    double min_margin = 1e9;
    for (std::size_t i = 0; i < data.scenes.size(); i += 4) {
        const Scene& scene = data.scenes[i];
        VlmEmbedding img = vlm->embed_image(scene.image);
        const std::set<std::string> present = present_concepts(scene);
        double min_present = 1e9, max_absent = -1e9;
        for (const auto& c : data.concepts) {
            const double s = vlm_similarity(img, vlm->embed_text(c));
            if (present.count(c.label))
                min_present = std::min(min_present, s);
            else
                max_absent = std::max(max_absent, s);
        }
        min_margin = std::min(min_margin, min_present - max_absent);
    }
    CHECK(min_margin >= 0.2);
}

TEST_CASE("dataset write/load round trip") {
    SyntheticDataset data = generate_dataset(12, 55, ClassRule::color_biased);
    const std::string dir = "synth_roundtrip_test";
    fs::remove_all(dir);
    write_dataset(data, dir);
    DiskDataset disk = load_dataset(dir);
    REQUIRE(disk.images.size() == 12);
    CHECK(disk.class_rule == "color_biased");
    CHECK(disk.class_names == data.class_names);
    CHECK(disk.train_indices == data.train_indices);
    CHECK(disk.test_indices == data.test_indices);
    for (int i = 0; i < 12; ++i) {
        CHECK(disk.images[i].data == data.scenes[i].image.data);
        CHECK(disk.labels[i] == data.scenes[i].class_label);
        const auto& masks = disk.masks.at(disk.ids[i]);
        CHECK(masks.size() == data.scenes[i].concept_masks.size());
        for (const auto& [label, mask] : data.scenes[i].concept_masks)
            CHECK(masks.at(label).data == mask.data);
    }
    fs::remove_all(dir);
}

TEST_CASE("writing under a missing parent fails without partial output") {
    SyntheticDataset data = generate_dataset(2, 1, ClassRule::shape_kind);
    CHECK_THROWS_AS(write_dataset(data, "no_such_parent/data"), IoError);
    CHECK_FALSE(fs::exists("no_such_parent"));
}

TEST_CASE("color-biased rule labels by the largest shape's color") {
    SyntheticDataset data = generate_dataset(40, 13, ClassRule::color_biased);
    CHECK(data.class_names == std::vector<std::string>{"red", "green", "blue", "yellow"});
    for (const auto& scene : data.scenes) {
        // the class color must be present in the scene
        const std::string color = data.class_names[scene.class_label];
        CHECK(scene.concept_masks.count(color) == 1);
    }
}

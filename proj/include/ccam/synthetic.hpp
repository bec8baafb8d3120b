#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ccam/metrics.hpp"
#include "ccam/model.hpp"
#include "ccam/rng.hpp"
#include "ccam/tensor.hpp"
#include "ccam/vlm.hpp"

namespace ccam {

enum class ShapeKind { circle, square, triangle };
enum class ShapeColor { red, green, blue, yellow };

std::string shape_kind_name(ShapeKind k);
std::string shape_color_name(ShapeColor c);

struct ShapeSpec {
    ShapeKind kind;
    ShapeColor color;
    double cx, cy;      // center, pixel units
    double radius;      // half-extent of the bounding box
};

struct SceneSpec {
    int height = 64;
    int width = 64;
    std::array<double, 3> background{};
    std::vector<ShapeSpec> shapes;
    std::uint64_t seed = 0;
};

struct Scene {
    SceneSpec spec;
    Tensor image;  // (3,H,W), 8-bit quantized so PNG round trips exactly
    std::map<std::string, BinaryMask> concept_masks;  // present concepts only
    int class_label = 0;
};

enum class ClassRule { shape_kind, color_biased };

ClassRule class_rule_from_string(const std::string& s);
std::string class_rule_to_string(ClassRule r);

struct SyntheticDataset {
    std::vector<Scene> scenes;
    std::vector<int> train_indices, val_indices, test_indices;
    std::vector<std::string> class_names;
    std::vector<ConceptText> concepts;  // 4 colors (color) + 3 kinds (object)
    ClassRule rule = ClassRule::shape_kind;
    std::uint64_t seed = 0;

    std::vector<Tensor> images() const;
    std::vector<int> labels() const;
};

// Seed-deterministic scenes of non-overlapping colored shapes with exact
// masks and an 80/10/10 split. The largest shape's area dominates every
// other shape so the class label is unambiguous.
SyntheticDataset generate_dataset(int count, std::uint64_t seed, ClassRule rule);

Scene render_scene(const SceneSpec& spec, ClassRule rule);

std::array<double, 3> palette_color(ShapeColor c);
std::array<double, 3> dataset_mean_color(const SyntheticDataset& data);

// Constructed encoder pair: text rows form an orthonormal family; the image
// embedding is the normalized sum of the embeddings of the concepts present
// (detected from pixels), plus content-seeded noise of magnitude epsilon.
class ToyVlm : public VlmEncoder {
public:
    ToyVlm(std::vector<std::string> vocabulary, std::uint64_t seed, double epsilon, int dim = 64);

    int dim() const override { return dim_; }
    std::string id() const override;
    VlmEmbedding embed_text(const ConceptText& concept_text) const override;
    VlmEmbedding embed_image(const Tensor& image) const override;

    std::vector<std::string> detect_concepts(const Tensor& image) const;
    const std::vector<std::vector<double>>& text_matrix() const { return rows_; }

private:
    std::vector<std::string> vocab_;
    std::vector<std::vector<double>> rows_;
    std::uint64_t seed_;
    double epsilon_;
    int dim_;
};

std::unique_ptr<ToyVlm> build_toy_vlm(const std::vector<std::string>& vocabulary,
                                      std::uint64_t seed, double epsilon, int dim = 64);

// 2-4 conv stages with capture points after each stage.
std::unique_ptr<ConvBackbone> build_toy_classifier(const std::vector<int>& stage_channels,
                                                   int num_classes, int height, int width,
                                                   std::uint64_t seed);

struct ClassifierTrainOptions {
    int max_epochs = 10;
    double lr = 0.05;
    double momentum = 0.9;
    int batch_size = 32;
    std::uint64_t seed = 0;
    double target_val_accuracy = 0.97;  // stop early once reached
};

struct ClassifierTrainReport {
    std::vector<double> epoch_val_accuracy;
    int epochs_run = 0;
};

ClassifierTrainReport train_classifier(Classifier& model, const std::vector<Tensor>& images,
                                       const std::vector<int>& labels,
                                       const std::vector<int>& train_split,
                                       const std::vector<int>& val_split,
                                       const ClassifierTrainOptions& opts, int jobs = 1);

double classification_accuracy(const Classifier& model, const std::vector<Tensor>& images,
                               const std::vector<int>& labels, const std::vector<int>& indices,
                               int jobs = 1);

// Dataset directory layout: images/<id>.png, masks/<concept>/<id>.png,
// labels.json, concepts.json, manifest.json.
void write_dataset(const SyntheticDataset& data, const std::string& dir);

struct DiskDataset {
    std::vector<std::string> ids;
    std::vector<Tensor> images;
    std::vector<int> labels;
    std::vector<std::string> class_names;
    std::vector<ConceptText> concepts;
    std::vector<int> train_indices, val_indices, test_indices;
    std::map<std::string, std::map<std::string, BinaryMask>> masks;  // id -> concept -> mask
    std::uint64_t seed = 0;
    std::string class_rule;
};

DiskDataset load_dataset(const std::string& dir);

}  // namespace ccam

#include "ccam/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "ccam/error.hpp"
#include "ccam/parallel.hpp"
#include "ccam/png_io.hpp"

namespace fs = std::filesystem;

namespace ccam {

using nlohmann::json;

std::string shape_kind_name(ShapeKind k) {
    switch (k) {
        case ShapeKind::circle: return "circle";
        case ShapeKind::square: return "square";
        case ShapeKind::triangle: return "triangle";
    }
    return "circle";
}

std::string shape_color_name(ShapeColor c) {
    switch (c) {
        case ShapeColor::red: return "red";
        case ShapeColor::green: return "green";
        case ShapeColor::blue: return "blue";
        case ShapeColor::yellow: return "yellow";
    }
    return "red";
}

ClassRule class_rule_from_string(const std::string& s) {
    if (s == "shape_kind") return ClassRule::shape_kind;
    if (s == "color_biased") return ClassRule::color_biased;
    throw ConfigError("unknown class rule '" + s + "'");
}

std::string class_rule_to_string(ClassRule r) {
    return r == ClassRule::shape_kind ? "shape_kind" : "color_biased";
}

std::array<double, 3> palette_color(ShapeColor c) {
    switch (c) {
        case ShapeColor::red: return {0.86, 0.20, 0.20};
        case ShapeColor::green: return {0.24, 0.78, 0.27};
        case ShapeColor::blue: return {0.22, 0.37, 0.90};
        case ShapeColor::yellow: return {0.92, 0.86, 0.24};
    }
    return {0.0, 0.0, 0.0};
}

namespace {

constexpr double kMinRadius = 5.0;

double shape_area_factor(ShapeKind k) {
    switch (k) {
        case ShapeKind::circle: return M_PI;       // pi * r^2
        case ShapeKind::square: return 4.0;        // (2r)^2
        case ShapeKind::triangle: return 2.0;      // base 2r, height 2r
    }
    return 1.0;
}

bool inside_shape(const ShapeSpec& s, double px, double py) {
    const double dx = px - s.cx;
    const double dy = py - s.cy;
    switch (s.kind) {
        case ShapeKind::circle: return dx * dx + dy * dy <= s.radius * s.radius;
        case ShapeKind::square:
            return std::fabs(dx) <= s.radius && std::fabs(dy) <= s.radius;
        case ShapeKind::triangle: {
            // apex (cx, cy-r), base corners (cx +- r, cy + r)
            if (dy < -s.radius || dy > s.radius) return false;
            const double half_width = (dy + s.radius) * 0.5;  // grows linearly toward the base
            return std::fabs(dx) <= half_width;
        }
    }
    return false;
}

double quantize8(double v) {
    double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return std::lround(c * 255.0) / 255.0;
}

}  // namespace

Scene render_scene(const SceneSpec& spec, ClassRule rule) {
    const int h = spec.height, w = spec.width;
    Scene scene;
    scene.spec = spec;
    scene.image = Tensor({3, h, w});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) scene.image.at3(c, y, x) = spec.background[c];

    Rng jitter_rng = Rng(spec.seed).fork(17);
    std::vector<BinaryMask> shape_masks;
    double best_area = -1.0;
    std::size_t largest = 0;
    for (std::size_t si = 0; si < spec.shapes.size(); ++si) {
        const ShapeSpec& s = spec.shapes[si];
        std::array<double, 3> color = palette_color(s.color);
        for (double& v : color) v += jitter_rng.uniform(-0.04, 0.04);
        BinaryMask mask(h, w);
        int area = 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (!inside_shape(s, x + 0.5, y + 0.5)) continue;
                mask.at(y, x) = 1;
                ++area;
                for (int c = 0; c < 3; ++c) scene.image.at3(c, y, x) = color[c];
            }
        if (area < 16)
            throw ConfigError("degenerate shape (area " + std::to_string(area) + " px)");
        shape_masks.push_back(std::move(mask));
        const double geo_area = shape_area_factor(s.kind) * s.radius * s.radius;
        if (geo_area > best_area) {
            best_area = geo_area;
            largest = si;
        }
    }
    for (double& v : scene.image.data) v = quantize8(v);

    // concept masks are unions of the member shape masks
    for (std::size_t si = 0; si < spec.shapes.size(); ++si) {
        for (const std::string& label :
             {shape_color_name(spec.shapes[si].color), shape_kind_name(spec.shapes[si].kind)}) {
            auto [it, fresh] = scene.concept_masks.try_emplace(label, BinaryMask(h, w));
            BinaryMask& m = it->second;
            for (std::size_t i = 0; i < m.data.size(); ++i)
                m.data[i] = m.data[i] || shape_masks[si].data[i];
            (void)fresh;
        }
    }

    if (rule == ClassRule::shape_kind)
        scene.class_label = static_cast<int>(spec.shapes[largest].kind);
    else
        scene.class_label = static_cast<int>(spec.shapes[largest].color);
    return scene;
}

SyntheticDataset generate_dataset(int count, std::uint64_t seed, ClassRule rule) {
    if (count < 1) throw ConfigError("dataset count must be >= 1");
    SyntheticDataset data;
    data.rule = rule;
    data.seed = seed;
    data.class_names = rule == ClassRule::shape_kind
                           ? std::vector<std::string>{"circle", "square", "triangle"}
                           : std::vector<std::string>{"red", "green", "blue", "yellow"};
    for (ShapeColor c :
         {ShapeColor::red, ShapeColor::green, ShapeColor::blue, ShapeColor::yellow})
        data.concepts.push_back(apply_template(shape_color_name(c), ConceptCategory::color));
    for (ShapeKind k : {ShapeKind::circle, ShapeKind::square, ShapeKind::triangle})
        data.concepts.push_back(apply_template(shape_kind_name(k), ConceptCategory::object));

    Rng root(seed);
    data.scenes.resize(count);
    for (int i = 0; i < count; ++i) {
        Rng rng = root.fork(static_cast<std::uint64_t>(i) + 1);
        SceneSpec spec;
        spec.seed = seed ^ (static_cast<std::uint64_t>(i) * 0x9E3779B97F4A7C15ull);
        for (int c = 0; c < 3; ++c) spec.background[c] = 0.16 + rng.uniform(-0.03, 0.03);

        const int n_shapes = rng.range(1, 3);
        std::vector<ShapeColor> colors{ShapeColor::red, ShapeColor::green, ShapeColor::blue,
                                       ShapeColor::yellow};
        rng.shuffle(colors);

        // main shape first; distractor areas stay well below it
        const ShapeKind main_kind = static_cast<ShapeKind>(rng.range(0, 2));
        const double main_radius = rng.uniform(9.0, 14.0);
        const double main_area = shape_area_factor(main_kind) * main_radius * main_radius;
        std::vector<ShapeSpec> placed;
        auto try_place = [&](ShapeKind kind, double radius) {
            const double outer = radius * 1.5;  // clearance covers rotated corners
            for (int attempt = 0; attempt < 40; ++attempt) {
                ShapeSpec s;
                s.kind = kind;
                s.radius = radius;
                s.cx = rng.uniform(radius + 1.0, spec.width - radius - 1.0);
                s.cy = rng.uniform(radius + 1.0, spec.height - radius - 1.0);
                bool ok = true;
                for (const ShapeSpec& o : placed) {
                    const double dx = s.cx - o.cx, dy = s.cy - o.cy;
                    const double min_dist = outer + o.radius * 1.5 + 2.0;
                    if (dx * dx + dy * dy < min_dist * min_dist) {
                        ok = false;
                        break;
                    }
                }
                if (ok) {
                    placed.push_back(s);
                    return true;
                }
            }
            return false;
        };
        try_place(main_kind, main_radius);
        for (int si = 1; si < n_shapes; ++si) {
            const ShapeKind kind = static_cast<ShapeKind>(rng.range(0, 2));
            const double max_area = main_area / 1.35;
            double rmax = std::sqrt(max_area / shape_area_factor(kind));
            rmax = std::min(rmax, 10.0);
            if (rmax < kMinRadius) continue;
            try_place(kind, rng.uniform(kMinRadius, rmax));
        }
        for (std::size_t si = 0; si < placed.size(); ++si) placed[si].color = colors[si];
        spec.shapes = placed;
        data.scenes[i] = render_scene(spec, rule);
    }

    std::vector<int> order(count);
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng = root.fork(0xABCD);
    split_rng.shuffle(order);
    const int n_train = static_cast<int>(count * 0.8);
    const int n_val = static_cast<int>(count * 0.1);
    data.train_indices.assign(order.begin(), order.begin() + n_train);
    data.val_indices.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    data.test_indices.assign(order.begin() + n_train + n_val, order.end());
    return data;
}

std::vector<Tensor> SyntheticDataset::images() const {
    std::vector<Tensor> out;
    out.reserve(scenes.size());
    for (const auto& s : scenes) out.push_back(s.image);
    return out;
}

std::vector<int> SyntheticDataset::labels() const {
    std::vector<int> out;
    out.reserve(scenes.size());
    for (const auto& s : scenes) out.push_back(s.class_label);
    return out;
}

std::array<double, 3> dataset_mean_color(const SyntheticDataset& data) {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    if (data.scenes.empty()) return mean;
    for (const auto& s : data.scenes) {
        const int hw = s.image.dim(1) * s.image.dim(2);
        for (int c = 0; c < 3; ++c) {
            double acc = 0.0;
            const double* p = s.image.data.data() + static_cast<std::size_t>(c) * hw;
            for (int i = 0; i < hw; ++i) acc += p[i];
            mean[c] += acc / hw;
        }
    }
    for (double& v : mean) v /= static_cast<double>(data.scenes.size());
    return mean;
}

// ---------------------------------------------------------------------------
// ToyVlm

ToyVlm::ToyVlm(std::vector<std::string> vocabulary, std::uint64_t seed, double epsilon, int dim)
    : vocab_(std::move(vocabulary)), seed_(seed), epsilon_(epsilon), dim_(dim) {
    if (static_cast<int>(vocab_.size()) > dim_)
        throw ConfigError("toy VLM vocabulary larger than the embedding dimension");
    // orthonormal rows via Gram-Schmidt over seeded Gaussian draws
    Rng rng(seed);
    for (std::size_t r = 0; r < vocab_.size(); ++r) {
        std::vector<double> v(dim_);
        for (;;) {
            for (double& x : v) x = rng.normal();
            for (const auto& prev : rows_) {
                const double proj = dot(v, prev);
                for (int i = 0; i < dim_; ++i) v[i] -= proj * prev[i];
            }
            const double n = l2_norm(v);
            if (n > 1e-6) {
                for (double& x : v) x /= n;
                break;
            }
        }
        rows_.push_back(std::move(v));
    }
}

std::string ToyVlm::id() const {
    std::ostringstream os;
    os << "toy-" << dim_ << "-" << std::hex << seed_;
    return os.str();
}

VlmEmbedding ToyVlm::embed_text(const ConceptText& concept_text) const {
    for (std::size_t i = 0; i < vocab_.size(); ++i)
        if (vocab_[i] == concept_text.label) return {rows_[i], Modality::text, true};
    throw ConfigError("concept '" + concept_text.label + "' is outside the toy VLM vocabulary");
}

std::vector<std::string> ToyVlm::detect_concepts(const Tensor& image) const {
    const int h = image.dim(1), w = image.dim(2);
    const ShapeColor all_colors[4] = {ShapeColor::red, ShapeColor::green, ShapeColor::blue,
                                      ShapeColor::yellow};
    std::vector<BinaryMask> color_maps(4, BinaryMask(h, w));
    std::vector<int> color_counts(4, 0);
    BinaryMask any(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double best = 1e9;
            int best_c = -1;
            for (int ci = 0; ci < 4; ++ci) {
                const auto pc = palette_color(all_colors[ci]);
                double d = 0.0;
                for (int ch = 0; ch < 3; ++ch) {
                    const double diff = image.at3(ch, y, x) - pc[ch];
                    d += diff * diff;
                }
                if (d < best) {
                    best = d;
                    best_c = ci;
                }
            }
            if (best <= 0.02) {  // squared distance; jitter stays well below
                color_maps[best_c].at(y, x) = 1;
                ++color_counts[best_c];
                any.at(y, x) = 1;
            }
        }

    std::vector<std::string> present;
    for (int ci = 0; ci < 4; ++ci)
        if (color_counts[ci] >= 16) present.push_back(shape_color_name(all_colors[ci]));

    // connected components of colored pixels classify the shape kinds
    std::vector<int> comp(static_cast<std::size_t>(h) * w, -1);
    bool kinds[3] = {false, false, false};
    int n_comp = 0;
    std::vector<int> stack;
    for (int start = 0; start < h * w; ++start) {
        if (!any.data[start] || comp[start] >= 0) continue;
        int minx = w, maxx = -1, miny = h, maxy = -1, area = 0;
        stack.push_back(start);
        comp[start] = n_comp;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            const int y = p / w, x = p % w;
            ++area;
            minx = std::min(minx, x);
            maxx = std::max(maxx, x);
            miny = std::min(miny, y);
            maxy = std::max(maxy, y);
            const int neigh[4] = {p - w, p + w, p - 1, p + 1};
            const bool valid[4] = {y > 0, y + 1 < h, x > 0, x + 1 < w};
            for (int k = 0; k < 4; ++k) {
                if (!valid[k]) continue;
                const int q = neigh[k];
                if (any.data[q] && comp[q] < 0) {
                    comp[q] = n_comp;
                    stack.push_back(q);
                }
            }
        }
        const int this_comp = n_comp;
        ++n_comp;
        if (area < 16) continue;
        // bounding-box corner occupancy separates the three kinds exactly:
        // squares own all four corners, triangles only the bottom two,
        // circles none
        auto owns = [&](int y, int x) { return comp[static_cast<std::size_t>(y) * w + x] == this_comp; };
        const bool tl = owns(miny, minx), tr = owns(miny, maxx);
        const bool bl = owns(maxy, minx), br = owns(maxy, maxx);
        if (bl && br)
            kinds[static_cast<int>(tl && tr ? ShapeKind::square : ShapeKind::triangle)] = true;
        else
            kinds[static_cast<int>(ShapeKind::circle)] = true;
    }
    for (int k = 0; k < 3; ++k)
        if (kinds[k]) present.push_back(shape_kind_name(static_cast<ShapeKind>(k)));
    return present;
}

VlmEmbedding ToyVlm::embed_image(const Tensor& image) const {
    const std::vector<std::string> present = detect_concepts(image);
    std::vector<double> emb(dim_, 0.0);
    for (const std::string& label : present) {
        for (std::size_t i = 0; i < vocab_.size(); ++i)
            if (vocab_[i] == label) {
                for (int d = 0; d < dim_; ++d) emb[d] += rows_[i][d];
                break;
            }
    }
    emb = normalized(emb);
    if (epsilon_ > 0.0) {
        // content-derived noise stream keeps embed_image a pure function
        Rng noise_rng(fnv1a(image.data.data(), image.data.size() * sizeof(double)) ^ seed_);
        std::vector<double> noise(dim_);
        for (double& v : noise) v = noise_rng.normal();
        noise = normalized(noise);
        for (int d = 0; d < dim_; ++d) emb[d] += epsilon_ * noise[d];
    }
    return {emb, Modality::image, false};
}

std::unique_ptr<ToyVlm> build_toy_vlm(const std::vector<std::string>& vocabulary,
                                      std::uint64_t seed, double epsilon, int dim) {
    return std::make_unique<ToyVlm>(vocabulary, seed, epsilon, dim);
}

// ---------------------------------------------------------------------------
// Toy classifier

std::unique_ptr<ConvBackbone> build_toy_classifier(const std::vector<int>& stage_channels,
                                                   int num_classes, int height, int width,
                                                   std::uint64_t seed) {
    if (stage_channels.size() < 2 || stage_channels.size() > 4)
        throw ConfigError("toy classifier supports 2-4 conv stages");
    auto model = std::make_unique<ConvBackbone>(3, height, width, stage_channels, num_classes);
    Rng rng(seed);
    model->init_params(rng);
    return model;
}

double classification_accuracy(const Classifier& model, const std::vector<Tensor>& images,
                               const std::vector<int>& labels, const std::vector<int>& indices,
                               int jobs) {
    if (indices.empty()) return 0.0;
    std::vector<char> correct(indices.size(), 0);
    parallel_for(indices.size(), jobs, [&](std::size_t i) {
        const int idx = indices[i];
        ClassPrediction p = model.forward(images[idx], nullptr);
        correct[i] = p.predicted_class == labels[idx] ? 1 : 0;
    });
    int hits = 0;
    for (char c : correct) hits += c;
    return static_cast<double>(hits) / indices.size();
}

ClassifierTrainReport train_classifier(Classifier& model, const std::vector<Tensor>& images,
                                       const std::vector<int>& labels,
                                       const std::vector<int>& train_split,
                                       const std::vector<int>& val_split,
                                       const ClassifierTrainOptions& opts, int jobs) {
    if (train_split.empty()) throw TrainingError("empty classifier training split");
    std::vector<Tensor*> params = model.params();
    std::vector<Tensor> velocity;
    for (Tensor* p : params) velocity.emplace_back(p->shape);

    Rng rng(opts.seed);
    ClassifierTrainReport report;
    for (int epoch = 1; epoch <= opts.max_epochs; ++epoch) {
        std::vector<int> order = train_split;
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
            const std::size_t end = std::min(order.size(), start + opts.batch_size);
            const std::size_t bsz = end - start;
            // per-sample gradient buffers, reduced in sample order for
            // scheduling-independent determinism
            std::vector<std::vector<Tensor>> sample_grads(bsz);
            parallel_for(bsz, jobs, [&](std::size_t bi) {
                const int idx = order[start + bi];
                Tape tape;
                std::vector<Var> pv;
                Var logits = model.forward_on_tape(tape, images[idx], nullptr, &pv);
                Var loss = tape.cross_entropy(logits, labels[idx]);
                if (!std::isfinite(tape.val(loss).data[0]))
                    throw TrainingError("non-finite classifier loss");
                tape.backward(loss);
                std::vector<Tensor>& slot = sample_grads[bi];
                slot.reserve(pv.size());
                for (Var v : pv) slot.push_back(tape.grad(v));
            });
            const double inv_batch = 1.0 / static_cast<double>(bsz);
            for (std::size_t p = 0; p < params.size(); ++p) {
                Tensor& vel = velocity[p];
                Tensor& w = *params[p];
                for (std::size_t k = 0; k < w.data.size(); ++k) {
                    double g = 0.0;
                    for (std::size_t bi = 0; bi < bsz; ++bi) g += sample_grads[bi][p].data[k];
                    vel.data[k] = opts.momentum * vel.data[k] - opts.lr * g * inv_batch;
                    w.data[k] += vel.data[k];
                }
            }
        }
        const double val_acc =
            classification_accuracy(model, images, labels, val_split, jobs);
        report.epoch_val_accuracy.push_back(val_acc);
        report.epochs_run = epoch;
        if (val_acc >= opts.target_val_accuracy) break;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Disk format

void write_dataset(const SyntheticDataset& data, const std::string& dir) {
    const fs::path root(dir);
    if (!root.parent_path().empty() && !fs::exists(root.parent_path()))
        throw IoError("parent directory " + root.parent_path().string() + " does not exist");
    fs::create_directory(root);
    fs::create_directory(root / "images");
    fs::create_directory(root / "masks");

    json labels;
    labels["class_names"] = data.class_names;
    json scenes = json::array();
    for (std::size_t i = 0; i < data.scenes.size(); ++i) {
        std::ostringstream id;
        id << "scene_" << std::setw(5) << std::setfill('0') << i;
        const Scene& s = data.scenes[i];
        write_png_rgb((root / "images" / (id.str() + ".png")).string(), s.image);
        for (const auto& [concept_label, mask] : s.concept_masks) {
            fs::create_directories(root / "masks" / concept_label);
            write_png_mask((root / "masks" / concept_label / (id.str() + ".png")).string(), mask);
        }
        scenes.push_back({{"id", id.str()}, {"class", s.class_label}});
    }
    labels["scenes"] = scenes;
    std::ofstream(root / "labels.json") << labels.dump(1) << "\n";

    save_concept_set((root / "concepts.json").string(), data.concepts);

    json manifest;
    manifest["schema_version"] = 1;
    manifest["seed"] = data.seed;
    manifest["count"] = data.scenes.size();
    manifest["class_rule"] = class_rule_to_string(data.rule);
    manifest["split"] = {{"train", data.train_indices},
                         {"val", data.val_indices},
                         {"test", data.test_indices}};
    std::ofstream(root / "manifest.json") << manifest.dump(1) << "\n";
}

DiskDataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    if (!fs::exists(root / "manifest.json")) throw IoError("no dataset manifest in " + dir);
    DiskDataset out;

    json manifest;
    std::ifstream(root / "manifest.json") >> manifest;
    out.seed = manifest.at("seed").get<std::uint64_t>();
    out.class_rule = manifest.at("class_rule").get<std::string>();
    out.train_indices = manifest.at("split").at("train").get<std::vector<int>>();
    out.val_indices = manifest.at("split").at("val").get<std::vector<int>>();
    out.test_indices = manifest.at("split").at("test").get<std::vector<int>>();

    json labels;
    std::ifstream(root / "labels.json") >> labels;
    out.class_names = labels.at("class_names").get<std::vector<std::string>>();
    for (const auto& s : labels.at("scenes")) {
        out.ids.push_back(s.at("id").get<std::string>());
        out.labels.push_back(s.at("class").get<int>());
    }
    out.concepts = load_concept_set((root / "concepts.json").string());

    out.images.reserve(out.ids.size());
    for (const std::string& id : out.ids)
        out.images.push_back(read_png_rgb((root / "images" / (id + ".png")).string()));

    for (const auto& c : out.concepts) {
        const fs::path cdir = root / "masks" / c.label;
        if (!fs::exists(cdir)) continue;
        for (const std::string& id : out.ids) {
            const fs::path mp = cdir / (id + ".png");
            if (fs::exists(mp)) out.masks[id][c.label] = read_png_mask(mp.string());
        }
    }
    return out;
}

}  // namespace ccam

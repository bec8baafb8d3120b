#include "ccam/vlm.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "ccam/error.hpp"
#include "ccam/rng.hpp"

namespace ccam {

using nlohmann::json;

ConceptCategory category_from_string(const std::string& s) {
    if (s == "object") return ConceptCategory::object;
    if (s == "part") return ConceptCategory::part;
    if (s == "color") return ConceptCategory::color;
    if (s == "material") return ConceptCategory::material;
    if (s == "other") return ConceptCategory::other;
    throw ConfigError("unknown concept category '" + s + "'");
}

std::string category_to_string(ConceptCategory c) {
    switch (c) {
        case ConceptCategory::object: return "object";
        case ConceptCategory::part: return "part";
        case ConceptCategory::color: return "color";
        case ConceptCategory::material: return "material";
        case ConceptCategory::other: return "other";
    }
    return "other";
}

ConceptText apply_template(const std::string& label, ConceptCategory category) {
    if (label.empty()) throw ConfigError("concept label must be nonempty");
    ConceptText out;
    out.label = label;
    out.category = category;
    switch (category) {
        case ConceptCategory::object:
        case ConceptCategory::part: out.templated = "a photo of a " + label; break;
        case ConceptCategory::color: out.templated = "a photo of a " + label + " object"; break;
        case ConceptCategory::material:
            out.templated = "a photo of an object made of " + label;
            break;
        case ConceptCategory::other: out.templated = "a photo of " + label; break;
    }
    return out;
}

double vlm_similarity(const VlmEmbedding& a, const VlmEmbedding& b) {
    if (a.values.size() != b.values.size())
        throw ShapeError("similarity dimension mismatch: " + std::to_string(a.values.size()) +
                         " vs " + std::to_string(b.values.size()));
    const bool ordered = a.modality == Modality::image && b.modality == Modality::text;
    const bool swapped = a.modality == Modality::text && b.modality == Modality::image;
    if (!ordered && !swapped)
        throw ConfigError("similarity expects one image and one text embedding");
    const std::vector<double> av = a.normalized ? a.values : normalized(a.values);
    const std::vector<double> bv = b.normalized ? b.values : normalized(b.values);
    return dot(av, bv);
}

VlmEmbedding TextEmbeddingCache::get(const VlmEncoder& vlm, const ConceptText& concept_text) {
    const std::pair<std::string, std::string> key{vlm.id(), concept_text.templated};
    {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = entries_.find(key);
        if (it != entries_.end()) return it->second;
    }
    VlmEmbedding e = vlm.embed_text(concept_text);
    std::lock_guard<std::mutex> lock(mu_);
    return entries_.emplace(key, std::move(e)).first->second;
}

std::vector<ConceptText> load_concept_set(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open concept set " + path);
    json j;
    in >> j;
    if (!j.is_array()) throw ConfigError("concept set must be a JSON list");
    std::vector<ConceptText> out;
    for (const auto& item : j) {
        out.push_back(apply_template(item.at("label").get<std::string>(),
                                     category_from_string(item.at("category").get<std::string>())));
    }
    return out;
}

void save_concept_set(const std::string& path, const std::vector<ConceptText>& concepts) {
    json j = json::array();
    for (const auto& c : concepts)
        j.push_back({{"label", c.label}, {"category", category_to_string(c.category)}});
    std::ofstream out(path);
    if (!out) throw IoError("cannot write concept set " + path);
    out << j.dump(1) << "\n";
}

PrecomputedVlm::PrecomputedVlm(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open embedding export " + path);
    json j;
    in >> j;
    id_ = j.at("id").get<std::string>();
    dim_ = j.at("dim").get<int>();
    for (auto& [k, v] : j.at("text").items()) {
        auto vec = v.get<std::vector<double>>();
        if (static_cast<int>(vec.size()) != dim_)
            throw ConfigError("text embedding '" + k + "' has wrong dimension");
        text_[k] = std::move(vec);
    }
    if (j.contains("image")) {
        for (auto& [k, v] : j.at("image").items()) {
            auto vec = v.get<std::vector<double>>();
            if (static_cast<int>(vec.size()) != dim_)
                throw ConfigError("image embedding '" + k + "' has wrong dimension");
            image_[k] = std::move(vec);
        }
    }
}

VlmEmbedding PrecomputedVlm::embed_text(const ConceptText& concept_text) const {
    auto it = text_.find(concept_text.templated);
    if (it == text_.end())
        throw ConfigError("no exported text embedding for '" + concept_text.templated + "'");
    return {it->second, Modality::text, false};
}

VlmEmbedding PrecomputedVlm::embed_image(const Tensor& image) const {
    const std::string key = image_content_key(image);
    auto it = image_.find(key);
    if (it == image_.end()) throw ConfigError("no exported image embedding for key " + key);
    return {it->second, Modality::image, false};
}

std::string image_content_key(const Tensor& image) {
    // hash the 8-bit quantized pixels so the key survives a PNG round trip
    std::vector<unsigned char> bytes;
    bytes.reserve(image.data.size());
    for (double v : image.data) {
        double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        bytes.push_back(static_cast<unsigned char>(std::lround(c * 255.0)));
    }
    std::uint64_t h = fnv1a(bytes.data(), bytes.size());
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

int known_vlm_dim(const std::string& name) {
    if (name == "clip-vit-b16") return 512;
    if (name == "toy") return 64;
    throw ConfigError("unknown VLM configuration '" + name + "'");
}

}  // namespace ccam

#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "ccam/tensor.hpp"

namespace ccam {

enum class ConceptCategory { object, part, color, material, other };

ConceptCategory category_from_string(const std::string& s);
std::string category_to_string(ConceptCategory c);

struct ConceptText {
    std::string label;
    ConceptCategory category = ConceptCategory::other;
    std::string templated;
};

// Category templates:
//   object/part -> "a photo of a {label}"
//   color       -> "a photo of a {label} object"
//   material    -> "a photo of an object made of {label}"
//   other       -> "a photo of {label}"
ConceptText apply_template(const std::string& label, ConceptCategory category);

enum class Modality { text, image };

struct VlmEmbedding {
    std::vector<double> values;
    Modality modality = Modality::text;
    bool normalized = false;
};

// Paired text/image encoders comparable by dot product. Implementations must
// be deterministic and safe for concurrent read-only use.
class VlmEncoder {
public:
    virtual ~VlmEncoder() = default;
    virtual int dim() const = 0;
    virtual std::string id() const = 0;
    virtual VlmEmbedding embed_text(const ConceptText& concept_text) const = 0;
    virtual VlmEmbedding embed_image(const Tensor& image) const = 0;
};

// Cosine-style similarity: inputs are L2-normalized unless already flagged
// normalized, then dotted. One argument must be an image embedding and the
// other a text embedding (either order).
double vlm_similarity(const VlmEmbedding& a, const VlmEmbedding& b);

// Text embeddings keyed by (vlm id, templated string); safe for concurrent
// insertion.
class TextEmbeddingCache {
public:
    VlmEmbedding get(const VlmEncoder& vlm, const ConceptText& concept_text);

private:
    std::mutex mu_;
    std::map<std::pair<std::string, std::string>, VlmEmbedding> entries_;
};

// Concept sets are stored as a JSON list of {"label","category"}; templated
// text is derived on load, never stored.
std::vector<ConceptText> load_concept_set(const std::string& path);
void save_concept_set(const std::string& path, const std::vector<ConceptText>& concepts);

// Adapter for an external pretrained VLM whose embeddings were exported
// offline: {"id","dim","text":{templated->vec},"image":{key->vec}} where key
// is image_content_key() of the input.
class PrecomputedVlm : public VlmEncoder {
public:
    explicit PrecomputedVlm(const std::string& path);
    int dim() const override { return dim_; }
    std::string id() const override { return id_; }
    VlmEmbedding embed_text(const ConceptText& concept_text) const override;
    VlmEmbedding embed_image(const Tensor& image) const override;

private:
    std::string id_;
    int dim_ = 0;
    std::map<std::string, std::vector<double>> text_, image_;
};

std::string image_content_key(const Tensor& image);

// Embedding width of well-known encoder families, for config validation.
int known_vlm_dim(const std::string& name);

}  // namespace ccam

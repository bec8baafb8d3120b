#include "ccam/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"

#include "ccam/error.hpp"
#include "ccam/kernels.hpp"

namespace ccam {

using nlohmann::json;

ClassPrediction prediction_from_logits(const std::vector<double>& logits) {
    ClassPrediction p;
    p.logits = logits;
    p.probabilities.resize(logits.size());
    kern::softmax(logits.data(), static_cast<int>(logits.size()), p.probabilities.data());
    p.predicted_class = kern::argmax_first(p.probabilities.data(), static_cast<int>(logits.size()));
    return p;
}

PooledEmbedding pool_layer(const LayerActivations& acts) {
    if (acts.maps.ndim() != 3) throw ShapeError("pool_layer expects (C,H,W) maps");
    const int c = acts.maps.dim(0);
    const int hw = acts.maps.dim(1) * acts.maps.dim(2);
    PooledEmbedding out;
    out.layer_index = acts.layer_index;
    out.values.resize(c);
    kern::global_avg_pool(acts.maps.data.data(), c, hw, out.values.data());
    return out;
}

ConcatEmbedding concat_layers(const std::vector<PooledEmbedding>& pooled) {
    if (pooled.empty()) throw ConfigError("concat_layers: no pooled embeddings");
    std::set<int> seen;
    ConcatEmbedding out;
    int start = 0;
    for (const auto& p : pooled) {
        if (!seen.insert(p.layer_index).second)
            throw ConfigError("concat_layers: duplicate layer index " +
                              std::to_string(p.layer_index));
        out.values.insert(out.values.end(), p.values.begin(), p.values.end());
        out.layer_offsets.push_back({p.layer_index, start, static_cast<int>(p.values.size())});
        start += static_cast<int>(p.values.size());
    }
    return out;
}

LayerActivations tokens_to_grid(const Tensor& tokens, bool has_class_token, int layer_index) {
    if (tokens.ndim() != 2) throw ShapeError("tokens_to_grid expects (N,D)");
    int n = tokens.dim(0);
    const int d = tokens.dim(1);
    int offset = 0;
    if (has_class_token) {
        n -= 1;
        offset = 1;
    }
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
    if (n <= 0 || side * side != n)
        throw ShapeError("tokens_to_grid: token count " + std::to_string(n) +
                         " is not a perfect square");
    LayerActivations out;
    out.layer_index = layer_index;
    out.maps = Tensor({d, side, side});
    for (int p = 0; p < n; ++p)
        for (int c = 0; c < d; ++c) out.maps.at3(c, p / side, p % side) = tokens.at2(p + offset, c);
    return out;
}

// ---------------------------------------------------------------------------
// ConvBackbone

ConvBackbone::ConvBackbone(int in_channels, int height, int width, std::vector<int> stage_channels,
                           int num_classes)
    : in_channels_(in_channels),
      height_(height),
      width_(width),
      stage_channels_(std::move(stage_channels)),
      num_classes_(num_classes) {
    if (stage_channels_.empty()) throw ConfigError("ConvBackbone needs at least one stage");
    if (num_classes_ < 2) throw ConfigError("ConvBackbone needs at least two classes");
    int prev = in_channels_;
    for (int c : stage_channels_) {
        conv_w_.emplace_back(std::vector<int>{c, prev, 3, 3});
        conv_b_.emplace_back(std::vector<int>{c});
        prev = c;
    }
    head_w_ = Tensor({num_classes_, stage_channels_.back()});
    head_b_ = Tensor({num_classes_});
}

void ConvBackbone::check_input(const Tensor& image) const {
    if (image.ndim() != 3 || image.dim(0) != in_channels_ || image.dim(1) != height_ ||
        image.dim(2) != width_)
        throw ShapeError("input " + image.shape_str() + ", model expects (" +
                         std::to_string(in_channels_) + "," + std::to_string(height_) + "," +
                         std::to_string(width_) + ")");
}

Tensor ConvBackbone::stage_forward(int stage, const Tensor& input) const {
    const Tensor& w = conv_w_[stage];
    const int ci = input.dim(0), h = input.dim(1), wd = input.dim(2);
    const int co = w.dim(0);
    Tensor conv({co, h, wd});
    kern::conv2d(input.data.data(), ci, h, wd, w.data.data(), co, 3, 3, 1, 1,
                 conv_b_[stage].data.data(), conv.data.data(), h, wd);
    for (double& v : conv.data) v = v > 0.0 ? v : 0.0;
    Tensor pooled({co, h / 2, wd / 2});
    kern::avgpool2(conv.data.data(), co, h, wd, pooled.data.data(), h / 2, wd / 2);
    return pooled;
}

ClassPrediction ConvBackbone::forward(const Tensor& image,
                                      std::vector<LayerActivations>* captures) const {
    check_input(image);
    Tensor x = image;
    for (double& v : x.data) v -= 0.5;  // center the 0..1 input
    Tensor last;
    for (std::size_t s = 0; s < stage_channels_.size(); ++s) {
        Tensor y = stage_forward(static_cast<int>(s), x);
        if (captures) captures->push_back({static_cast<int>(s) + 1, y});
        last = y;
        x = std::move(y);
    }
    std::vector<double> emb(stage_channels_.back());
    kern::global_avg_pool(last.data.data(), stage_channels_.back(), last.dim(1) * last.dim(2),
                          emb.data());
    std::vector<double> logits(num_classes_);
    kern::linear(emb.data(), static_cast<int>(emb.size()), head_w_.data.data(), num_classes_,
                 head_b_.data.data(), logits.data());
    return prediction_from_logits(logits);
}

ClassPrediction ConvBackbone::forward_from(int layer_index, const LayerActivations& replacement,
                                           const std::vector<LayerActivations>& base,
                                           std::vector<LayerActivations>* downstream) const {
    if (layer_index < 1 || layer_index > num_layers())
        throw IndexError("forward_from: layer " + std::to_string(layer_index));
    if (!replacement.maps.same_shape(base[layer_index - 1].maps))
        throw ShapeError("forward_from: replacement shape mismatch");
    Tensor x = replacement.maps;
    for (int s = layer_index; s < num_layers(); ++s) {
        Tensor y = stage_forward(s, x);
        if (downstream) downstream->push_back({s + 1, y});
        x = std::move(y);
    }
    std::vector<double> emb(stage_channels_.back());
    kern::global_avg_pool(x.data.data(), stage_channels_.back(), x.dim(1) * x.dim(2), emb.data());
    std::vector<double> logits(num_classes_);
    kern::linear(emb.data(), static_cast<int>(emb.size()), head_w_.data.data(), num_classes_,
                 head_b_.data.data(), logits.data());
    return prediction_from_logits(logits);
}

Var ConvBackbone::forward_on_tape(Tape& tape, const Tensor& image, std::vector<Var>* captures,
                                  std::vector<Var>* param_vars) const {
    check_input(image);
    const bool train = param_vars != nullptr;
    auto bind = [&](const Tensor& t) { return train ? tape.leaf(t) : tape.constant(t); };
    std::vector<Var> ws, bs;
    for (std::size_t s = 0; s < conv_w_.size(); ++s) {
        ws.push_back(bind(conv_w_[s]));
        bs.push_back(bind(conv_b_[s]));
    }
    Var hw = bind(head_w_), hb = bind(head_b_);
    if (param_vars) {
        for (std::size_t s = 0; s < ws.size(); ++s) {
            param_vars->push_back(ws[s]);
            param_vars->push_back(bs[s]);
        }
        param_vars->push_back(hw);
        param_vars->push_back(hb);
    }
    Var x = tape.sub_const(tape.leaf(image), 0.5);  // image leaf keeps capture gradients reachable
    for (std::size_t s = 0; s < stage_channels_.size(); ++s) {
        x = tape.avg_pool2x2(tape.relu(tape.conv2d(x, ws[s], bs[s], 1, 1)));
        if (captures) captures->push_back(x);
    }
    Var emb = tape.global_avg_pool(x);
    return tape.linear(emb, hw, hb);
}

std::vector<Tensor*> ConvBackbone::params() {
    std::vector<Tensor*> out;
    for (std::size_t s = 0; s < conv_w_.size(); ++s) {
        out.push_back(&conv_w_[s]);
        out.push_back(&conv_b_[s]);
    }
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
}

std::vector<const Tensor*> ConvBackbone::params() const {
    std::vector<const Tensor*> out;
    for (std::size_t s = 0; s < conv_w_.size(); ++s) {
        out.push_back(&conv_w_[s]);
        out.push_back(&conv_b_[s]);
    }
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
}

void ConvBackbone::init_params(Rng& rng) {
    for (std::size_t s = 0; s < conv_w_.size(); ++s) {
        Tensor& w = conv_w_[s];
        const double std_dev = std::sqrt(2.0 / (w.dim(1) * 9));
        for (double& v : w.data) v = rng.normal() * std_dev;
        std::fill(conv_b_[s].data.begin(), conv_b_[s].data.end(), 0.0);
    }
    const double hs = std::sqrt(1.0 / head_w_.dim(1));
    for (double& v : head_w_.data) v = rng.normal() * hs;
    std::fill(head_b_.data.begin(), head_b_.data.end(), 0.0);
}

json ConvBackbone::to_json() const {
    json j;
    j["kind"] = "conv";
    j["in_channels"] = in_channels_;
    j["height"] = height_;
    j["width"] = width_;
    j["stages"] = stage_channels_;
    j["classes"] = num_classes_;
    json params = json::array();
    for (const Tensor* t : this->params()) params.push_back(t->data);
    j["params"] = params;
    return j;
}

std::unique_ptr<ConvBackbone> ConvBackbone::from_json(const json& j) {
    auto model = std::make_unique<ConvBackbone>(j.at("in_channels").get<int>(),
                                                j.at("height").get<int>(), j.at("width").get<int>(),
                                                j.at("stages").get<std::vector<int>>(),
                                                j.at("classes").get<int>());
    if (j.contains("params")) {
        auto ps = model->params();
        const json& arr = j.at("params");
        if (arr.size() != ps.size()) throw ConfigError("conv checkpoint: parameter count mismatch");
        for (std::size_t i = 0; i < ps.size(); ++i) {
            auto v = arr[i].get<std::vector<double>>();
            if (v.size() != ps[i]->data.size())
                throw ConfigError("conv checkpoint: parameter size mismatch");
            ps[i]->data = std::move(v);
        }
    }
    return model;
}

// ---------------------------------------------------------------------------
// TokenBackbone

TokenBackbone::TokenBackbone(int in_channels, int height, int width, int patch, int embed_dim,
                             int blocks, std::vector<int> capture_blocks, int num_classes)
    : in_channels_(in_channels),
      height_(height),
      width_(width),
      patch_(patch),
      embed_dim_(embed_dim),
      blocks_(blocks),
      capture_blocks_(std::move(capture_blocks)),
      num_classes_(num_classes) {
    if (height_ % patch_ != 0 || width_ % patch_ != 0)
        throw ConfigError("TokenBackbone: patch size must divide the input resolution");
    if (height_ / patch_ != width_ / patch_)
        throw ConfigError("TokenBackbone: token grid must be square");
    if (blocks_ < 1) throw ConfigError("TokenBackbone needs at least one block");
    if (capture_blocks_.empty()) capture_blocks_ = {blocks_};
    for (std::size_t i = 0; i < capture_blocks_.size(); ++i) {
        if (capture_blocks_[i] < 1 || capture_blocks_[i] > blocks_)
            throw ConfigError("TokenBackbone: capture block out of range");
        if (i > 0 && capture_blocks_[i] <= capture_blocks_[i - 1])
            throw ConfigError("TokenBackbone: capture blocks must be strictly increasing");
    }
    side_ = height_ / patch_;
    embed_w_ = Tensor({embed_dim_, in_channels_ * patch_ * patch_});
    embed_b_ = Tensor({embed_dim_});
    for (int b = 0; b < blocks_; ++b) {
        tok_w_.emplace_back(std::vector<int>{embed_dim_, embed_dim_});
        tok_b_.emplace_back(std::vector<int>{embed_dim_});
        mix_w_.emplace_back(std::vector<int>{embed_dim_, embed_dim_});
        mix_b_.emplace_back(std::vector<int>{embed_dim_});
    }
    head_w_ = Tensor({num_classes_, embed_dim_});
    head_b_ = Tensor({num_classes_});
}

std::vector<int> TokenBackbone::layer_channels() const {
    return std::vector<int>(capture_blocks_.size(), embed_dim_);
}

Tensor TokenBackbone::image_to_patch_rows(const Tensor& image) const {
    if (image.ndim() != 3 || image.dim(0) != in_channels_ || image.dim(1) != height_ ||
        image.dim(2) != width_)
        throw ShapeError("input " + image.shape_str() + " does not match token model");
    const int n = side_ * side_;
    const int row = in_channels_ * patch_ * patch_;
    Tensor out({n, row});
    for (int ty = 0; ty < side_; ++ty)
        for (int tx = 0; tx < side_; ++tx) {
            double* r = out.data.data() + (static_cast<std::size_t>(ty) * side_ + tx) * row;
            int k = 0;
            for (int c = 0; c < in_channels_; ++c)
                for (int py = 0; py < patch_; ++py)
                    for (int px = 0; px < patch_; ++px)
                        r[k++] = image.at3(c, ty * patch_ + py, tx * patch_ + px) - 0.5;
        }
    return out;
}

Tensor TokenBackbone::block_forward(int block, const Tensor& tokens) const {
    const int n = tokens.dim(0), d = tokens.dim(1);
    std::vector<double> mean(d, 0.0);
    for (int t = 0; t < n; ++t)
        for (int i = 0; i < d; ++i) mean[i] += tokens.at2(t, i);
    for (int i = 0; i < d; ++i) mean[i] /= n;
    std::vector<double> mix(d);
    kern::linear(mean.data(), d, mix_w_[block].data.data(), d, mix_b_[block].data.data(),
                 mix.data());
    Tensor out({n, d});
    for (int t = 0; t < n; ++t) {
        kern::linear(tokens.data.data() + static_cast<std::size_t>(t) * d, d,
                     tok_w_[block].data.data(), d, tok_b_[block].data.data(),
                     out.data.data() + static_cast<std::size_t>(t) * d);
        for (int i = 0; i < d; ++i) out.at2(t, i) = std::tanh(out.at2(t, i) + mix[i]);
    }
    return out;
}

ClassPrediction TokenBackbone::head_forward(const Tensor& tokens) const {
    const int n = tokens.dim(0), d = tokens.dim(1);
    std::vector<double> mean(d, 0.0);
    for (int t = 0; t < n; ++t)
        for (int i = 0; i < d; ++i) mean[i] += tokens.at2(t, i);
    for (int i = 0; i < d; ++i) mean[i] /= n;
    std::vector<double> logits(num_classes_);
    kern::linear(mean.data(), d, head_w_.data.data(), num_classes_, head_b_.data.data(),
                 logits.data());
    return prediction_from_logits(logits);
}

ClassPrediction TokenBackbone::forward(const Tensor& image,
                                       std::vector<LayerActivations>* captures) const {
    Tensor rows = image_to_patch_rows(image);
    const int n = rows.dim(0);
    Tensor tokens({n, embed_dim_});
    for (int t = 0; t < n; ++t)
        kern::linear(rows.data.data() + static_cast<std::size_t>(t) * rows.dim(1), rows.dim(1),
                     embed_w_.data.data(), embed_dim_, embed_b_.data.data(),
                     tokens.data.data() + static_cast<std::size_t>(t) * embed_dim_);
    std::size_t next_capture = 0;
    for (int b = 0; b < blocks_; ++b) {
        tokens = block_forward(b, tokens);
        if (next_capture < capture_blocks_.size() && capture_blocks_[next_capture] == b + 1) {
            if (captures) {
                LayerActivations grid = tokens_to_grid(tokens, false,
                                                       static_cast<int>(next_capture) + 1);
                captures->push_back(std::move(grid));
            }
            ++next_capture;
        }
    }
    return head_forward(tokens);
}

ClassPrediction TokenBackbone::forward_from(int layer_index, const LayerActivations& replacement,
                                            const std::vector<LayerActivations>& base,
                                            std::vector<LayerActivations>* downstream) const {
    if (layer_index < 1 || layer_index > num_layers())
        throw IndexError("forward_from: layer " + std::to_string(layer_index));
    if (!replacement.maps.same_shape(base[layer_index - 1].maps))
        throw ShapeError("forward_from: replacement shape mismatch");
    const int d = replacement.maps.dim(0);
    const int n = side_ * side_;
    Tensor tokens({n, d});
    for (int t = 0; t < n; ++t)
        for (int c = 0; c < d; ++c) tokens.at2(t, c) = replacement.maps.at3(c, t / side_, t % side_);
    std::size_t next_capture = static_cast<std::size_t>(layer_index);
    for (int b = capture_blocks_[layer_index - 1]; b < blocks_; ++b) {
        tokens = block_forward(b, tokens);
        if (next_capture < capture_blocks_.size() && capture_blocks_[next_capture] == b + 1) {
            if (downstream) {
                LayerActivations grid = tokens_to_grid(tokens, false,
                                                       static_cast<int>(next_capture) + 1);
                downstream->push_back(std::move(grid));
            }
            ++next_capture;
        }
    }
    return head_forward(tokens);
}

Var TokenBackbone::forward_on_tape(Tape& tape, const Tensor& image, std::vector<Var>* captures,
                                   std::vector<Var>* param_vars) const {
    Tensor rows = image_to_patch_rows(image);
    const bool train = param_vars != nullptr;
    auto bind = [&](const Tensor& t) { return train ? tape.leaf(t) : tape.constant(t); };
    Var ew = bind(embed_w_), eb = bind(embed_b_);
    std::vector<Var> tw, tb, mw, mb;
    for (int b = 0; b < blocks_; ++b) {
        tw.push_back(bind(tok_w_[b]));
        tb.push_back(bind(tok_b_[b]));
        mw.push_back(bind(mix_w_[b]));
        mb.push_back(bind(mix_b_[b]));
    }
    Var hw = bind(head_w_), hb = bind(head_b_);
    if (param_vars) {
        param_vars->push_back(ew);
        param_vars->push_back(eb);
        for (int b = 0; b < blocks_; ++b) {
            param_vars->push_back(tw[b]);
            param_vars->push_back(tb[b]);
            param_vars->push_back(mw[b]);
            param_vars->push_back(mb[b]);
        }
        param_vars->push_back(hw);
        param_vars->push_back(hb);
    }
    Var x = tape.tokens_linear(tape.leaf(rows), ew, eb);
    std::size_t next_capture = 0;
    for (int b = 0; b < blocks_; ++b) {
        Var mix = tape.linear(tape.token_mean(x), mw[b], mb[b]);
        x = tape.tanh_op(tape.broadcast_add(tape.tokens_linear(x, tw[b], tb[b]), mix));
        if (next_capture < capture_blocks_.size() && capture_blocks_[next_capture] == b + 1) {
            Var grid = tape.grid_from_tokens(x, side_);
            if (captures) captures->push_back(grid);
            // downstream continues from the grid view so channel gradients flow
            x = tape.tokens_from_grid(grid);
            ++next_capture;
        }
    }
    return tape.linear(tape.token_mean(x), hw, hb);
}

std::vector<Tensor*> TokenBackbone::params() {
    std::vector<Tensor*> out{&embed_w_, &embed_b_};
    for (int b = 0; b < blocks_; ++b) {
        out.push_back(&tok_w_[b]);
        out.push_back(&tok_b_[b]);
        out.push_back(&mix_w_[b]);
        out.push_back(&mix_b_[b]);
    }
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
}

std::vector<const Tensor*> TokenBackbone::params() const {
    std::vector<const Tensor*> out{&embed_w_, &embed_b_};
    for (int b = 0; b < blocks_; ++b) {
        out.push_back(&tok_w_[b]);
        out.push_back(&tok_b_[b]);
        out.push_back(&mix_w_[b]);
        out.push_back(&mix_b_[b]);
    }
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
}

void TokenBackbone::init_params(Rng& rng) {
    auto gauss = [&](Tensor& t, double std_dev) {
        for (double& v : t.data) v = rng.normal() * std_dev;
    };
    gauss(embed_w_, std::sqrt(1.0 / embed_w_.dim(1)));
    std::fill(embed_b_.data.begin(), embed_b_.data.end(), 0.0);
    for (int b = 0; b < blocks_; ++b) {
        gauss(tok_w_[b], std::sqrt(1.0 / embed_dim_));
        std::fill(tok_b_[b].data.begin(), tok_b_[b].data.end(), 0.0);
        gauss(mix_w_[b], std::sqrt(1.0 / embed_dim_));
        std::fill(mix_b_[b].data.begin(), mix_b_[b].data.end(), 0.0);
    }
    gauss(head_w_, std::sqrt(1.0 / embed_dim_));
    std::fill(head_b_.data.begin(), head_b_.data.end(), 0.0);
}

json TokenBackbone::to_json() const {
    json j;
    j["kind"] = "token";
    j["in_channels"] = in_channels_;
    j["height"] = height_;
    j["width"] = width_;
    j["patch"] = patch_;
    j["embed_dim"] = embed_dim_;
    j["blocks"] = blocks_;
    j["capture_blocks"] = capture_blocks_;
    j["classes"] = num_classes_;
    json params = json::array();
    for (const Tensor* t : this->params()) params.push_back(t->data);
    j["params"] = params;
    return j;
}

std::unique_ptr<TokenBackbone> TokenBackbone::from_json(const json& j) {
    auto model = std::make_unique<TokenBackbone>(
        j.at("in_channels").get<int>(), j.at("height").get<int>(), j.at("width").get<int>(),
        j.at("patch").get<int>(), j.at("embed_dim").get<int>(), j.at("blocks").get<int>(),
        j.value("capture_blocks", std::vector<int>{}), j.at("classes").get<int>());
    if (j.contains("params")) {
        auto ps = model->params();
        const json& arr = j.at("params");
        if (arr.size() != ps.size()) throw ConfigError("token checkpoint: parameter count mismatch");
        for (std::size_t i = 0; i < ps.size(); ++i) {
            auto v = arr[i].get<std::vector<double>>();
            if (v.size() != ps[i]->data.size())
                throw ConfigError("token checkpoint: parameter size mismatch");
            ps[i]->data = std::move(v);
        }
    }
    return model;
}

// ---------------------------------------------------------------------------
// Adapter operations

ForwardCapture forward_with_activations(const Classifier& model, const Tensor& image) {
    if (model.num_layers() < 1) throw ConfigError("model declares no capture points");
    ForwardCapture out;
    out.prediction = model.forward(image, &out.activations);
    return out;
}

std::vector<PooledEmbedding> pool_all(const std::vector<LayerActivations>& acts) {
    std::vector<PooledEmbedding> out;
    out.reserve(acts.size());
    for (const auto& a : acts) out.push_back(pool_layer(a));
    return out;
}

MaskedRecompute recompute_masked(const Classifier& model,
                                 const std::vector<LayerActivations>& base, int layer_index,
                                 const std::vector<int>& channels, double mask_value) {
    if (layer_index < 1 || layer_index > static_cast<int>(base.size()))
        throw IndexError("mask layer " + std::to_string(layer_index) + " out of range");
    if (!std::isfinite(mask_value)) throw ConfigError("mask value must be finite");
    const LayerActivations& src = base[layer_index - 1];
    const int c = src.maps.dim(0);
    const std::int64_t plane = static_cast<std::int64_t>(src.maps.dim(1)) * src.maps.dim(2);
    LayerActivations replacement = src;
    for (int ch : channels) {
        if (ch < 0 || ch >= c) throw IndexError("mask channel " + std::to_string(ch));
        double* p = replacement.maps.data.data() + static_cast<std::int64_t>(ch) * plane;
        std::fill(p, p + plane, mask_value);
    }

    MaskedRecompute out;
    std::vector<LayerActivations> downstream;
    out.prediction = model.forward_from(layer_index, replacement, base, &downstream);

    for (int l = 0; l < layer_index - 1; ++l) out.pooled.push_back(pool_layer(base[l]));
    PooledEmbedding masked_pool = pool_layer(replacement);
    // constant channels pool to the mask value exactly
    for (int ch : channels) masked_pool.values[ch] = mask_value;
    out.pooled.push_back(std::move(masked_pool));
    for (const auto& d : downstream) out.pooled.push_back(pool_layer(d));
    out.concat = concat_layers(out.pooled);
    return out;
}

MaskedRecompute mask_channels_and_recompute(const Classifier& model, const Tensor& image,
                                            int layer_index, const std::vector<int>& channels,
                                            double mask_value) {
    ForwardCapture base = forward_with_activations(model, image);
    return recompute_masked(model, base.activations, layer_index, channels, mask_value);
}

// ---------------------------------------------------------------------------
// GradSession

GradSession::GradSession(const Classifier& model, const Tensor& image) {
    if (model.num_layers() < 1) throw ConfigError("model declares no capture points");
    logits_ = model.forward_on_tape(tape_, image, &captures_, nullptr);
    probs_ = tape_.softmax(logits_);
    pooled_.reserve(captures_.size());
    for (Var c : captures_) pooled_.push_back(tape_.global_avg_pool(c));
    concat_ = tape_.concat(pooled_);
}

Var GradSession::activation_var(int layer_index) const {
    if (layer_index < 1 || layer_index > num_layers())
        throw IndexError("activation_var layer " + std::to_string(layer_index));
    return captures_[layer_index - 1];
}

Var GradSession::pooled_var(int layer_index) const {
    if (layer_index < 1 || layer_index > num_layers())
        throw IndexError("pooled_var layer " + std::to_string(layer_index));
    return pooled_[layer_index - 1];
}

Var GradSession::class_score_var(int class_index) { return tape_.pick(probs_, class_index); }

std::vector<LayerActivations> GradSession::activations() const {
    std::vector<LayerActivations> out;
    for (std::size_t i = 0; i < captures_.size(); ++i)
        out.push_back({static_cast<int>(i) + 1, tape_.val(captures_[i])});
    return out;
}

std::vector<PooledEmbedding> GradSession::pooled() const {
    std::vector<PooledEmbedding> out;
    for (std::size_t i = 0; i < pooled_.size(); ++i)
        out.push_back({static_cast<int>(i) + 1, tape_.val(pooled_[i]).data});
    return out;
}

ConcatEmbedding GradSession::concat() const {
    std::vector<PooledEmbedding> p = pooled();
    return concat_layers(p);
}

ClassPrediction GradSession::prediction() const {
    return prediction_from_logits(tape_.val(logits_).data);
}

Tensor GradSession::activation_gradient(Var scalar, int layer_index) {
    if (layer_index < 1 || layer_index > num_layers())
        throw IndexError("activation_gradient layer " + std::to_string(layer_index));
    if (last_backward_ != scalar.id) {
        tape_.backward(scalar);
        last_backward_ = scalar.id;
    }
    return tape_.grad(captures_[layer_index - 1]);
}

// ---------------------------------------------------------------------------
// Registry

std::unique_ptr<Classifier> make_classifier(const json& spec) {
    const std::string kind = spec.at("kind").get<std::string>();
    if (kind == "conv") return ConvBackbone::from_json(spec);
    if (kind == "token") return TokenBackbone::from_json(spec);
    throw ConfigError("unknown classifier kind '" + kind + "'");
}

std::unique_ptr<Classifier> load_classifier(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open classifier checkpoint " + path);
    json j;
    in >> j;
    return make_classifier(j);
}

void save_classifier(const Classifier& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write classifier checkpoint " + path);
    out << model.to_json().dump(1) << "\n";
}

}  // namespace ccam

#include "ccam/translator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "ccam/error.hpp"
#include "ccam/kernels.hpp"
#include "ccam/parallel.hpp"

namespace ccam {

using nlohmann::json;

TranslatorNetwork TranslatorNetwork::create(const std::vector<std::pair<int, int>>& dims) {
    if (dims.empty()) throw ConfigError("translator needs at least one layer");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
        if (dims[i].second != dims[i + 1].first)
            throw ConfigError("translator layer dimensions do not chain");
    TranslatorNetwork h;
    h.layer_dims = dims;
    for (auto [in, out] : dims) {
        if (in < 1 || out < 1) throw ConfigError("translator layer dimensions must be positive");
        h.weights.emplace_back(std::vector<int>{out, in});
        h.biases.emplace_back(std::vector<int>{out});
    }
    return h;
}

void TranslatorNetwork::init(Rng& rng) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
        Tensor& w = weights[l];
        const double bound = std::sqrt(6.0 / (w.dim(0) + w.dim(1)));
        for (double& v : w.data) v = rng.uniform(-bound, bound);
        std::fill(biases[l].data.begin(), biases[l].data.end(), 0.0);
    }
}

std::vector<double> TranslatorNetwork::apply(const std::vector<double>& z) const {
    if (static_cast<int>(z.size()) != in_dim())
        throw ShapeError("translator input has length " + std::to_string(z.size()) +
                         ", expected " + std::to_string(in_dim()));
    std::vector<double> x = z;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        std::vector<double> y(layer_dims[l].second);
        kern::linear(x.data(), layer_dims[l].first, weights[l].data.data(), layer_dims[l].second,
                     biases[l].data.data(), y.data());
        if (l + 1 < weights.size())
            for (double& v : y) v = std::tanh(v);
        x = std::move(y);
    }
    return x;
}

Var TranslatorNetwork::apply_on_tape(Tape& tape, Var z, std::vector<Var>* param_vars) const {
    if (tape.val(z).numel() != in_dim()) throw ShapeError("translator input dimension mismatch");
    Var x = z;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        Var w = param_vars ? tape.leaf(weights[l]) : tape.constant(weights[l]);
        Var b = param_vars ? tape.leaf(biases[l]) : tape.constant(biases[l]);
        if (param_vars) {
            param_vars->push_back(w);
            param_vars->push_back(b);
        }
        x = tape.linear(x, w, b);
        if (l + 1 < weights.size()) x = tape.tanh_op(x);
    }
    return x;
}

std::vector<Tensor*> TranslatorNetwork::params() {
    std::vector<Tensor*> out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        out.push_back(&weights[l]);
        out.push_back(&biases[l]);
    }
    return out;
}

json TranslatorNetwork::to_json() const {
    json dims = json::array();
    for (auto [in, out] : layer_dims) dims.push_back({in, out});
    json w = json::array(), b = json::array();
    for (std::size_t l = 0; l < weights.size(); ++l) {
        w.push_back(weights[l].data);
        b.push_back(biases[l].data);
    }
    return {{"layer_dims", dims}, {"weights", w}, {"biases", b}};
}

TranslatorNetwork TranslatorNetwork::from_json(const json& j) {
    std::vector<std::pair<int, int>> dims;
    for (const auto& d : j.at("layer_dims")) dims.emplace_back(d[0].get<int>(), d[1].get<int>());
    TranslatorNetwork h = create(dims);
    const json& w = j.at("weights");
    const json& b = j.at("biases");
    if (w.size() != h.weights.size() || b.size() != h.biases.size())
        throw ConfigError("translator checkpoint: layer count mismatch");
    for (std::size_t l = 0; l < h.weights.size(); ++l) {
        auto wv = w[l].get<std::vector<double>>();
        auto bv = b[l].get<std::vector<double>>();
        if (wv.size() != h.weights[l].data.size() || bv.size() != h.biases[l].data.size())
            throw ConfigError("translator checkpoint: parameter size mismatch");
        h.weights[l].data = std::move(wv);
        h.biases[l].data = std::move(bv);
    }
    return h;
}

void save_translator(const TranslatorNetwork& h, const std::string& path, const json& extra) {
    json j = h.to_json();
    j["normalization_policy"] = "text-normalized; image normalized inside similarity";
    for (auto& [k, v] : extra.items()) j[k] = v;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write translator checkpoint " + path);
    out << j.dump(1) << "\n";
}

TranslatorNetwork load_translator(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open translator checkpoint " + path);
    json j;
    in >> j;
    return TranslatorNetwork::from_json(j);
}

VlmEmbedding translate(const TranslatorNetwork& h, const std::vector<double>& z) {
    return {h.apply(z), Modality::image, false};
}

double concept_score(const TranslatorNetwork& h, const ConcatEmbedding& z,
                     const VlmEmbedding& txt) {
    if (txt.modality != Modality::text) throw ConfigError("concept_score expects a text embedding");
    return vlm_similarity(translate(h, z.values), txt);
}

LossValues losses(const TranslatorNetwork& h, const std::vector<double>& z,
                  const VlmEmbedding& vlm_img, const std::vector<VlmEmbedding>& txt_batch,
                  double lambda_sim, bool use_similarity_loss) {
    if (vlm_img.modality != Modality::image) throw ConfigError("losses expects an image embedding");
    if (use_similarity_loss && txt_batch.empty())
        throw ConfigError("similarity loss enabled but the concept batch is empty");
    const std::vector<double> out = h.apply(z);
    if (out.size() != vlm_img.values.size()) throw ShapeError("losses: embedding width mismatch");
    LossValues lv;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double d = out[i] - vlm_img.values[i];
        lv.emb += d * d;
    }
    lv.emb /= static_cast<double>(out.size());
    if (use_similarity_loss) {
        const VlmEmbedding pred{out, Modality::image, false};
        for (const auto& txt : txt_batch) {
            const double d = vlm_similarity(pred, txt) - vlm_similarity(vlm_img, txt);
            lv.sim += d * d;
        }
        lv.sim /= static_cast<double>(txt_batch.size());
        lv.total = lv.emb + lambda_sim * lv.sim;
    } else {
        lv.total = lv.emb;
    }
    return lv;
}

void TrainConfig::validate() const {
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0))
        throw ConfigError("lr_decay_factor must be in (0,1)");
    if (lambda_sim < 0.0) throw ConfigError("lambda_sim must be >= 0");
    if (plateau_epochs < 1) throw ConfigError("plateau_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
    if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
}

json TrainConfig::to_json() const {
    return {{"max_epochs", max_epochs},
            {"base_lr", base_lr},
            {"warmup_peak_lr", warmup_peak_lr},
            {"warmup_epochs", warmup_epochs},
            {"lr_decay_factor", lr_decay_factor},
            {"plateau_epochs", plateau_epochs},
            {"early_stop_patience", early_stop_patience},
            {"momentum", momentum},
            {"lambda_sim", lambda_sim},
            {"batch_size", batch_size},
            {"seed", seed},
            {"use_similarity_loss", use_similarity_loss},
            {"multi_layer", multi_layer}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.warmup_peak_lr = j.value("warmup_peak_lr", c.warmup_peak_lr);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
    c.plateau_epochs = j.value("plateau_epochs", c.plateau_epochs);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.momentum = j.value("momentum", c.momentum);
    c.lambda_sim = j.value("lambda_sim", c.lambda_sim);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.use_similarity_loss = j.value("use_similarity_loss", c.use_similarity_loss);
    c.multi_layer = j.value("multi_layer", c.multi_layer);
    return c;
}

json TrainReport::to_json() const {
    json epochs = json::array();
    for (std::size_t e = 0; e < train.size(); ++e) {
        epochs.push_back({{"epoch", e + 1},
                          {"train_emb", train[e].emb},
                          {"train_sim", train[e].sim},
                          {"train_total", train[e].total},
                          {"val_emb", validation[e].emb},
                          {"val_sim", validation[e].sim},
                          {"val_total", validation[e].total}});
    }
    return {{"epochs", epochs},
            {"stopped_epoch", stopped_epoch},
            {"best_epoch", best_epoch},
            {"final_lr", final_lr},
            {"checkpoint", checkpoint_path}};
}

namespace {

struct SampleData {
    std::vector<double> z;
    std::vector<double> vlm_img;
    std::vector<double> score_targets;  // S_VLM per concept
};

std::vector<double> embedding_input(const Classifier& model, const Tensor& image,
                                    bool multi_layer) {
    ForwardCapture fc = forward_with_activations(model, image);
    std::vector<PooledEmbedding> pooled = pool_all(fc.activations);
    if (multi_layer) return concat_layers(pooled).values;
    return pooled.back().values;
}

}  // namespace

TrainResult train_translator(const Classifier& model, const VlmEncoder& vlm,
                             const std::vector<Tensor>& images,
                             const std::vector<int>& train_split,
                             const std::vector<int>& val_split,
                             const std::vector<ConceptText>& concepts,
                             const std::vector<int>& hidden_dims, const TrainConfig& cfg,
                             int jobs) {
    cfg.validate();
    if (train_split.empty()) throw TrainingError("empty training split");
    if (cfg.use_similarity_loss && concepts.empty())
        throw ConfigError("similarity loss enabled but the concept set is empty");

    // frozen text embeddings, normalized once
    std::vector<Tensor> txt;
    for (const auto& c : concepts) {
        VlmEmbedding e = vlm.embed_text(c);
        txt.push_back(Tensor::vec(e.normalized ? e.values : normalized(e.values)));
    }

    // classifier and VLM are frozen, so per-image features are constants
    std::vector<int> all = train_split;
    all.insert(all.end(), val_split.begin(), val_split.end());
    std::vector<SampleData> cache(images.size());
    parallel_for(all.size(), jobs, [&](std::size_t i) {
        const int idx = all[i];
        SampleData& s = cache[idx];
        s.z = embedding_input(model, images[idx], cfg.multi_layer);
        VlmEmbedding img = vlm.embed_image(images[idx]);
        s.vlm_img = img.values;
        if (cfg.use_similarity_loss) {
            s.score_targets.resize(txt.size());
            for (std::size_t t = 0; t < txt.size(); ++t)
                s.score_targets[t] =
                    vlm_similarity(img, VlmEmbedding{txt[t].data, Modality::text, true});
        }
    });

    const int in_dim = static_cast<int>(cache[all.front()].z.size());
    const int out_dim = vlm.dim();
    std::vector<std::pair<int, int>> dims;
    int prev = in_dim;
    for (int hdim : hidden_dims) {
        dims.emplace_back(prev, hdim);
        prev = hdim;
    }
    dims.emplace_back(prev, out_dim);

    Rng rng(cfg.seed);
    TranslatorNetwork h = TranslatorNetwork::create(dims);
    h.init(rng);
    std::vector<Tensor*> params = h.params();
    std::vector<Tensor> velocity;
    for (Tensor* p : params) velocity.emplace_back(p->shape);
    std::vector<Tensor> grad_accum;
    for (Tensor* p : params) grad_accum.emplace_back(p->shape);

    const double inv_t = concepts.empty() ? 0.0 : 1.0 / static_cast<double>(concepts.size());

    auto eval_losses = [&](const SampleData& s) {
        LossValues lv;
        const std::vector<double> out = h.apply(s.z);
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double d = out[i] - s.vlm_img[i];
            lv.emb += d * d;
        }
        lv.emb /= static_cast<double>(out.size());
        if (cfg.use_similarity_loss) {
            const std::vector<double> on = normalized(out);
            for (std::size_t t = 0; t < txt.size(); ++t) {
                const double d = dot(on, txt[t].data) - s.score_targets[t];
                lv.sim += d * d;
            }
            lv.sim *= inv_t;
            lv.total = lv.emb + cfg.lambda_sim * lv.sim;
        } else {
            lv.total = lv.emb;
        }
        return lv;
    };

    TrainReport report;
    double best_val = std::numeric_limits<double>::infinity();
    TranslatorNetwork best = h;
    int plateau = 0, stale = 0;
    double decay_mult = 1.0;
    double lr = cfg.base_lr;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        if (cfg.warmup_epochs > 0 && epoch <= cfg.warmup_epochs) {
            const double f = cfg.warmup_epochs == 1
                                 ? 1.0
                                 : static_cast<double>(epoch - 1) / (cfg.warmup_epochs - 1);
            lr = (cfg.base_lr + (cfg.warmup_peak_lr - cfg.base_lr) * f) * decay_mult;
        } else {
            const double top = cfg.warmup_epochs > 0 ? cfg.warmup_peak_lr : cfg.base_lr;
            lr = top * decay_mult;
        }

        std::vector<int> order = train_split;
        rng.shuffle(order);

        EpochLosses train_sum;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            for (Tensor& g : grad_accum) std::fill(g.data.begin(), g.data.end(), 0.0);
            for (std::size_t bi = start; bi < end; ++bi) {
                const SampleData& s = cache[order[bi]];
                Tape tape;
                std::vector<Var> pv;
                Var z = tape.constant(Tensor::vec(s.z));
                Var out = h.apply_on_tape(tape, z, &pv);
                Var l_emb = tape.mse_to(out, Tensor::vec(s.vlm_img));
                Var total = l_emb;
                double sim_val = 0.0;
                if (cfg.use_similarity_loss) {
                    Var on = tape.l2_normalize(out);
                    std::vector<Var> sq;
                    sq.reserve(txt.size());
                    for (std::size_t t = 0; t < txt.size(); ++t) {
                        Var s_t = tape.dot(on, tape.constant(txt[t]));
                        sq.push_back(tape.square(tape.sub_const(s_t, s.score_targets[t])));
                    }
                    Var l_sim = tape.scale(tape.add_scalars(sq), inv_t);
                    sim_val = tape.val(l_sim).data[0];
                    total = tape.add(l_emb, tape.scale(l_sim, cfg.lambda_sim));
                }
                const double total_val = tape.val(total).data[0];
                if (!std::isfinite(total_val))
                    throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) +
                                        " (sample " + std::to_string(order[bi]) + ")");
                train_sum.emb += tape.val(l_emb).data[0];
                train_sum.sim += sim_val;
                train_sum.total += total_val;
                tape.backward(total);
                for (std::size_t p = 0; p < params.size(); ++p) {
                    const Tensor g = tape.grad(pv[p]);
                    for (std::size_t k = 0; k < g.data.size(); ++k)
                        grad_accum[p].data[k] += g.data[k];
                }
            }
            const double inv_batch = 1.0 / static_cast<double>(end - start);
            for (std::size_t p = 0; p < params.size(); ++p) {
                Tensor& v = velocity[p];
                Tensor& w = *params[p];
                for (std::size_t k = 0; k < w.data.size(); ++k) {
                    v.data[k] = cfg.momentum * v.data[k] - lr * grad_accum[p].data[k] * inv_batch;
                    w.data[k] += v.data[k];
                }
            }
        }
        const double inv_n = 1.0 / static_cast<double>(train_split.size());
        report.train.push_back({train_sum.emb * inv_n, train_sum.sim * inv_n,
                                train_sum.total * inv_n});

        EpochLosses val_sum;
        for (int idx : val_split) {
            LossValues lv = eval_losses(cache[idx]);
            val_sum.emb += lv.emb;
            val_sum.sim += lv.sim;
            val_sum.total += lv.total;
        }
        const double inv_v = val_split.empty() ? 0.0 : 1.0 / static_cast<double>(val_split.size());
        EpochLosses val{val_sum.emb * inv_v, val_sum.sim * inv_v, val_sum.total * inv_v};
        report.validation.push_back(val);
        if (!std::isfinite(val.total))
            throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));

        report.stopped_epoch = epoch;
        if (val.total < best_val) {
            best_val = val.total;
            best = h;
            report.best_epoch = epoch;
            plateau = 0;
            stale = 0;
        } else {
            ++plateau;
            ++stale;
            if (plateau >= cfg.plateau_epochs) {
                decay_mult *= cfg.lr_decay_factor;
                plateau = 0;
            }
            if (stale >= cfg.early_stop_patience) break;
        }
    }
    report.final_lr = lr;
    return {std::move(best), std::move(report)};
}

}  // namespace ccam

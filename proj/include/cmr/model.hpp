#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmr/errors.hpp"
#include "cmr/tensor.hpp"

namespace cmr {

struct ModelConfig {
    int d_model = 32;
    int heads = 2;
    int encoder_layers = 1;
    int decoder_layers = 1;
    int ff_dim = 64;
    int vocab_size = 0;
    int max_len = 256;
    double dropout_rate = 0.0;
    uint64_t seed = 0;
    bool normalize_embeddings = true;  // l2-normalize pooled utterance embeddings

    void validate() const {
        if (d_model < 1 || heads < 1 || encoder_layers < 1 || decoder_layers < 1 || ff_dim < 1 ||
            vocab_size < 1 || max_len < 1)
            throw UsageError("model config: all dims must be >= 1");
        if (d_model % heads != 0) throw UsageError("model config: d_model must be divisible by heads");
    }
};

template <typename T>
struct Parameters {
    std::vector<std::string> order;
    std::unordered_map<std::string, Tensor<T>> tensors;

    Tensor<T>& at(const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw DataError("unknown parameter: " + name);
        return it->second;
    }
    const Tensor<T>& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw DataError("unknown parameter: " + name);
        return it->second;
    }
    void zero_grad() {
        for (auto& name : order) tensors[name].zero_grad();
    }

    template <typename U>
    Parameters<U> cast() const {
        Parameters<U> out;
        out.order = order;
        for (const auto& name : order) {
            const Tensor<T>& src = at(name);
            Tensor<U> t(src.rows(), src.cols());
            for (size_t i = 0; i < src.data.size(); ++i) t.data[i] = static_cast<U>(src.data[i]);
            t.set_requires_grad();
            out.tensors.emplace(name, std::move(t));
        }
        return out;
    }
};

// Names and shapes of every trainable tensor, in a fixed order. The output
// projection is tied to tok_emb and has no tensor of its own.
inline std::vector<std::pair<std::string, std::vector<int>>> parameter_schema(const ModelConfig& cfg) {
    std::vector<std::pair<std::string, std::vector<int>>> schema;
    int d = cfg.d_model, f = cfg.ff_dim;
    schema.push_back({"tok_emb", {cfg.vocab_size, d}});
    auto add_ln = [&](const std::string& p) {
        schema.push_back({p + ".g", {1, d}});
        schema.push_back({p + ".b", {1, d}});
    };
    auto add_attn = [&](const std::string& p) {
        schema.push_back({p + ".wq", {d, d}});
        schema.push_back({p + ".wk", {d, d}});
        schema.push_back({p + ".wv", {d, d}});
        schema.push_back({p + ".wo", {d, d}});
    };
    auto add_ff = [&](const std::string& p) {
        schema.push_back({p + ".w1", {d, f}});
        schema.push_back({p + ".b1", {1, f}});
        schema.push_back({p + ".w2", {f, d}});
        schema.push_back({p + ".b2", {1, d}});
    };
    for (int l = 0; l < cfg.encoder_layers; ++l) {
        std::string p = "enc." + std::to_string(l);
        add_ln(p + ".ln1");
        add_attn(p + ".attn");
        add_ln(p + ".ln2");
        add_ff(p + ".ff");
    }
    add_ln("enc.final_ln");
    for (int l = 0; l < cfg.decoder_layers; ++l) {
        std::string p = "dec." + std::to_string(l);
        add_ln(p + ".ln1");
        add_attn(p + ".self_attn");
        add_ln(p + ".ln2");
        add_attn(p + ".cross_attn");
        add_ln(p + ".ln3");
        add_ff(p + ".ff");
    }
    add_ln("dec.final_ln");
    return schema;
}

inline bool is_encoder_side(const std::string& name) {
    return name == "tok_emb" || name.rfind("enc.", 0) == 0;
}

template <typename T>
Parameters<T> init_parameters(const ModelConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    Parameters<T> params;
    for (const auto& [name, shape] : parameter_schema(cfg)) {
        Tensor<T> t;
        bool is_gain = name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0;
        bool is_bias = (name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0) ||
                       (name.size() > 3 && (name.compare(name.size() - 3, 3, ".b1") == 0 ||
                                            name.compare(name.size() - 3, 3, ".b2") == 0));
        if (is_gain) {
            t = Tensor<T>(shape[0], shape[1], T(1));
        } else if (is_bias) {
            t = Tensor<T>(shape[0], shape[1], T(0));
        } else {
            int fan_in = (name == "tok_emb") ? shape[1] : shape[0];
            T bound = T(1) / std::sqrt(static_cast<T>(fan_in));
            t = uniform_tensor<T>(shape[0], shape[1], bound, rng);
        }
        t.set_requires_grad();
        params.tensors.emplace(name, std::move(t));
        params.order.push_back(name);
    }
    return params;
}

template <typename T>
int64_t count_parameters(const Parameters<T>& params) {
    int64_t n = 0;
    for (const auto& name : params.order) n += params.at(name).size();
    return n;
}

namespace detail {

template <typename T>
Tensor<T> sinusoidal_positions(int len, int d) {
    Tensor<T> pe(len, d);
    for (int pos = 0; pos < len; ++pos)
        for (int i = 0; i < d; ++i) {
            double angle = pos / std::pow(10000.0, 2.0 * (i / 2) / d);
            pe.at(pos, i) = static_cast<T>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
        }
    return pe;
}

// Additive attention mask; blocked entries get a large negative value that
// underflows to zero weight after max-subtracted softmax.
template <typename T>
Tensor<T> attention_mask(const std::vector<bool>& query_live, const std::vector<bool>& key_live, bool causal) {
    int q = static_cast<int>(query_live.size()), k = static_cast<int>(key_live.size());
    Tensor<T> m(q, k);
    for (int i = 0; i < q; ++i)
        for (int j = 0; j < k; ++j) {
            bool blocked = !key_live[j] || (causal && j > i);
            m.at(i, j) = blocked ? T(-1e9) : T(0);
        }
    return m;
}

template <typename T>
int multi_head_attention(Tape<T>& tape, int queries, int keys, const ModelConfig& cfg, Parameters<T>& params,
                         const std::string& prefix, int mask_node) {
    int d = cfg.d_model, dh = d / cfg.heads;
    int q = tape.matmul(queries, tape.leaf(params.at(prefix + ".wq")));
    int k = tape.matmul(keys, tape.leaf(params.at(prefix + ".wk")));
    int v = tape.matmul(keys, tape.leaf(params.at(prefix + ".wv")));
    std::vector<int> heads_out;
    T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    for (int h = 0; h < cfg.heads; ++h) {
        int qh = tape.slice_cols(q, h * dh, dh);
        int kh = tape.slice_cols(k, h * dh, dh);
        int vh = tape.slice_cols(v, h * dh, dh);
        int scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt);
        scores = tape.add(scores, mask_node);
        int attn = tape.softmax_rows(scores);
        heads_out.push_back(tape.matmul(attn, vh));
    }
    int cat = cfg.heads == 1 ? heads_out[0] : tape.concat_cols(heads_out);
    return tape.matmul(cat, tape.leaf(params.at(prefix + ".wo")));
}

template <typename T>
int feed_forward(Tape<T>& tape, int x, Parameters<T>& params, const std::string& prefix) {
    int h = tape.relu(tape.add(tape.matmul(x, tape.leaf(params.at(prefix + ".w1"))), tape.leaf(params.at(prefix + ".b1"))));
    return tape.add(tape.matmul(h, tape.leaf(params.at(prefix + ".w2"))), tape.leaf(params.at(prefix + ".b2")));
}

template <typename T>
int layer_norm_p(Tape<T>& tape, int x, Parameters<T>& params, const std::string& prefix) {
    return tape.layer_norm(x, tape.leaf(params.at(prefix + ".g")), tape.leaf(params.at(prefix + ".b")));
}

template <typename T>
std::vector<bool> live_positions(const std::vector<int>& ids) {
    std::vector<bool> live(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) live[i] = ids[i] != 0;  // pad id 0
    return live;
}

}  // namespace detail

// Pre-norm transformer encoder over one token-id sequence -> [len, d_model].
// Pad positions (id 0) are masked out of attention.
template <typename T>
int encode(Tape<T>& tape, const std::vector<int>& ids, const ModelConfig& cfg, Parameters<T>& params,
           std::mt19937_64* dropout_rng = nullptr) {
    if (ids.empty()) throw ShapeError("encode: empty id sequence");
    if (static_cast<int>(ids.size()) > cfg.max_len)
        throw UsageError("sequence length " + std::to_string(ids.size()) + " exceeds max_len " +
                         std::to_string(cfg.max_len));
    int len = static_cast<int>(ids.size());
    auto live = detail::live_positions<T>(ids);
    int mask = tape.constant(detail::attention_mask<T>(live, live, false));
    int x = tape.add(tape.embedding(tape.leaf(params.at("tok_emb")), ids),
                     tape.constant(detail::sinusoidal_positions<T>(len, cfg.d_model)));
    auto maybe_dropout = [&](int n) {
        return (cfg.dropout_rate > 0 && dropout_rng) ? tape.dropout(n, static_cast<T>(cfg.dropout_rate), *dropout_rng) : n;
    };
    for (int l = 0; l < cfg.encoder_layers; ++l) {
        std::string p = "enc." + std::to_string(l);
        int n1 = detail::layer_norm_p(tape, x, params, p + ".ln1");
        int a = detail::multi_head_attention(tape, n1, n1, cfg, params, p + ".attn", mask);
        x = tape.add(x, maybe_dropout(a));
        int f = detail::feed_forward(tape, detail::layer_norm_p(tape, x, params, p + ".ln2"), params, p + ".ff");
        x = tape.add(x, maybe_dropout(f));
    }
    return detail::layer_norm_p(tape, x, params, "enc.final_ln");
}

// Mean-pool encoder states over non-pad positions, then l2-normalize -> [1, d_model].
template <typename T>
int embed_utterance(Tape<T>& tape, const std::vector<int>& ids, const ModelConfig& cfg, Parameters<T>& params,
                    std::mt19937_64* dropout_rng = nullptr) {
    int states = encode(tape, ids, cfg, params, dropout_rng);
    std::vector<int> keep;
    for (size_t i = 0; i < ids.size(); ++i)
        if (ids[i] != 0) keep.push_back(static_cast<int>(i));
    if (keep.empty()) throw ShapeError("embed_utterance: all positions are pad");
    int pooled = tape.mean_rows(states, keep);
    return cfg.normalize_embeddings ? tape.l2_normalize(pooled) : pooled;
}

// Decoder with causal self-attention and cross-attention over the encoded
// context; returns logits [prefix_len, vocab] under teacher forcing.
// The output projection is the transposed token embedding (weight tying).
template <typename T>
int generation_forward(Tape<T>& tape, const std::vector<int>& context_ids, const std::vector<int>& prefix_ids,
                       const ModelConfig& cfg, Parameters<T>& params, std::mt19937_64* dropout_rng = nullptr) {
    if (prefix_ids.empty()) throw ShapeError("generation_forward: empty prefix");
    if (static_cast<int>(prefix_ids.size()) > cfg.max_len)
        throw UsageError("prefix length " + std::to_string(prefix_ids.size()) + " exceeds max_len " +
                         std::to_string(cfg.max_len));
    int enc_states = encode(tape, context_ids, cfg, params, dropout_rng);
    int plen = static_cast<int>(prefix_ids.size());
    auto dec_live = detail::live_positions<T>(prefix_ids);
    auto enc_live = detail::live_positions<T>(context_ids);
    int self_mask = tape.constant(detail::attention_mask<T>(dec_live, dec_live, true));
    int cross_mask = tape.constant(detail::attention_mask<T>(dec_live, enc_live, false));
    auto maybe_dropout = [&](int n) {
        return (cfg.dropout_rate > 0 && dropout_rng) ? tape.dropout(n, static_cast<T>(cfg.dropout_rate), *dropout_rng) : n;
    };
    int x = tape.add(tape.embedding(tape.leaf(params.at("tok_emb")), prefix_ids),
                     tape.constant(detail::sinusoidal_positions<T>(plen, cfg.d_model)));
    for (int l = 0; l < cfg.decoder_layers; ++l) {
        std::string p = "dec." + std::to_string(l);
        int n1 = detail::layer_norm_p(tape, x, params, p + ".ln1");
        x = tape.add(x, maybe_dropout(detail::multi_head_attention(tape, n1, n1, cfg, params, p + ".self_attn", self_mask)));
        int n2 = detail::layer_norm_p(tape, x, params, p + ".ln2");
        x = tape.add(x, maybe_dropout(detail::multi_head_attention(tape, n2, enc_states, cfg, params, p + ".cross_attn", cross_mask)));
        int n3 = detail::layer_norm_p(tape, x, params, p + ".ln3");
        x = tape.add(x, maybe_dropout(detail::feed_forward(tape, n3, params, p + ".ff")));
    }
    x = detail::layer_norm_p(tape, x, params, "dec.final_ln");
    return tape.matmul(x, tape.transpose(tape.leaf(params.at("tok_emb"))));
}

}  // namespace cmr

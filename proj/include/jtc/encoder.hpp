#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "jtc/compression.hpp"
#include "jtc/rng.hpp"
#include "jtc/tensor.hpp"

namespace jtc {

// Toy transformer student: token embedding -> compression module -> pre-norm
// attention blocks (RoPE, bidirectional) -> mean pooling -> projection ->
// L2 normalization.

struct EncoderConfig {
    std::size_t vocab_size = 256;
    std::size_t d_model = 32;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t mlp_hidden = 64;
    std::size_t output_dim = 64;
    std::size_t max_seq_len = 2048;
    std::size_t compress_hidden = 0;  // 0 -> 2 * d_model

    std::size_t compression_hidden() const {
        return compress_hidden ? compress_hidden : 2 * d_model;
    }

    void validate() const {
        if (d_model % n_heads != 0)
            throw std::invalid_argument("EncoderConfig: d_model must divide by n_heads");
        if ((d_model / n_heads) % 2 != 0)
            throw std::invalid_argument("EncoderConfig: head dim must be even for RoPE");
        if (output_dim < 1) throw std::invalid_argument("EncoderConfig: output_dim >= 1");
    }
};

struct TokenSequence {
    std::vector<std::size_t> ids;

    std::size_t length() const { return ids.size(); }
};

enum class TokenizerMode { byte, whitespace };

// Deterministic stand-in tokenizer. Byte mode maps each byte to an id;
// whitespace mode FNV-hashes each word.
inline TokenSequence toy_tokenize(const std::string& text, std::size_t vocab_size,
                                  TokenizerMode mode = TokenizerMode::byte) {
    if (text.empty()) throw std::invalid_argument("toy_tokenize: empty text");
    if (vocab_size == 0) throw std::invalid_argument("toy_tokenize: vocab_size >= 1");
    TokenSequence seq;
    if (mode == TokenizerMode::byte) {
        for (unsigned char c : text) seq.ids.push_back(c % vocab_size);
        return seq;
    }
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i >= text.size()) break;
        std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) {
            h ^= static_cast<unsigned char>(text[i]);
            h *= 1099511628211ULL;
            ++i;
        }
        seq.ids.push_back(h % vocab_size);
    }
    if (seq.ids.empty()) throw std::invalid_argument("toy_tokenize: no tokens");
    return seq;
}

inline Tensor mean_pool(const Tensor& h, std::size_t valid_len) {
    return mean_rows(h, valid_len);
}

struct AttentionBlockParams {
    Tensor wq, wk, wv, wo;       // [d x d]
    Tensor attn_gain, ffn_gain;  // [d] RMSNorm gains
    SwigluParams ffn;
};

struct EncoderModel {
    EncoderConfig config;
    Tensor embedding;  // [vocab x d]
    SwigluParams compression;
    std::vector<AttentionBlockParams> blocks;
    Tensor projection;  // [d x output_dim]

    static EncoderModel init(const EncoderConfig& cfg, Rng& rng) {
        cfg.validate();
        EncoderModel m;
        m.config = cfg;
        const double b = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
        m.embedding = Tensor::uniform({cfg.vocab_size, cfg.d_model}, -b, b, rng, true);
        m.compression = SwigluParams::init(cfg.d_model, cfg.compression_hidden(), rng);
        for (std::size_t l = 0; l < cfg.n_layers; ++l) {
            AttentionBlockParams blk{
                Tensor::uniform({cfg.d_model, cfg.d_model}, -b, b, rng, true),
                Tensor::uniform({cfg.d_model, cfg.d_model}, -b, b, rng, true),
                Tensor::uniform({cfg.d_model, cfg.d_model}, -b, b, rng, true),
                Tensor::uniform({cfg.d_model, cfg.d_model}, -b, b, rng, true),
                Tensor::full({cfg.d_model}, 1.0, true),
                Tensor::full({cfg.d_model}, 1.0, true),
                SwigluParams::init(cfg.d_model, cfg.mlp_hidden, rng),
            };
            m.blocks.push_back(std::move(blk));
        }
        m.projection = Tensor::uniform({cfg.d_model, cfg.output_dim}, -b, b, rng, true);
        return m;
    }

    // Stable name -> tensor view of every trainable parameter.
    std::map<std::string, Tensor> parameters() const {
        std::map<std::string, Tensor> p;
        p["embedding"] = embedding;
        p["compress.gate"] = compression.gate;
        p["compress.up"] = compression.up;
        p["compress.down"] = compression.down;
        for (std::size_t l = 0; l < blocks.size(); ++l) {
            const std::string pre = "block" + std::to_string(l) + ".";
            p[pre + "wq"] = blocks[l].wq;
            p[pre + "wk"] = blocks[l].wk;
            p[pre + "wv"] = blocks[l].wv;
            p[pre + "wo"] = blocks[l].wo;
            p[pre + "attn_gain"] = blocks[l].attn_gain;
            p[pre + "ffn_gain"] = blocks[l].ffn_gain;
            p[pre + "ffn.gate"] = blocks[l].ffn.gate;
            p[pre + "ffn.up"] = blocks[l].ffn.up;
            p[pre + "ffn.down"] = blocks[l].ffn.down;
        }
        p["projection"] = projection;
        return p;
    }
};

namespace detail {

inline Tensor multi_head_attention(const Tensor& x, const AttentionBlockParams& blk,
                                   std::size_t n_heads) {
    const std::size_t d = x.cols();
    const std::size_t dh = d / n_heads;
    Tensor q = matmul(x, blk.wq);
    Tensor k = matmul(x, blk.wk);
    Tensor v = matmul(x, blk.wv);
    std::vector<Tensor> heads;
    heads.reserve(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
        Tensor qh = rope_rows(slice_cols(q, h * dh, dh));
        Tensor kh = rope_rows(slice_cols(k, h * dh, dh));
        Tensor vh = slice_cols(v, h * dh, dh);
        Tensor scores = scale(matmul(qh, transpose(kh)),
                              1.0 / std::sqrt(static_cast<double>(dh)));
        heads.push_back(matmul(softmax_rows(scores), vh));
    }
    return matmul(concat_cols(heads), blk.wo);
}

inline Tensor encoder_block(const Tensor& x, const AttentionBlockParams& blk,
                            std::size_t n_heads) {
    Tensor h = add(x, multi_head_attention(mul_rowvec(rms_norm_rows(x), blk.attn_gain),
                                           blk, n_heads));
    return add(h, swiglu_transform(mul_rowvec(rms_norm_rows(h), blk.ffn_gain), blk.ffn));
}

}  // namespace detail

// Encode one sequence to a unit-norm embedding [output_dim]. In dynamic mode
// the caller resolves the per-batch ratio and passes it as ratio_override.
inline Tensor encode_one(const TokenSequence& seq, const EncoderModel& model,
                         const CompressionPolicy& policy,
                         std::optional<double> ratio_override = std::nullopt) {
    if (seq.length() < 1) throw std::invalid_argument("encode_one: empty sequence");
    if (seq.length() > model.config.max_seq_len)
        throw std::invalid_argument("encode_one: sequence exceeds max_seq_len");
    Tensor h = embedding_lookup(model.embedding, seq.ids);
    h = compress(h, policy, model.compression, ratio_override);
    for (const auto& blk : model.blocks)
        h = detail::encoder_block(h, blk, model.config.n_heads);
    Tensor pooled = mean_pool(h, h.rows());
    Tensor row = detail::make_op({1, pooled.numel()}, pooled.data(), {pooled},
                                 [p = pooled.node()](detail::Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
    });
    Tensor projected = matmul(row, model.projection);
    return l2_normalize(detail::make_op({projected.cols()}, projected.data(), {projected},
                                        [p = projected.node()](detail::Node& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
    }));
}

// Encode a batch to [N x output_dim]. Dynamic mode samples one ratio for the
// whole batch from rng.
inline Tensor encode(const std::vector<TokenSequence>& batch, const EncoderModel& model,
                     const CompressionPolicy& policy, Rng& rng) {
    if (batch.empty()) throw std::invalid_argument("encode: empty batch");
    std::optional<double> ratio_override;
    if (policy.mode == CompressionMode::dynamic) ratio_override = sample_ratio(rng);
    std::vector<Tensor> rows;
    rows.reserve(batch.size());
    for (const auto& seq : batch)
        rows.push_back(encode_one(seq, model, policy, ratio_override));
    return stack_rows(rows);
}

}  // namespace jtc

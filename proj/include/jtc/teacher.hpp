#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "jtc/rng.hpp"
#include "jtc/tensor.hpp"

namespace jtc {

// Fused teacher targets: truncate one teacher's embedding (MRL prefix), fold
// the other's prefix into equal segments summed elementwise, L2-normalize each
// half, concatenate, and L2-normalize the whole.

struct TeacherFusionConfig {
    std::size_t qwen_truncate_dim = 16;
    std::size_t qzhou_take_dim = 24;
    std::size_t qzhou_segment_dim = 8;

    std::size_t fused_dim() const { return qwen_truncate_dim + qzhou_segment_dim; }

    void validate() const {
        if (qzhou_segment_dim == 0 || qzhou_take_dim % qzhou_segment_dim != 0)
            throw std::invalid_argument(
                "TeacherFusionConfig: take dim must be a multiple of segment dim");
    }
};

struct TeacherEmbeddingPair {
    std::vector<double> e_qwen_raw;
    std::vector<double> e_qzhou_raw;
    Tensor e_fused;  // unit norm, [fused_dim]
};

inline Tensor mrl_truncate(const Tensor& e, std::size_t k) {
    if (e.rank() != 1) throw std::invalid_argument("mrl_truncate: rank-1 expected");
    if (k == 0 || k > e.numel())
        throw std::invalid_argument("mrl_truncate: k out of range");
    std::vector<double> out(e.data().begin(), e.data().begin() + static_cast<long>(k));
    auto pe = e.node();
    return detail::make_op({k}, std::move(out), {e}, [pe, k](detail::Node& n) {
        for (std::size_t i = 0; i < k; ++i) pe->grad[i] += n.grad[i];
    });
}

inline Tensor fold_sum(const Tensor& e, std::size_t take, std::size_t seg) {
    if (e.rank() != 1) throw std::invalid_argument("fold_sum: rank-1 expected");
    if (take > e.numel()) throw std::invalid_argument("fold_sum: take out of range");
    if (seg == 0 || take % seg != 0)
        throw std::invalid_argument("fold_sum: take must be a multiple of seg");
    const std::size_t segments = take / seg;
    std::vector<double> out(seg, 0.0);
    for (std::size_t s = 0; s < segments; ++s)
        for (std::size_t i = 0; i < seg; ++i) out[i] += e.at(s * seg + i);
    auto pe = e.node();
    return detail::make_op({seg}, std::move(out), {e}, [pe, segments, seg](detail::Node& n) {
        for (std::size_t s = 0; s < segments; ++s)
            for (std::size_t i = 0; i < seg; ++i) pe->grad[s * seg + i] += n.grad[i];
    });
}

// E_t = Norm( Norm(truncate(e_qwen)) | Norm(fold_sum(e_qzhou)) )
inline Tensor fuse(const Tensor& e_qwen, const Tensor& e_qzhou,
                   const TeacherFusionConfig& cfg) {
    cfg.validate();
    Tensor half_a = l2_normalize(mrl_truncate(e_qwen, cfg.qwen_truncate_dim));
    Tensor half_b =
        l2_normalize(fold_sum(e_qzhou, cfg.qzhou_take_dim, cfg.qzhou_segment_dim));
    std::vector<double> cat;
    cat.reserve(cfg.fused_dim());
    cat.insert(cat.end(), half_a.data().begin(), half_a.data().end());
    cat.insert(cat.end(), half_b.data().begin(), half_b.data().end());
    auto pa = half_a.node();
    auto pb = half_b.node();
    const std::size_t ka = half_a.numel();
    Tensor joined = detail::make_op({cfg.fused_dim()}, std::move(cat), {half_a, half_b},
                                    [pa, pb, ka](detail::Node& n) {
        for (std::size_t i = 0; i < ka; ++i) pa->grad[i] += n.grad[i];
        for (std::size_t i = ka; i < n.grad.size(); ++i) pb->grad[i - ka] += n.grad[i];
    });
    return l2_normalize(joined);
}

// Deterministic stand-in for the real teachers: a bag-of-token-counts vector
// pushed through two fixed seeded random projections, then fused.
inline TeacherEmbeddingPair synthetic_teacher(const std::vector<std::size_t>& token_ids,
                                              std::size_t vocab_size, std::uint64_t seed,
                                              const TeacherFusionConfig& cfg,
                                              std::size_t qwen_raw_dim = 0,
                                              std::size_t qzhou_raw_dim = 0) {
    cfg.validate();
    if (qwen_raw_dim == 0) qwen_raw_dim = cfg.qwen_truncate_dim + cfg.qwen_truncate_dim / 2;
    if (qzhou_raw_dim == 0) qzhou_raw_dim = cfg.qzhou_take_dim + cfg.qzhou_segment_dim;

    std::vector<double> counts(vocab_size, 0.0);
    for (auto id : token_ids) {
        if (id >= vocab_size)
            throw std::invalid_argument("synthetic_teacher: token id out of range");
        counts[id] += 1.0;
    }
    double total = static_cast<double>(token_ids.size());
    if (total > 0.0)
        for (auto& c : counts) c /= total;

    Rng proj_rng(seed);  // projection matrices depend only on the seed
    auto project = [&](std::size_t out_dim) {
        std::vector<double> out(out_dim, 0.0);
        for (std::size_t j = 0; j < out_dim; ++j) {
            double s = 0.1 * proj_rng.normal();  // bias keeps rows from vanishing
            for (std::size_t v = 0; v < vocab_size; ++v)
                s += proj_rng.normal() * counts[v];
            out[j] = s;
        }
        return out;
    };

    TeacherEmbeddingPair pair;
    pair.e_qwen_raw = project(qwen_raw_dim);
    pair.e_qzhou_raw = project(qzhou_raw_dim);
    pair.e_fused = fuse(Tensor({qwen_raw_dim}, pair.e_qwen_raw),
                        Tensor({qzhou_raw_dim}, pair.e_qzhou_raw), cfg);
    return pair;
}

}  // namespace jtc

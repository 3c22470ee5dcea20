#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "jtc/tensor.hpp"

namespace jtc {

// Training objectives: cosine distillation loss, gram-matrix similarity loss,
// InfoNCE-style contrastive loss with hard and in-batch negatives, softmax KL
// soft distillation, and the stage-3 / stage-4 weighted combinations.

struct LossWeights {
    double w_cosine = 0.0;
    double w_similarity = 0.0;
    double w_cl = 0.0;
    double w_soft = 0.0;

    static LossWeights stage1() { return {10.0, 0.0, 0.0, 0.0}; }
    static LossWeights stage2() { return {10.0, 0.0, 0.0, 0.0}; }
    static LossWeights stage3() { return {10.0, 100.0, 0.0, 0.0}; }
    static LossWeights stage4() { return {10.0, 0.0, 1.0, 16.0}; }
};

struct LossBreakdown {
    Tensor total;
    std::map<std::string, double> components;
};

// Queries/positives are [N x d]; hard negatives are flattened [N*K x d] with
// instance i's negatives at rows i*K .. i*K+K-1. Teacher-side fields mirror
// the student layout for the soft loss.
struct ContrastiveBatch {
    Tensor queries;
    Tensor positives;
    Tensor hard_negatives;  // [N*K x d], K may be 0 (shape {0*K... } -> pass [0 x d])
    std::size_t num_hard_negatives = 0;
    double temperature = 0.3;
    double soft_temperature = 0.1;

    std::size_t batch_size() const { return queries.rows(); }

    void validate() const {
        const std::size_t n = queries.rows();
        if (n < 1) throw std::invalid_argument("ContrastiveBatch: N >= 1");
        if (positives.rows() != n)
            throw std::invalid_argument("ContrastiveBatch: positives row mismatch");
        if (num_hard_negatives > 0 && hard_negatives.rows() != n * num_hard_negatives)
            throw std::invalid_argument("ContrastiveBatch: hard negative row mismatch");
        if (!(temperature > 0.0) || !(soft_temperature > 0.0))
            throw std::invalid_argument("ContrastiveBatch: temperatures must be positive");
    }
};

// Mean over the batch of (1 - e_s,i . e_t,i). Rows are expected unit-norm.
inline Tensor cosine_loss(const Tensor& e_s, const Tensor& e_t) {
    detail::check_same_shape(e_s, e_t, "cosine_loss");
    const auto n = static_cast<double>(e_s.rows());
    Tensor dots = sum(mul(e_s, e_t));
    return add_scalar(scale(dots, -1.0 / n), 1.0);
}

// MSE over all N^2 entries of the student vs teacher gram matrices. Student
// and teacher embedding dims may differ.
inline Tensor similarity_loss(const Tensor& be_s, const Tensor& be_t) {
    if (be_s.rows() != be_t.rows())
        throw std::invalid_argument("similarity_loss: batch size mismatch");
    if (be_s.rows() < 2)
        throw std::invalid_argument("similarity_loss: batch must have N >= 2");
    const auto n = static_cast<double>(be_s.rows());
    Tensor diff = sub(matmul(be_s, transpose(be_s)), matmul(be_t, transpose(be_t)));
    return scale(sum(mul(diff, diff)), 1.0 / (n * n));
}

namespace detail {

// Document matrix in the canonical order: N positives then N*K hard
// negatives. Column j < N is instance j's positive; column N + i*K + k is
// instance i's k-th hard negative.
inline Tensor document_matrix(const ContrastiveBatch& b) {
    if (b.num_hard_negatives == 0) return b.positives;
    std::vector<double> data;
    data.reserve((b.positives.numel() + b.hard_negatives.numel()));
    data.insert(data.end(), b.positives.data().begin(), b.positives.data().end());
    data.insert(data.end(), b.hard_negatives.data().begin(), b.hard_negatives.data().end());
    auto pp = b.positives.node();
    auto ph = b.hard_negatives.node();
    const std::size_t np = b.positives.numel();
    return detail::make_op({b.positives.rows() + b.hard_negatives.rows(), b.positives.cols()},
                           std::move(data), {b.positives, b.hard_negatives},
                           [pp, ph, np](detail::Node& n) {
        for (std::size_t i = 0; i < np; ++i) pp->grad[i] += n.grad[i];
        for (std::size_t i = np; i < n.grad.size(); ++i) ph->grad[i - np] += n.grad[i];
    });
}

}  // namespace detail

// Eq.-4 style InfoNCE: the normalizer for query i aggregates its positive,
// its K hard negatives, and all (N-1)(1+K) documents of the other instances.
// With unit-norm rows the score matrix is plain cosine similarity.
inline Tensor contrastive_loss(const ContrastiveBatch& batch) {
    batch.validate();
    const std::size_t n = batch.batch_size();
    const std::size_t k = batch.num_hard_negatives;
    Tensor docs = detail::document_matrix(batch);          // [N(1+K) x d]
    Tensor scores = scale(matmul(batch.queries, transpose(docs)), 1.0 / batch.temperature);
    // Z_i spans every document: own positive + own hard negatives + others'.
    Tensor log_z = logsumexp_rows(scores);                 // [N]
    std::vector<std::size_t> pos_idx(n);
    for (std::size_t i = 0; i < n; ++i) pos_idx[i] = i;
    Tensor pos_scores = pick_cols(scores, pos_idx);        // [N]
    (void)k;
    return scale(sum(sub(log_z, pos_scores)), 1.0 / static_cast<double>(n));
}

// KL( softmax(scores_s / alpha) || softmax(scores_t / alpha) ); the student
// distribution is the left argument. Gradient flows through scores_s only if
// scores_t is a constant tensor.
inline Tensor soft_distill_loss(const Tensor& scores_s, const Tensor& scores_t,
                                double alpha) {
    detail::check_same_shape(scores_s, scores_t, "soft_distill_loss");
    if (!(alpha > 0.0)) throw std::invalid_argument("soft_distill_loss: alpha > 0");
    Tensor s = scale(scores_s, 1.0 / alpha);
    Tensor t = scale(scores_t, 1.0 / alpha);
    // log softmax via logsumexp keeps the KL stable for skewed scores
    const std::size_t m = s.rows();
    Tensor log_p = sub_colvec(s, logsumexp_rows(s));
    Tensor log_q = sub_colvec(t, logsumexp_rows(t));
    Tensor p = exp(log_p);
    Tensor kl_terms = mul(p, sub(log_p, log_q));
    return scale(sum(kl_terms), 1.0 / static_cast<double>(m));
}

// Stage 3: w_cosine * L_cosine + w_similarity * L_similarity.
inline LossBreakdown stage3_loss(const Tensor& e_s, const Tensor& e_t, const Tensor& be_s,
                                 const Tensor& be_t,
                                 const LossWeights& w = LossWeights::stage3()) {
    Tensor cos = cosine_loss(e_s, e_t);
    Tensor sim = similarity_loss(be_s, be_t);
    LossBreakdown out;
    out.components["cosine"] = cos.item();
    out.components["similarity"] = sim.item();
    out.total = add(scale(cos, w.w_cosine), scale(sim, w.w_similarity));
    return out;
}

// Stage 4: w_cl * L_cl + w_soft * L_soft + w_cosine * L_cosine. teacher_scores
// holds one row per query over the same document order as the student scores.
inline LossBreakdown stage4_loss(const ContrastiveBatch& batch,
                                 const Tensor& teacher_scores, const Tensor& e_s,
                                 const Tensor& e_t,
                                 const LossWeights& w = LossWeights::stage4()) {
    batch.validate();
    Tensor cl = contrastive_loss(batch);
    Tensor docs = detail::document_matrix(batch);
    Tensor student_scores = matmul(batch.queries, transpose(docs));
    detail::check_same_shape(student_scores, teacher_scores, "stage4_loss scores");
    Tensor soft = soft_distill_loss(student_scores, teacher_scores, batch.soft_temperature);
    Tensor cos = cosine_loss(e_s, e_t);
    LossBreakdown out;
    out.components["contrastive"] = cl.item();
    out.components["soft"] = soft.item();
    out.components["cosine"] = cos.item();
    out.total = add(add(scale(cl, w.w_cl), scale(soft, w.w_soft)), scale(cos, w.w_cosine));
    return out;
}

}  // namespace jtc

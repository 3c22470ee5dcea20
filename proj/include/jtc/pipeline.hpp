#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "jtc/compression.hpp"
#include "jtc/encoder.hpp"
#include "jtc/io.hpp"
#include "jtc/losses.hpp"
#include "jtc/optim.hpp"
#include "jtc/rng.hpp"
#include "jtc/teacher.hpp"
#include "jtc/tensor.hpp"

namespace jtc {

// Four-stage training: (1) plain distillation, (2) distillation with fixed
// compression, (3) distillation with dynamic compression and the similarity
// loss, (4) contrastive learning on (query, positive, hard negatives) tuples.

struct StageConfig {
    int stage_id = 1;
    double learning_rate = 2e-3;
    double warmup_ratio = 0.005;
    std::size_t steps = 1000;
    std::size_t micro_batch = 4;
    std::size_t grad_accum = 4;
    CompressionPolicy compression;
    LossWeights loss_weights;
    std::uint64_t seed = 42;
    std::size_t num_hard_negatives = 3;  // stage 4 only
    double temperature = 0.3;
    double soft_temperature = 0.1;
    TokenizerMode tokenizer = TokenizerMode::whitespace;

    static StageConfig defaults(int stage) {
        StageConfig c;
        c.stage_id = stage;
        switch (stage) {
            case 1:
                c.compression.mode = CompressionMode::off;
                c.loss_weights = LossWeights::stage1();
                c.steps = 1000;
                c.learning_rate = 5e-3;
                break;
            case 2:
                c.compression.mode = CompressionMode::fixed;
                c.compression.ratio = 0.33;
                c.loss_weights = LossWeights::stage2();
                c.steps = 1000;
                c.learning_rate = 1.5e-3;
                break;
            case 3:
                c.compression.mode = CompressionMode::dynamic;
                c.loss_weights = LossWeights::stage3();
                c.steps = 400;
                c.learning_rate = 1.5e-3;
                c.grad_accum = 8;  // stage 3 doubles the effective batch
                break;
            case 4:
                c.compression.mode = CompressionMode::dynamic;
                c.loss_weights = LossWeights::stage4();
                c.steps = 600;
                c.learning_rate = 5e-4;
                break;
            default:
                throw std::invalid_argument("StageConfig: stage must be 1..4");
        }
        return c;
    }
};

using TeacherFn = std::function<Tensor(const std::string& text)>;

// Synthetic teacher with per-text caching; embeds arbitrary text.
class SyntheticTeacherSource {
public:
    SyntheticTeacherSource(TeacherFusionConfig cfg, std::size_t vocab_size,
                           std::uint64_t seed,
                           TokenizerMode mode = TokenizerMode::whitespace)
        : cfg_(cfg), vocab_(vocab_size), seed_(seed), mode_(mode) {}

    Tensor operator()(const std::string& text) {
        auto it = cache_.find(text);
        if (it != cache_.end()) return it->second;
        NoGradGuard ng;
        const auto seq = toy_tokenize(text, vocab_, mode_);
        Tensor fused = synthetic_teacher(seq.ids, vocab_, seed_, cfg_).e_fused;
        cache_.emplace(text, fused);
        return fused;
    }

    const TeacherFusionConfig& fusion_config() const { return cfg_; }

private:
    TeacherFusionConfig cfg_;
    std::size_t vocab_;
    std::uint64_t seed_;
    TokenizerMode mode_;
    std::unordered_map<std::string, Tensor> cache_;
};

// Teacher embeddings joined from a precomputed file, keyed by corpus text.
inline TeacherFn teacher_from_file(const std::string& path,
                                   const std::vector<CorpusRecord>& corpus,
                                   const TeacherFusionConfig& cfg) {
    auto records = load_teacher_file(path);
    std::map<std::string, Tensor> by_id;
    for (auto& r : records) {
        NoGradGuard ng;
        by_id.emplace(r.id, fuse(Tensor({r.e_qwen.size()}, r.e_qwen),
                                 Tensor({r.e_qzhou.size()}, r.e_qzhou), cfg));
    }
    auto by_text = std::make_shared<std::unordered_map<std::string, Tensor>>();
    for (const auto& rec : corpus) {
        auto it = by_id.find(rec.id);
        if (it == by_id.end())
            throw std::runtime_error("teacher_from_file: no teacher record for id " + rec.id);
        by_text->emplace(rec.text, it->second);
    }
    return [by_text](const std::string& text) {
        auto it = by_text->find(text);
        if (it == by_text->end())
            throw std::runtime_error("teacher_from_file: no teacher embedding for text");
        return it->second;
    };
}

// One optimizer step from a set of accumulated micro-batch losses. Gradients
// are scaled by 1/accum so the result matches a single combined batch of
// mean-reduced losses.
inline void grad_accumulate(const std::vector<Tensor>& micro_losses, Adam& optimizer,
                            double lr) {
    if (micro_losses.empty()) throw std::invalid_argument("grad_accumulate: no losses");
    const double inv = 1.0 / static_cast<double>(micro_losses.size());
    for (const auto& loss : micro_losses) {
        if (!std::isfinite(loss.item()))
            throw std::runtime_error("grad_accumulate: non-finite micro-batch loss");
        scale(loss, inv).backward();
    }
    optimizer.step(lr);
    optimizer.zero_grad();
}

// Nearest-neighbor negatives over teacher embeddings of each record's
// positive document, excluding the record itself.
inline std::vector<std::vector<std::size_t>> mine_hard_negatives(
    const std::vector<CorpusRecord>& corpus, TeacherFn& teacher, std::size_t k) {
    std::vector<std::vector<double>> embs;
    embs.reserve(corpus.size());
    for (const auto& r : corpus) {
        if (!r.positive)
            throw std::invalid_argument("mine_hard_negatives: record lacks a positive");
        embs.push_back(teacher(*r.positive).data());
    }
    std::vector<std::vector<std::size_t>> out(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        std::vector<std::pair<double, std::size_t>> sims;
        for (std::size_t j = 0; j < corpus.size(); ++j) {
            if (j == i) continue;
            double s = 0.0;
            for (std::size_t c = 0; c < embs[i].size(); ++c) s += embs[i][c] * embs[j][c];
            sims.emplace_back(s, j);
        }
        std::partial_sort(sims.begin(), sims.begin() + std::min(k, sims.size()), sims.end(),
                          [](auto& a, auto& b) { return a.first > b.first; });
        for (std::size_t t = 0; t < std::min(k, sims.size()); ++t)
            out[i].push_back(sims[t].second);
    }
    return out;
}

namespace detail {

inline Tensor stack_teacher_rows(const std::vector<Tensor>& rows) {
    NoGradGuard ng;
    return stack_rows(rows);
}

}  // namespace detail

// Executes one training stage over the corpus. `checkpoint` carries the model
// and the highest completed stage; stage n requires stage n-1 to be complete.
inline void run_stage(const StageConfig& stage, const std::vector<CorpusRecord>& corpus,
                      TeacherFn teacher, Checkpoint& checkpoint,
                      std::ostream* metrics = nullptr) {
    if (stage.stage_id < 1 || stage.stage_id > 4)
        throw std::invalid_argument("run_stage: stage must be 1..4");
    if (corpus.empty()) throw std::invalid_argument("run_stage: empty corpus");
    if (checkpoint.completed_stage != stage.stage_id - 1)
        throw std::runtime_error(
            "run_stage: sequencing error — stage " + std::to_string(stage.stage_id) +
            " requires a checkpoint that completed stage " +
            std::to_string(stage.stage_id - 1) + ", got stage " +
            std::to_string(checkpoint.completed_stage));
    stage.compression.validate();
    if (stage.stage_id == 4)
        for (const auto& r : corpus)
            if (!r.positive)
                throw std::invalid_argument("run_stage: stage 4 records need a positive");

    EncoderModel& model = checkpoint.model;
    const std::size_t vocab = model.config.vocab_size;
    Adam optimizer(model.parameters());
    Rng rng(stage.seed);

    std::vector<std::vector<std::size_t>> mined;
    if (stage.stage_id == 4) {
        bool all_explicit = true;
        for (const auto& r : corpus)
            if (r.negatives.size() != stage.num_hard_negatives) all_explicit = false;
        if (!all_explicit) mined = mine_hard_negatives(corpus, teacher, stage.num_hard_negatives);
    }
    auto negative_texts = [&](std::size_t idx) {
        std::vector<std::string> out;
        if (!mined.empty()) {
            for (auto j : mined[idx]) out.push_back(*corpus[j].positive);
        } else {
            out = corpus[idx].negatives;
        }
        return out;
    };

    auto tokenize = [&](const std::string& text) { return toy_tokenize(text, vocab, stage.tokenizer); };

    for (std::size_t step = 0; step < stage.steps; ++step) {
        std::optional<double> ratio;
        if (stage.compression.mode == CompressionMode::dynamic) ratio = sample_ratio(rng);

        std::vector<Tensor> micro_losses;
        std::map<std::string, double> loss_components;
        for (std::size_t mb = 0; mb < stage.grad_accum; ++mb) {
            std::vector<std::size_t> idx(stage.micro_batch);
            for (auto& i : idx) i = rng.below(corpus.size());

            LossBreakdown breakdown;
            if (stage.stage_id <= 3) {
                std::vector<TokenSequence> seqs;
                std::vector<Tensor> teacher_rows;
                for (auto i : idx) {
                    seqs.push_back(tokenize(corpus[i].text));
                    teacher_rows.push_back(teacher(corpus[i].text));
                }
                std::vector<Tensor> student_rows;
                for (const auto& s : seqs)
                    student_rows.push_back(encode_one(s, model, stage.compression, ratio));
                Tensor e_s = stack_rows(student_rows);
                Tensor e_t = detail::stack_teacher_rows(teacher_rows);
                Tensor cos = cosine_loss(e_s, e_t);
                breakdown.components["cosine"] = cos.item();
                Tensor total = scale(cos, stage.loss_weights.w_cosine);
                if (stage.loss_weights.w_similarity != 0.0) {
                    Tensor sim = similarity_loss(e_s, e_t);
                    breakdown.components["similarity"] = sim.item();
                    total = add(total, scale(sim, stage.loss_weights.w_similarity));
                }
                breakdown.total = total;
            } else {
                std::vector<Tensor> q_rows, p_rows, n_rows;
                std::vector<Tensor> tp_rows, tdoc_rows;
                std::vector<std::string> doc_texts;
                for (auto i : idx) {
                    q_rows.push_back(encode_one(tokenize(corpus[i].text), model,
                                                stage.compression, ratio));
                    p_rows.push_back(encode_one(tokenize(*corpus[i].positive), model,
                                                stage.compression, ratio));
                    tp_rows.push_back(teacher(*corpus[i].positive));
                    doc_texts.push_back(*corpus[i].positive);
                }
                for (auto i : idx)
                    for (const auto& neg : negative_texts(i)) {
                        n_rows.push_back(encode_one(tokenize(neg), model,
                                                    stage.compression, ratio));
                        doc_texts.push_back(neg);
                    }
                ContrastiveBatch batch;
                batch.queries = stack_rows(q_rows);
                batch.positives = stack_rows(p_rows);
                if (!n_rows.empty()) batch.hard_negatives = stack_rows(n_rows);
                batch.num_hard_negatives = n_rows.empty() ? 0 : stage.num_hard_negatives;
                batch.temperature = stage.temperature;
                batch.soft_temperature = stage.soft_temperature;

                for (const auto& t : doc_texts) tdoc_rows.push_back(teacher(t));
                Tensor teacher_scores;
                std::vector<Tensor> tq_rows;
                {
                    NoGradGuard guard;
                    for (auto i : idx) tq_rows.push_back(teacher(corpus[i].text));
                    Tensor tq = stack_rows(tq_rows);
                    Tensor tdoc = stack_rows(tdoc_rows);
                    teacher_scores = matmul(tq, transpose(tdoc));
                }
                // the cosine anchor uses the documents, not the queries: doc
                // teacher embeddings are stable (long texts), while query
                // embeddings must stay free to specialize for retrieval
                Tensor e_t = detail::stack_teacher_rows(tp_rows);
                breakdown = stage4_loss(batch, teacher_scores, batch.positives, e_t,
                                        stage.loss_weights);
            }

            if (!std::isfinite(breakdown.total.item()))
                throw std::runtime_error("run_stage: non-finite loss at step " +
                                         std::to_string(step));
            micro_losses.push_back(breakdown.total);
            for (const auto& [k2, v] : breakdown.components) loss_components[k2] += v;
        }

        const double lr = lr_at(step, stage.steps, stage.learning_rate, stage.warmup_ratio);
        grad_accumulate(micro_losses, optimizer, lr);

        if (metrics) {
            MetricsRecord m;
            m.step = step;
            m.stage = stage.stage_id;
            m.lr = lr;
            m.ratio = ratio;
            double total = 0.0;
            for (const auto& l : micro_losses) total += l.item();
            m.losses["total"] = total / static_cast<double>(micro_losses.size());
            for (auto& [k2, v] : loss_components)
                m.losses[k2] = v / static_cast<double>(stage.grad_accum);
            append_metrics(*metrics, m);
        }
    }

    checkpoint.completed_stage = stage.stage_id;
}

// ---- evaluation helpers ----

// Mean cosine similarity between student embeddings and teacher targets.
inline double mean_cosine_to_teacher(const EncoderModel& model,
                                     const std::vector<CorpusRecord>& corpus,
                                     TeacherFn teacher, const CompressionPolicy& policy,
                                     TokenizerMode mode = TokenizerMode::whitespace) {
    if (corpus.empty()) throw std::invalid_argument("mean_cosine_to_teacher: empty corpus");
    NoGradGuard ng;
    double total = 0.0;
    for (const auto& r : corpus) {
        const auto seq = toy_tokenize(r.text, model.config.vocab_size, mode);
        Tensor e = encode_one(seq, model, policy);
        Tensor t = teacher(r.text);
        double s = 0.0;
        for (std::size_t i = 0; i < e.numel(); ++i) s += e.at(i) * t.at(i);
        total += s;
    }
    return total / static_cast<double>(corpus.size());
}

// Fraction of tuples whose positive outranks every negative by student cosine.
inline double ranking_accuracy(const EncoderModel& model,
                               const std::vector<CorpusRecord>& corpus,
                               const std::vector<std::vector<std::size_t>>& negatives,
                               const CompressionPolicy& policy,
                               TokenizerMode mode = TokenizerMode::whitespace) {
    NoGradGuard ng;
    std::size_t hits = 0, total = 0;
    auto embed = [&](const std::string& text) {
        return encode_one(toy_tokenize(text, model.config.vocab_size, mode), model, policy);
    };
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (!corpus[i].positive) continue;
        Tensor q = embed(corpus[i].text);
        auto cos = [&](const Tensor& a, const Tensor& b) {
            double s = 0.0;
            for (std::size_t c = 0; c < a.numel(); ++c) s += a.at(c) * b.at(c);
            return s;
        };
        const double pos = cos(q, embed(*corpus[i].positive));
        bool win = true;
        for (auto j : negatives[i])
            if (cos(q, embed(*corpus[j].positive)) >= pos) win = false;
        ++total;
        if (win) ++hits;
    }
    if (total == 0) throw std::invalid_argument("ranking_accuracy: no tuples");
    return static_cast<double>(hits) / static_cast<double>(total);
}

// ---- synthetic corpora ----

// Unsupervised paragraphs: sequences of pseudo-words drawn from a small
// vocabulary; lengths span both sides of the compression threshold.
inline std::vector<CorpusRecord> make_distill_corpus(std::size_t n, Rng& rng,
                                                     std::size_t min_words = 10,
                                                     std::size_t max_words = 120,
                                                     std::size_t word_vocab = 200) {
    std::vector<CorpusRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t words = min_words + rng.below(max_words - min_words + 1);
        std::string text;
        for (std::size_t w = 0; w < words; ++w) {
            if (w) text += ' ';
            text += "w" + std::to_string(rng.below(word_vocab));
        }
        out.push_back(CorpusRecord{"doc" + std::to_string(i), text, std::nullopt, {}});
    }
    return out;
}

// Retrieval tuples: each document is a word sequence over a topic-skewed
// vocabulary slice; the query samples a subset of its words.
inline std::vector<CorpusRecord> make_retrieval_corpus(std::size_t n, Rng& rng,
                                                       std::size_t doc_words = 40,
                                                       std::size_t query_words = 8,
                                                       std::size_t word_vocab = 200,
                                                       std::size_t topics = 10,
                                                       const std::string& prefix = "w") {
    std::vector<CorpusRecord> out;
    const std::size_t span = word_vocab / topics;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t topic = rng.below(topics);
        std::vector<std::string> words;
        for (std::size_t w = 0; w < doc_words; ++w) {
            // most words from the topic slice, a few from anywhere
            const bool topical = rng.uniform() < 0.8;
            const std::size_t word =
                topical ? topic * span + rng.below(span) : rng.below(word_vocab);
            words.push_back(prefix + std::to_string(word));
        }
        std::string doc;
        for (std::size_t w = 0; w < words.size(); ++w) {
            if (w) doc += ' ';
            doc += words[w];
        }
        std::string query;
        for (std::size_t w = 0; w < query_words; ++w) {
            if (w) query += ' ';
            query += words[rng.below(words.size())];
        }
        out.push_back(CorpusRecord{"q" + std::to_string(i), query, doc, {}});
    }
    return out;
}

}  // namespace jtc

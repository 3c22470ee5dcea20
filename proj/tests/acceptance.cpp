// Acceptance suite: one PASS/FAIL line per criterion, exit 0 only if all pass.
// Tolerances are pinned in-line; the training criteria run the real pipeline
// end to end on synthetic corpora, so this binary takes several minutes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "jtc/bench.hpp"
#include "jtc/compression.hpp"
#include "jtc/encoder.hpp"
#include "jtc/io.hpp"
#include "jtc/losses.hpp"
#include "jtc/pipeline.hpp"
#include "jtc/teacher.hpp"
#include "support/oracles.hpp"

using namespace jtc;

namespace {

int g_failures = 0;

void check(const std::string& name, bool ok, const std::string& detail) {
    std::cout << (ok ? "PASS" : "FAIL") << "  " << name;
    if (!detail.empty()) std::cout << "  [" << detail << "]";
    std::cout << std::endl;
    if (!ok) ++g_failures;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

// ---- criterion 1: Algorithm 1 vs direct formula, 1000 random triples ----

void criterion_target_length() {
    Rng rng(101);
    bool ok = true;
    std::size_t noop_cases = 0;
    for (int i = 0; i < 1000; ++i) {
        const std::size_t l_th = 1 + rng.below(256);
        // bias some draws to land at or below the threshold (no-op branch)
        const std::size_t l_in = 1 + rng.below(i % 4 == 0 ? l_th + 4 : 4096);
        const double rho = rng.uniform(0.001, 1.0);
        const auto direct = oracle::target_length_direct(l_in, l_th, rho);
        if (!direct) ++noop_cases;
        CompressionPolicy p{l_th, rho, CompressionMode::fixed};
        if (target_length(l_in, p) != direct) ok = false;
    }
    check("algorithm-1 target length matches direct evaluation on 1000 triples",
          ok && noop_cases > 50, "no-op branch hit " + std::to_string(noop_cases) + "x");
}

// ---- criterion 2: Algorithm 2 branch frequencies over 10^6 draws ----

void criterion_ratio_distribution() {
    Rng rng(7);
    const int draws = 1000000;
    int b1 = 0, fixed = 0, b3 = 0, b4 = 0;
    bool in_range = true;
    for (int i = 0; i < draws; ++i) {
        const double v = sample_ratio(rng);
        if (v == 0.33333) {
            ++fixed;
        } else if (v < 0.33) {
            ++b1;
            if (v < 0.1) in_range = false;
        } else if (v < 0.66) {
            ++b3;
        } else {
            ++b4;
            if (v >= 1.0) in_range = false;
        }
    }
    const double n = draws;
    const bool freqs_ok = std::abs(b1 / n - 0.1) < 0.005 && std::abs(fixed / n - 0.4) < 0.005 &&
                          std::abs(b3 / n - 0.3) < 0.005 && std::abs(b4 / n - 0.2) < 0.005;
    const bool mass_ok = std::abs(fixed / n - 0.4) < 0.002;
    check("algorithm-2 branch frequencies (0.1, 0.4, 0.3, 0.2) +/- 0.005, fixed mass +/- 0.002",
          freqs_ok && mass_ok && in_range,
          fmt(b1 / n) + " " + fmt(fixed / n) + " " + fmt(b3 / n) + " " + fmt(b4 / n));
}

// ---- criterion 3: pooling vs brute-force oracle, all L_in <= 32 ----

void criterion_pooling_oracle() {
    Rng rng(11);
    double worst = 0.0;
    for (std::size_t l_in = 1; l_in <= 32; ++l_in) {
        const std::size_t d = 3;
        Tensor x = Tensor::uniform({l_in, d}, -2, 2, rng);
        for (std::size_t l_out = 1; l_out <= l_in; ++l_out) {
            Tensor y = adaptive_avg_pool_1d(x, l_out);
            const auto direct = oracle::adaptive_pool_direct(x.data(), l_in, d, l_out);
            for (std::size_t i = 0; i < direct.size(); ++i)
                worst = std::max(worst, std::abs(y.data()[i] - direct[i]));
        }
    }
    check("adaptive pooling matches brute-force bins for all L_in <= 32 within 1e-12",
          worst < 1e-12, "max abs err " + fmt(worst));
}

// ---- criterion 4: finite-difference gradient suite ----

void criterion_gradients() {
    Rng rng(42);
    double worst_losses = 0.0;
    auto unit_const = [&](std::size_t n, std::size_t d) {
        NoGradGuard ng;
        return l2_normalize(Tensor::uniform({n, d}, -1, 1, rng));
    };

    for (int cfg = 0; cfg < 20; ++cfg) {
        const std::size_t n = 2 + rng.below(3);   // 2..4
        const std::size_t d = 3 + rng.below(4);   // 3..6
        const std::size_t k = rng.below(4);       // 0..3
        const double tau = 0.2 + rng.uniform() * 0.6;
        const double alpha = 0.05 + rng.uniform() * 0.3;

        Tensor q = Tensor::uniform({n, d}, -1, 1, rng, true);
        Tensor p = Tensor::uniform({n, d}, -1, 1, rng, true);
        Tensor neg = Tensor::uniform({std::max<std::size_t>(n * k, 1), d}, -1, 1, rng, true);
        Tensor e_t = unit_const(n, d);
        Tensor be_t = unit_const(n, d + 1);  // teacher dim may differ for Eq. 2

        // Eq. 1 cosine
        worst_losses = std::max(worst_losses, oracle::gradcheck([&] {
            return cosine_loss(l2_normalize(q), e_t);
        }, {q}));
        // Eq. 2 similarity
        worst_losses = std::max(worst_losses, oracle::gradcheck([&] {
            return similarity_loss(l2_normalize(q), be_t);
        }, {q}));
        // Eq. 4 contrastive
        auto make_batch = [&] {
            ContrastiveBatch b;
            b.queries = l2_normalize(q);
            b.positives = l2_normalize(p);
            if (k > 0) b.hard_negatives = l2_normalize(neg);
            b.num_hard_negatives = k;
            b.temperature = tau;
            b.soft_temperature = alpha;
            return b;
        };
        std::vector<Tensor> qpn = k > 0 ? std::vector<Tensor>{q, p, neg}
                                        : std::vector<Tensor>{q, p};
        worst_losses = std::max(worst_losses, oracle::gradcheck([&] {
            return contrastive_loss(make_batch());
        }, qpn));
        // soft KL
        Tensor scores_t;
        {
            NoGradGuard ng;
            scores_t = Tensor::uniform({n, n * (1 + k)}, -1, 1, rng);
        }
        Tensor scores_s = Tensor::uniform({n, n * (1 + k)}, -1, 1, rng, true);
        worst_losses = std::max(worst_losses, oracle::gradcheck([&] {
            return soft_distill_loss(scores_s, scores_t, alpha);
        }, {scores_s}));
        // stage-3 combination
        worst_losses = std::max(worst_losses, oracle::gradcheck([&] {
            Tensor e_s = l2_normalize(q);
            return stage3_loss(e_s, e_t, e_s, be_t).total;
        }, {q}));
        // stage-4 combination
        Tensor tscores;
        {
            NoGradGuard ng;
            tscores = Tensor::uniform({n, n * (1 + k)}, -1, 1, rng);
        }
        worst_losses = std::max(worst_losses, oracle::gradcheck([&] {
            return stage4_loss(make_batch(), tscores, l2_normalize(q), e_t).total;
        }, qpn));
    }
    check("loss gradients (Eqs. 1-4, soft, combined) vs finite differences < 1e-4",
          worst_losses < 1e-4, "worst rel err " + fmt(worst_losses));

    double worst_encoder = 0.0;
    for (int cfg = 0; cfg < 20; ++cfg) {
        EncoderConfig ec;
        ec.vocab_size = 8 + rng.below(8);
        ec.n_heads = 1 + rng.below(2);
        ec.d_model = ec.n_heads * (4 + 2 * rng.below(2));  // 4..12, divisible by heads
        ec.n_layers = 1 + rng.below(2);
        ec.mlp_hidden = 4 + rng.below(8);
        ec.output_dim = 3 + rng.below(4);
        ec.max_seq_len = 32;
        auto model = EncoderModel::init(ec, rng);
        TokenSequence seq;
        const std::size_t len = 3 + rng.below(6);
        for (std::size_t i = 0; i < len; ++i) seq.ids.push_back(rng.below(ec.vocab_size));
        const std::size_t threshold = 1 + rng.below(8);
        CompressionPolicy policy{threshold, 0.2 + rng.uniform() * 0.8,
                                 cfg % 3 == 0 ? CompressionMode::off : CompressionMode::fixed};
        Tensor target = unit_const(1, ec.output_dim);
        std::vector<Tensor> leaves;
        for (auto& [name, t] : model.parameters()) leaves.push_back(t);
        worst_encoder = std::max(worst_encoder, oracle::gradcheck([&] {
            Tensor e = stack_rows({encode_one(seq, model, policy)});
            return cosine_loss(e, target);
        }, leaves));
    }
    check("full encoder gradients vs finite differences < 1e-3 on 20 random configs",
          worst_encoder < 1e-3, "worst rel err " + fmt(worst_encoder));
}

// ---- criterion 5: contrastive brute-force equivalence + log 2 tie case ----

void criterion_contrastive_oracle() {
    Rng rng(5);
    double worst = 0.0;
    for (std::size_t n = 1; n <= 3; ++n) {
        for (std::size_t k = 0; k <= 2; ++k) {
            for (int rep = 0; rep < 4; ++rep) {
                const std::size_t d = 2 + rng.below(4);
                const double tau = 0.15 + rng.uniform() * 0.7;
                NoGradGuard ng;
                Tensor q = l2_normalize(Tensor::uniform({n, d}, -1, 1, rng));
                Tensor p = l2_normalize(Tensor::uniform({n, d}, -1, 1, rng));
                ContrastiveBatch b;
                b.queries = q;
                b.positives = p;
                b.num_hard_negatives = k;
                b.temperature = tau;
                std::vector<double> ndata;
                if (k > 0) {
                    Tensor neg = l2_normalize(Tensor::uniform({n * k, d}, -1, 1, rng));
                    b.hard_negatives = neg;
                    ndata = neg.data();
                }
                const double got = contrastive_loss(b).item();
                const double want =
                    oracle::contrastive_direct(q.data(), p.data(), ndata, n, k, d, tau);
                worst = std::max(worst, std::abs(got - want));
            }
        }
    }

    // tie case: identical queries and identical positives make every score in
    // a row equal, so each row contributes exactly log 2
    NoGradGuard ng;
    Tensor q({2, 3}, {1, 0, 0, 1, 0, 0});
    Tensor p({2, 3}, {0, 1, 0, 0, 1, 0});
    ContrastiveBatch tie;
    tie.queries = q;
    tie.positives = p;
    tie.temperature = 0.3;
    const double tie_loss = contrastive_loss(tie).item();
    const double tie_err = std::abs(tie_loss - std::log(2.0));
    check("contrastive loss matches brute-force enumeration (N <= 3, K <= 2) within 1e-10",
          worst < 1e-10 && tie_err < 1e-12,
          "worst " + fmt(worst) + ", tie loss " + fmt(tie_loss));
}

// ---- criterion 6: teacher fusion invariants ----

void criterion_fusion() {
    Rng rng(13);
    bool ok = true;
    double worst = 0.0;
    std::vector<TeacherFusionConfig> cfgs(2);
    cfgs[0] = TeacherFusionConfig{};  // 16 / 24 / 8
    cfgs[1].qwen_truncate_dim = 32;
    cfgs[1].qzhou_take_dim = 96;
    cfgs[1].qzhou_segment_dim = 32;
    for (const auto& cfg : cfgs) {
        for (int rep = 0; rep < 8; ++rep) {
            NoGradGuard ng;
            Tensor qwen = Tensor::uniform({cfg.qwen_truncate_dim + 4 + rng.below(16)}, -2, 2, rng);
            Tensor qzhou = Tensor::uniform({cfg.qzhou_take_dim + rng.below(16)}, -2, 2, rng);
            Tensor fused = fuse(qwen, qzhou, cfg);
            if (fused.numel() != cfg.fused_dim()) ok = false;

            double total = 0.0, first = 0.0;
            for (std::size_t i = 0; i < fused.numel(); ++i) {
                total += fused.at(i) * fused.at(i);
                if (i < cfg.qwen_truncate_dim) first += fused.at(i) * fused.at(i);
            }
            const double half = 1.0 / std::sqrt(2.0);
            worst = std::max({worst, std::abs(std::sqrt(total) - 1.0),
                              std::abs(std::sqrt(first) - half),
                              std::abs(std::sqrt(total - first) - half)});

            // positive rescaling of either raw input must not change the output
            for (double a : {3.7, 0.004}) {
                Tensor qwen_s = scale(qwen, a);
                Tensor qzhou_s = scale(qzhou, a);
                Tensor f1 = fuse(qwen_s, qzhou, cfg);
                Tensor f2 = fuse(qwen, qzhou_s, cfg);
                for (std::size_t i = 0; i < fused.numel(); ++i)
                    worst = std::max({worst, std::abs(f1.at(i) - fused.at(i)),
                                      std::abs(f2.at(i) - fused.at(i))});
            }
        }
    }
    check("teacher fusion: unit norm, half norms 1/sqrt(2), scale invariance within 1e-9",
          ok && worst < 1e-9, "worst err " + fmt(worst));
}

// ---- criteria 7/8/10: the training pipeline, chained across stages ----

struct TrainingArtifacts {
    Checkpoint after_stage1;
    Checkpoint after_stage3;
    std::vector<CorpusRecord> holdout;  // distill holdout
    TeacherFusionConfig fusion;
};

double params_checksum(EncoderModel& model) {
    double s = 0.0;
    std::size_t i = 1;
    for (auto& [name, t] : model.parameters())
        for (double v : t.data()) s += v * static_cast<double>(i++ % 97);
    return s;
}

TrainingArtifacts criterion_stage1(TeacherFn& teacher) {
    TrainingArtifacts art;
    // fused teacher dim 32 = student output dim; a wider head would push the
    // teacher outside the rank-32 image of the projection from d_model 32
    art.fusion.qwen_truncate_dim = 16;
    art.fusion.qzhou_take_dim = 48;
    art.fusion.qzhou_segment_dim = 16;

    Rng corpus_rng(1234);
    auto all = make_distill_corpus(576, corpus_rng);
    std::vector<CorpusRecord> train(all.begin(), all.begin() + 512);
    art.holdout.assign(all.begin() + 512, all.end());

    teacher = SyntheticTeacherSource(art.fusion, 256, 7);
    const CompressionPolicy eval_policy{80, 1.0, CompressionMode::off};

    auto run_once = [&](double& holdout_cos, double& checksum) {
        Rng init_rng(42);
        Checkpoint ck;
        EncoderConfig ec;  // d_model 32
        ec.output_dim = art.fusion.fused_dim();
        ck.model = EncoderModel::init(ec, init_rng);
        ck.completed_stage = 0;
        StageConfig s1 = StageConfig::defaults(1);  // 1000 steps, seed 42
        run_stage(s1, train, teacher, ck);
        holdout_cos = mean_cosine_to_teacher(ck.model, art.holdout, teacher, eval_policy);
        checksum = params_checksum(ck.model);
        return ck;
    };

    double cos_a = 0.0, sum_a = 0.0, cos_b = 0.0, sum_b = 0.0;
    art.after_stage1 = run_once(cos_a, sum_a);
    run_once(cos_b, sum_b);
    check("stage-1 convergence: holdout cosine to teacher > 0.90 within 1000 steps",
          cos_a > 0.90, "holdout cosine " + fmt(cos_a));
    check("stage-1 determinism: two fresh runs are bit-identical",
          cos_a == cos_b && sum_a == sum_b,
          "cosine delta " + fmt(cos_a - cos_b) + ", checksum delta " + fmt(sum_a - sum_b));
    return art;
}

void criterion_stage3(TrainingArtifacts& art, TeacherFn& teacher) {
    std::vector<CorpusRecord> train;
    {
        Rng corpus_rng(1234);
        auto all = make_distill_corpus(576, corpus_rng);
        train.assign(all.begin(), all.begin() + 512);
    }
    Checkpoint ck = art.after_stage1;
    StageConfig s2 = StageConfig::defaults(2);
    s2.steps = 300;
    run_stage(s2, train, teacher, ck);
    StageConfig s3 = StageConfig::defaults(3);
    s3.steps = 300;
    run_stage(s3, train, teacher, ck);

    double lo = 2.0, hi = -2.0;
    std::string per_ratio;
    for (double r : {0.5, 0.33, 0.2, 0.1}) {
        CompressionPolicy p{80, r, CompressionMode::fixed};
        const double c = mean_cosine_to_teacher(ck.model, art.holdout, teacher, p);
        lo = std::min(lo, c);
        hi = std::max(hi, c);
        per_ratio += fmt(c) + " ";
    }
    check("stage-3 robustness: holdout cosine spread over ratios {0.5,0.33,0.2,0.1} < 0.05",
          hi - lo < 0.05, "cosines " + per_ratio + "spread " + fmt(hi - lo));
    art.after_stage3 = ck;
}

void criterion_stage4(TrainingArtifacts& art, TeacherFn& teacher) {
    // retrieval tuples over a fresh word vocabulary ("r..."), unseen during
    // the distillation stages, so stage 4 has genuine retrieval headroom
    Rng corpus_rng(777);
    auto all = make_retrieval_corpus(384, corpus_rng, 40, 8, 200, 10, "r");
    std::vector<CorpusRecord> train(all.begin(), all.begin() + 256);
    std::vector<CorpusRecord> holdout(all.begin() + 256, all.end());

    // replay: distillation documents as self-positive tuples keep the model
    // anchored to the teacher while it adapts to the new domain
    {
        Rng drng(1234);
        auto dall = make_distill_corpus(576, drng);
        for (std::size_t i = 0; i < 128; ++i) {
            CorpusRecord r = dall[i];
            r.id = "replay" + std::to_string(i);
            r.positive = r.text;
            train.push_back(r);
        }
    }

    // fixed random eval negatives: 8 other holdout documents per query
    Rng neg_rng(999);
    std::vector<std::vector<std::size_t>> eval_negs(holdout.size());
    for (std::size_t i = 0; i < holdout.size(); ++i) {
        std::set<std::size_t> picked;
        while (picked.size() < 8) {
            const std::size_t j = neg_rng.below(holdout.size());
            if (j != i) picked.insert(j);
        }
        eval_negs[i].assign(picked.begin(), picked.end());
    }

    const CompressionPolicy eval_policy{80, 1.0, CompressionMode::off};
    Checkpoint ck = art.after_stage3;
    const double rank_before = ranking_accuracy(ck.model, holdout, eval_negs, eval_policy);
    const double cos_before =
        mean_cosine_to_teacher(ck.model, art.holdout, teacher, eval_policy);

    StageConfig s4 = StageConfig::defaults(4);
    s4.learning_rate = 3e-4;
    run_stage(s4, train, teacher, ck);

    const double rank_after = ranking_accuracy(ck.model, holdout, eval_negs, eval_policy);
    const double cos_after =
        mean_cosine_to_teacher(ck.model, art.holdout, teacher, eval_policy);
    check("stage-4 effect: holdout ranking accuracy improves by >= 5 pp",
          rank_after - rank_before >= 0.05,
          fmt(rank_before) + " -> " + fmt(rank_after));
    check("stage-4 effect: holdout cosine to teacher degrades by < 0.05",
          cos_before - cos_after < 0.05, fmt(cos_before) + " -> " + fmt(cos_after));
}

// ---- criterion 9: latency scaling at length 2048 ----

void criterion_latency() {
    Rng rng(42);
    auto model = EncoderModel::init(EncoderConfig{}, rng);
    const std::vector<double> ratios{0.1, 0.2, 0.33, 0.5, 1.0};
    auto results = bench_latency(model, {2048}, ratios, 32, 1, 1, 42, 80);
    std::map<double, double> by_ratio;
    for (const auto& r : results) by_ratio[r.ratio] = r.mean_latency_ms;
    bool increasing = true;
    std::string lats;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        lats += fmt(by_ratio[ratios[i]]) + " ";
        if (i > 0 && by_ratio[ratios[i]] <= by_ratio[ratios[i - 1]]) increasing = false;
    }
    const double speedup = by_ratio[1.0] / by_ratio[0.1];
    check("latency at length 2048 strictly increasing in ratio {0.1,0.2,0.33,0.5,1.0}",
          increasing, "ms/sample " + lats);
    check("latency speedup ratio 0.1 vs 1.0 at length 2048 >= 2x", speedup >= 2.0,
          fmt(speedup) + "x");
}

}  // namespace

int main() {
    const auto t0 = std::chrono::steady_clock::now();
    criterion_target_length();
    criterion_ratio_distribution();
    criterion_pooling_oracle();
    criterion_gradients();
    criterion_contrastive_oracle();
    criterion_fusion();

    TeacherFn teacher;
    TrainingArtifacts art = criterion_stage1(teacher);
    criterion_stage3(art, teacher);
    criterion_latency();
    criterion_stage4(art, teacher);

    const auto t1 = std::chrono::steady_clock::now();
    std::cout << (g_failures == 0 ? "ALL PASS" : "FAILURES: " + std::to_string(g_failures))
              << " (" << std::chrono::duration<double>(t1 - t0).count() << " s)\n";
    return g_failures == 0 ? 0 : 1;
}

// jtc: four-stage distillation trainer, encoder, and latency benchmark for
// the toy token-compression embedding model.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "jtc/bench.hpp"
#include "jtc/compression.hpp"
#include "jtc/encoder.hpp"
#include "jtc/io.hpp"
#include "jtc/losses.hpp"
#include "jtc/pipeline.hpp"
#include "jtc/teacher.hpp"

namespace {

using namespace jtc;

TokenizerMode tokenizer_mode(const std::string& name) {
    if (name == "byte") return TokenizerMode::byte;
    if (name == "whitespace") return TokenizerMode::whitespace;
    throw std::runtime_error("unknown tokenizer mode: " + name);
}

EncoderConfig encoder_config_from(const Config& cfg) {
    EncoderConfig e;
    e.vocab_size = static_cast<std::size_t>(cfg.get_int("vocab_size", 256));
    e.d_model = static_cast<std::size_t>(cfg.get_int("d_model", 32));
    e.n_layers = static_cast<std::size_t>(cfg.get_int("n_layers", 2));
    e.n_heads = static_cast<std::size_t>(cfg.get_int("n_heads", 4));
    e.mlp_hidden = static_cast<std::size_t>(cfg.get_int("mlp_hidden", 64));
    e.output_dim = static_cast<std::size_t>(cfg.get_int("output_dim", 64));
    e.max_seq_len = static_cast<std::size_t>(cfg.get_int("max_seq_len", 2048));
    e.validate();
    return e;
}

// The fused teacher dim must match the student output dim; by default the
// fusion dims are derived from output_dim (half truncation, half fold).
TeacherFusionConfig fusion_config_from(const Config& cfg, std::size_t output_dim) {
    TeacherFusionConfig f;
    const auto half = output_dim / 2;
    f.qwen_truncate_dim =
        static_cast<std::size_t>(cfg.get_int("qwen_truncate_dim", static_cast<long>(half)));
    f.qzhou_segment_dim = static_cast<std::size_t>(
        cfg.get_int("qzhou_segment_dim", static_cast<long>(output_dim - half)));
    f.qzhou_take_dim = static_cast<std::size_t>(
        cfg.get_int("qzhou_take_dim", static_cast<long>(3 * f.qzhou_segment_dim)));
    f.validate();
    if (f.fused_dim() != output_dim)
        throw std::runtime_error("teacher fusion dim " + std::to_string(f.fused_dim()) +
                                 " does not match student output_dim " +
                                 std::to_string(output_dim));
    return f;
}

StageConfig stage_config_from(const Config& cfg, int stage) {
    StageConfig s = StageConfig::defaults(stage);
    s.learning_rate = cfg.get_double("learning_rate", s.learning_rate);
    s.warmup_ratio = cfg.get_double("warmup_ratio", s.warmup_ratio);
    s.steps = static_cast<std::size_t>(cfg.get_int("steps", static_cast<long>(s.steps)));
    s.micro_batch =
        static_cast<std::size_t>(cfg.get_int("micro_batch", static_cast<long>(s.micro_batch)));
    s.grad_accum =
        static_cast<std::size_t>(cfg.get_int("grad_accum", static_cast<long>(s.grad_accum)));
    s.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 42));
    s.compression.length_threshold =
        static_cast<std::size_t>(cfg.get_int("length_threshold", 80));
    if (cfg.has("ratio")) s.compression.ratio = cfg.get_double("ratio", s.compression.ratio);
    s.num_hard_negatives =
        static_cast<std::size_t>(cfg.get_int("num_hard_negatives", 3));
    s.temperature = cfg.get_double("temperature", 0.3);
    s.soft_temperature = cfg.get_double("soft_temperature", 0.1);
    s.tokenizer = tokenizer_mode(cfg.get("tokenizer", "whitespace"));
    return s;
}

std::vector<CorpusRecord> corpus_from(const Config& cfg, int stage) {
    if (cfg.has("corpus")) return load_corpus(cfg.get("corpus", ""));
    // no corpus file: generate a synthetic one
    const auto n = static_cast<std::size_t>(cfg.get_int("synthetic_corpus_size", 512));
    Rng rng(static_cast<std::uint64_t>(cfg.get_int("corpus_seed", 1234)));
    if (stage == 4) return make_retrieval_corpus(n, rng);
    return make_distill_corpus(n, rng);
}

int cmd_distill(int stage, const std::string& config_path) {
    Config cfg = config_path.empty() ? Config() : Config::from_file(config_path);
    StageConfig stage_cfg = stage_config_from(cfg, stage);
    auto corpus = corpus_from(cfg, stage);

    Checkpoint ck;
    if (stage == 1) {
        Rng init_rng(static_cast<std::uint64_t>(cfg.get_int("init_seed", 42)));
        ck.model = EncoderModel::init(encoder_config_from(cfg), init_rng);
        ck.completed_stage = 0;
    } else {
        const std::string in = cfg.get("checkpoint_in", "");
        if (in.empty())
            throw std::runtime_error("sequencing error: stage " + std::to_string(stage) +
                                     " needs checkpoint_in from stage " +
                                     std::to_string(stage - 1));
        ck = load_checkpoint(in);
    }

    TeacherFusionConfig fusion = fusion_config_from(cfg, ck.model.config.output_dim);
    TeacherFn teacher;
    if (cfg.has("teacher_file")) {
        teacher = teacher_from_file(cfg.get("teacher_file", ""), corpus, fusion);
    } else {
        teacher = SyntheticTeacherSource(
            fusion, ck.model.config.vocab_size,
            static_cast<std::uint64_t>(cfg.get_int("teacher_seed", 7)), stage_cfg.tokenizer);
    }

    std::ofstream metrics_file;
    std::ostream* metrics = nullptr;
    if (cfg.has("metrics_out")) {
        metrics_file.open(cfg.get("metrics_out", ""));
        if (!metrics_file) throw std::runtime_error("cannot open metrics_out");
        metrics = &metrics_file;
    }

    run_stage(stage_cfg, corpus, teacher, ck, metrics);

    const std::string out = cfg.get("checkpoint_out", "stage" + std::to_string(stage) + ".ckpt");
    save_checkpoint(out, ck.model, stage);
    std::cout << "stage " << stage << " complete; checkpoint written to " << out << "\n";
    return 0;
}

int cmd_encode(const std::string& checkpoint, const std::string& input, double ratio,
               std::size_t threshold, const std::string& output,
               const std::string& tokenizer) {
    Checkpoint ck = load_checkpoint(checkpoint);
    auto corpus = load_corpus(input);
    CompressionPolicy policy{threshold, ratio, CompressionMode::fixed};
    const TokenizerMode mode = tokenizer_mode(tokenizer);

    NoGradGuard ng;
    std::vector<std::string> ids;
    std::vector<Tensor> rows;
    for (const auto& r : corpus) {
        ids.push_back(r.id);
        rows.push_back(encode_one(toy_tokenize(r.text, ck.model.config.vocab_size, mode),
                                  ck.model, policy));
    }
    if (rows.empty()) {
        std::cout << "encode: empty corpus, nothing written\n";
        return 0;
    }
    Tensor all = stack_rows(rows);
    if (output.empty() || output == "-") {
        write_embeddings(std::cout, ids, all);
    } else {
        std::ofstream out(output);
        if (!out) throw std::runtime_error("cannot open output " + output);
        write_embeddings(out, ids, all);
    }
    return 0;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string part;
    while (std::getline(in, part, sep))
        if (!part.empty()) out.push_back(part);
    return out;
}

int cmd_bench(const std::string& checkpoint, const std::string& grid, std::size_t batch,
              std::size_t reps, std::size_t threshold, const std::string& output) {
    Checkpoint ck;
    if (checkpoint.empty()) {
        Rng rng(42);
        ck.model = EncoderModel::init(EncoderConfig{}, rng);
    } else {
        ck = load_checkpoint(checkpoint);
    }

    std::vector<std::size_t> lengths{128, 256, 512, 1024, 2048};
    std::vector<double> ratios{1.0, 0.5, 0.33, 0.2, 0.1};
    for (const auto& field : split(grid, ';')) {
        const auto eq = field.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("bad grid field (want lengths=...;ratios=...): " + field);
        const std::string key = field.substr(0, eq);
        const auto vals = split(field.substr(eq + 1), ',');
        if (key == "lengths") {
            lengths.clear();
            for (const auto& v : vals) lengths.push_back(std::stoul(v));
        } else if (key == "ratios") {
            ratios.clear();
            for (const auto& v : vals) ratios.push_back(std::stod(v));
        } else {
            throw std::runtime_error("unknown grid key: " + key);
        }
    }

    auto results = bench_latency(ck.model, lengths, ratios, batch, reps, 3, 42, threshold);
    if (output.empty() || output == "-") {
        write_bench_csv(std::cout, results);
    } else {
        std::ofstream out(output);
        if (!out) throw std::runtime_error("cannot open output " + output);
        write_bench_csv(out, results);
    }
    return 0;
}

int cmd_gradcheck();
int cmd_selftest();

// central finite differences against the tape, shared by gradcheck/selftest
double fd_check(const std::function<Tensor()>& make_loss, std::vector<Tensor> leaves,
                double h = 1e-5) {
    for (auto& l : leaves) l.zero_grad();
    make_loss().backward();
    std::vector<std::vector<double>> analytic;
    for (auto& l : leaves) analytic.push_back(l.grad());
    double worst = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& data = leaves[li].mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + h;
            const double up = make_loss().item();
            data[i] = saved - h;
            const double down = make_loss().item();
            data[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double g = analytic[li][i];
            worst = std::max(worst,
                             std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-4}));
        }
    }
    return worst;
}

int report(const char* name, bool ok) {
    std::cout << (ok ? "PASS" : "FAIL") << "  " << name << "\n";
    return ok ? 0 : 1;
}

int cmd_gradcheck() {
    int failures = 0;
    Rng rng(42);

    Tensor a = Tensor::uniform({3, 4}, -1, 1, rng, true);
    Tensor b = Tensor::uniform({4, 2}, -1, 1, rng, true);
    failures += report("matmul gradient",
                       fd_check([&] { return sum(matmul(a, b)); }, {a, b}) < 1e-4);

    Tensor x = Tensor::uniform({4, 5}, -1, 1, rng, true);
    failures += report("softmax/logsumexp gradient",
                       fd_check([&] { return sum(sub_colvec(x, logsumexp_rows(x))); }, {x}) <
                           1e-4);
    Tensor xr = Tensor::uniform({4, 6}, -1, 1, rng, true);
    failures += report("rms/rope gradient",
                       fd_check([&] { return sum(mul(rope_rows(rms_norm_rows(xr)), xr)); },
                                {xr}) < 1e-4);

    auto sw = SwigluParams::init(4, 6, rng);
    Tensor sx = Tensor::uniform({6, 4}, -1, 1, rng, true);
    failures += report(
        "swiglu + adaptive pool gradient",
        fd_check([&] { return sum(mul(adaptive_avg_pool_1d(swiglu_transform(sx, sw), 3),
                                      adaptive_avg_pool_1d(sx, 3))); },
                 {sx, sw.gate, sw.up, sw.down}) < 1e-4);

    EncoderConfig cfg;
    cfg.vocab_size = 11;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.mlp_hidden = 8;
    cfg.output_dim = 4;
    cfg.max_seq_len = 32;
    auto model = EncoderModel::init(cfg, rng);
    TokenSequence seq;
    for (int i = 0; i < 6; ++i) seq.ids.push_back(rng.below(11));
    CompressionPolicy policy{4, 0.5, CompressionMode::fixed};
    std::vector<Tensor> leaves;
    for (auto& [name, t] : model.parameters()) leaves.push_back(t);
    failures += report("encoder gradient",
                       fd_check([&] {
                           Tensor e = encode_one(seq, model, policy);
                           return sum(mul(e, add_scalar(e, 0.25)));
                       },
                                leaves) < 1e-3);
    return failures == 0 ? 0 : 1;
}

int cmd_selftest() {
    int failures = 0;
    Rng rng(42);

    // Algorithm 1 against direct formula evaluation
    bool alg1 = true;
    for (int i = 0; i < 1000; ++i) {
        const std::size_t l_th = 1 + rng.below(200);
        const std::size_t l_in = 1 + rng.below(4000);
        const double rho = rng.uniform(0.01, 1.0);
        CompressionPolicy p{l_th, rho, CompressionMode::fixed};
        std::optional<std::size_t> direct;
        if (l_in > l_th) {
            auto t = static_cast<std::size_t>(std::floor(
                static_cast<double>(l_th) + static_cast<double>(l_in - l_th) * rho));
            direct = std::min(std::max<std::size_t>(t, 1), l_in);
        }
        if (target_length(l_in, p) != direct) alg1 = false;
    }
    failures += report("algorithm-1 target length oracle", alg1);

    // Algorithm 2 distribution (quick 10^5 version)
    Rng srng(7);
    int fixed = 0;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i)
        if (sample_ratio(srng) == 0.33333) ++fixed;
    const double mass = static_cast<double>(fixed) / draws;
    failures += report("algorithm-2 fixed-point mass", std::abs(mass - 0.4) < 0.01);

    // pooling vs brute force on small shapes
    bool pool_ok = true;
    for (std::size_t l_in = 1; l_in <= 16 && pool_ok; ++l_in) {
        Tensor xm = Tensor::uniform({l_in, 2}, -1, 1, rng);
        for (std::size_t l_out = 1; l_out <= l_in; ++l_out) {
            Tensor y = adaptive_avg_pool_1d(xm, l_out);
            for (std::size_t i = 0; i < l_out; ++i) {
                const auto [lo, hi] = pool_bin(i, l_in, l_out);
                for (std::size_t c = 0; c < 2; ++c) {
                    double s = 0.0;
                    for (std::size_t r = lo; r < hi; ++r) s += xm.at(r, c);
                    if (std::abs(y.at(i, c) - s / static_cast<double>(hi - lo)) > 1e-12)
                        pool_ok = false;
                }
            }
        }
    }
    failures += report("adaptive pooling oracle", pool_ok);

    // teacher fusion half norms
    TeacherFusionConfig fcfg;
    Tensor qwen = Tensor::uniform({20}, -1, 1, rng);
    Tensor qzhou = Tensor::uniform({30}, -1, 1, rng);
    Tensor fused = fuse(qwen, qzhou, fcfg);
    double n0 = 0.0, n1 = 0.0;
    for (std::size_t i = 0; i < fcfg.qwen_truncate_dim; ++i) n0 += fused.at(i) * fused.at(i);
    for (std::size_t i = fcfg.qwen_truncate_dim; i < fused.numel(); ++i)
        n1 += fused.at(i) * fused.at(i);
    failures += report("teacher fusion half norms",
                       std::abs(std::sqrt(n0) - 1.0 / std::sqrt(2.0)) < 1e-9 &&
                           std::abs(std::sqrt(n1) - 1.0 / std::sqrt(2.0)) < 1e-9);

    // small gradient check sweep
    failures += (cmd_gradcheck() == 0) ? report("gradient suite", true)
                                       : report("gradient suite", false);
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"toy token-compression embedding model trainer/benchmark"};
    app.require_subcommand(1);

    int stage = 1;
    std::string config_path;
    const char* env_config = std::getenv("JTC_CONFIG");
    if (env_config) config_path = env_config;

    auto* distill = app.add_subcommand("distill", "run one training stage");
    distill->add_option("--stage", stage, "training stage 1..4")
        ->required()
        ->check(CLI::Range(1, 4));
    distill->add_option("--config", config_path, "flat key=value config file");

    std::string checkpoint, input, output = "-", tokenizer = "whitespace";
    double ratio = 0.5;
    std::size_t threshold = 80;
    auto* encode_cmd = app.add_subcommand("encode", "encode a corpus to embeddings");
    encode_cmd->add_option("--checkpoint", checkpoint)->required();
    encode_cmd->add_option("--input", input)->required();
    encode_cmd->add_option("--ratio", ratio);
    encode_cmd->add_option("--threshold", threshold);
    encode_cmd->add_option("--output", output);
    encode_cmd->add_option("--tokenizer", tokenizer);

    std::string bench_checkpoint, grid, bench_output = "-";
    std::size_t batch = 32, reps = 50, bench_threshold = 80;
    auto* bench_cmd = app.add_subcommand("bench", "latency grid benchmark");
    bench_cmd->add_option("--checkpoint", bench_checkpoint);
    bench_cmd->add_option("--grid", grid, "lengths=...;ratios=...");
    bench_cmd->add_option("--batch", batch);
    bench_cmd->add_option("--reps", reps);
    bench_cmd->add_option("--threshold", bench_threshold);
    bench_cmd->add_option("--output", bench_output);

    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference checks");
    auto* selftest_cmd = app.add_subcommand("selftest", "built-in oracle suites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (distill->parsed()) return cmd_distill(stage, config_path);
        if (encode_cmd->parsed())
            return cmd_encode(checkpoint, input, ratio, threshold, output, tokenizer);
        if (bench_cmd->parsed())
            return cmd_bench(bench_checkpoint, grid, batch, reps, bench_threshold,
                             bench_output);
        if (gradcheck_cmd->parsed()) return cmd_gradcheck();
        if (selftest_cmd->parsed()) return cmd_selftest();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

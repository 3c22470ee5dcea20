#pragma once

#include <algorithm>
#include <chrono>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "jtc/compression.hpp"
#include "jtc/encoder.hpp"
#include "jtc/io.hpp"
#include "jtc/rng.hpp"

namespace jtc {

// Latency grid over (input length, compression ratio): encodes fixed-length
// synthetic batches on a monotonic clock and reports mean per-sample time.

struct BenchResult {
    std::size_t input_length = 0;
    double ratio = 1.0;
    double mean_latency_ms = 0.0;
    std::size_t samples = 0;
};

inline std::vector<BenchResult> bench_latency(const EncoderModel& model,
                                              const std::vector<std::size_t>& lengths,
                                              const std::vector<double>& ratios,
                                              std::size_t batch = 32, std::size_t reps = 50,
                                              std::size_t warmup = 3,
                                              std::uint64_t seed = 42,
                                              std::size_t length_threshold = 80) {
    NoGradGuard ng;
    std::vector<BenchResult> results;
    for (double ratio : ratios) {
        for (std::size_t length : lengths) {
            if (length > model.config.max_seq_len)
                throw std::invalid_argument("bench_latency: length exceeds max_seq_len");
            CompressionPolicy policy{length_threshold, ratio, CompressionMode::fixed};
            Rng rng(seed);
            std::vector<TokenSequence> seqs(batch);
            for (auto& s : seqs) {
                s.ids.resize(length);
                for (auto& id : s.ids) id = rng.below(model.config.vocab_size);
            }
            for (std::size_t w = 0; w < warmup; ++w)
                for (const auto& s : seqs) (void)encode_one(s, model, policy);
            const auto t0 = std::chrono::steady_clock::now();
            for (std::size_t r = 0; r < reps; ++r)
                for (const auto& s : seqs) (void)encode_one(s, model, policy);
            const auto t1 = std::chrono::steady_clock::now();
            const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
            BenchResult res;
            res.input_length = length;
            res.ratio = ratio;
            res.samples = batch * reps;
            res.mean_latency_ms = ms / static_cast<double>(res.samples);
            results.push_back(res);
        }
    }
    return results;
}

inline void write_bench_csv(std::ostream& out, std::vector<BenchResult> results) {
    std::sort(results.begin(), results.end(), [](const BenchResult& a, const BenchResult& b) {
        return a.ratio != b.ratio ? a.ratio < b.ratio : a.input_length < b.input_length;
    });
    out << "ratio,input_length,mean_latency_ms,samples\n";
    for (const auto& r : results)
        out << r.ratio << ',' << r.input_length << ',' << r.mean_latency_ms << ','
            << r.samples << '\n';
}

}  // namespace jtc

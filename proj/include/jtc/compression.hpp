#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "jtc/rng.hpp"
#include "jtc/tensor.hpp"

namespace jtc {

// Token compression: a SwiGLU feature transform followed by adaptive 1D
// average pooling along the sequence axis. Pooling only engages past a
// length threshold; the target length is L_th + (L_in - L_th) * ratio.

enum class CompressionMode { off, fixed, dynamic };

struct CompressionPolicy {
    std::size_t length_threshold = 80;
    double ratio = 0.33;
    CompressionMode mode = CompressionMode::fixed;

    void validate() const {
        if (length_threshold < 1)
            throw std::invalid_argument("CompressionPolicy: length_threshold must be >= 1");
        if (!(ratio > 0.0 && ratio <= 1.0))
            throw std::invalid_argument("CompressionPolicy: ratio must be in (0, 1]");
    }
};

// Absent result means "no compression" (input at or below the threshold, or
// compression switched off). Fractional targets floor to an integer, min 1.
inline std::optional<std::size_t> target_length(std::size_t input_len,
                                                const CompressionPolicy& policy) {
    if (input_len < 1) throw std::invalid_argument("target_length: input_len must be >= 1");
    policy.validate();
    if (policy.mode == CompressionMode::off) return std::nullopt;
    if (input_len <= policy.length_threshold) return std::nullopt;
    const double raw = static_cast<double>(policy.length_threshold) +
                       static_cast<double>(input_len - policy.length_threshold) * policy.ratio;
    auto t = static_cast<std::size_t>(std::floor(raw));
    if (t < 1) t = 1;
    if (t > input_len) t = input_len;
    return t;
}

// Per-batch compression ratio: with probability 0.4 the fixed point 0.33333,
// otherwise uniform over one of three surrounding ranges.
inline double sample_ratio(Rng& rng) {
    const double r = rng.uniform();
    if (r < 0.1) return rng.uniform(0.1, 0.33);
    if (r < 0.5) return 0.33333;
    if (r < 0.8) return rng.uniform(0.33, 0.66);
    return rng.uniform(0.66, 1.0);
}

// Bin extents for output row i of adaptive pooling over L_in rows:
// [floor(i*L_in/L_out), ceil((i+1)*L_in/L_out)). Bins may overlap.
inline std::pair<std::size_t, std::size_t> pool_bin(std::size_t i, std::size_t l_in,
                                                    std::size_t l_out) {
    const std::size_t lo = i * l_in / l_out;
    const std::size_t hi = ((i + 1) * l_in + l_out - 1) / l_out;
    return {lo, hi};
}

inline Tensor adaptive_avg_pool_1d(const Tensor& x, std::size_t target_len) {
    const std::size_t l_in = x.rows(), d = x.cols();
    if (target_len < 1 || target_len > l_in)
        throw std::invalid_argument("adaptive_avg_pool_1d: target_len out of range");
    std::vector<double> out(target_len * d, 0.0);
    for (std::size_t i = 0; i < target_len; ++i) {
        const auto [lo, hi] = pool_bin(i, l_in, target_len);
        for (std::size_t r = lo; r < hi; ++r)
            for (std::size_t c = 0; c < d; ++c) out[i * d + c] += x.at(r, c);
        const double inv = 1.0 / static_cast<double>(hi - lo);
        for (std::size_t c = 0; c < d; ++c) out[i * d + c] *= inv;
    }
    auto px = x.node();
    return detail::make_op({target_len, d}, std::move(out), {x},
                           [px, l_in, d, target_len](detail::Node& n) {
        for (std::size_t i = 0; i < target_len; ++i) {
            const auto [lo, hi] = pool_bin(i, l_in, target_len);
            const double inv = 1.0 / static_cast<double>(hi - lo);
            for (std::size_t r = lo; r < hi; ++r)
                for (std::size_t c = 0; c < d; ++c)
                    px->grad[r * d + c] += n.grad[i * d + c] * inv;
        }
    });
}

// Gated feed-forward block down(silu(gate(x)) * up(x)), no bias terms.
struct SwigluParams {
    Tensor gate;  // [d x h]
    Tensor up;    // [d x h]
    Tensor down;  // [h x d]

    static SwigluParams init(std::size_t d, std::size_t hidden, Rng& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(d));
        const double bound_h = 1.0 / std::sqrt(static_cast<double>(hidden));
        return SwigluParams{
            Tensor::uniform({d, hidden}, -bound, bound, rng, true),
            Tensor::uniform({d, hidden}, -bound, bound, rng, true),
            Tensor::uniform({hidden, d}, -bound_h, bound_h, rng, true),
        };
    }
};

inline Tensor swiglu_transform(const Tensor& x, const SwigluParams& p) {
    if (x.cols() != p.gate.rows())
        throw std::invalid_argument("swiglu_transform: input width mismatch");
    return matmul(mul(silu(matmul(x, p.gate)), matmul(x, p.up)), p.down);
}

// Full compression module over one unpadded sequence [L x d]. The SwiGLU
// always applies; pooling engages only when target_length yields a value.
// ratio_override carries the per-batch sampled ratio in dynamic mode.
inline Tensor compress(const Tensor& x, const CompressionPolicy& policy,
                       const SwigluParams& params,
                       std::optional<double> ratio_override = std::nullopt) {
    if (x.rows() < 1) throw std::invalid_argument("compress: empty sequence");
    Tensor y = swiglu_transform(x, params);
    CompressionPolicy eff = policy;
    if (ratio_override) eff.ratio = *ratio_override;
    const auto target = target_length(x.rows(), eff);
    if (!target) return y;
    return adaptive_avg_pool_1d(y, *target);
}

// Quadratic attention cost of the compressed sequence relative to the
// uncompressed one; the headline efficiency figure of merit.
inline double attention_cost_ratio(std::size_t input_len, const CompressionPolicy& policy) {
    const auto t = target_length(input_len, policy);
    const double l_out = static_cast<double>(t ? *t : input_len);
    const double l_in = static_cast<double>(input_len);
    return (l_out / l_in) * (l_out / l_in);
}

}  // namespace jtc

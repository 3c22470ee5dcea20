#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "jtc/tensor.hpp"

namespace jtc {

// Linear warmup to base_lr over warmup_ratio * total_steps, then cosine decay
// to zero at total_steps. Continuous at the boundary.
inline double lr_at(std::size_t step, std::size_t total_steps, double base_lr,
                    double warmup_ratio) {
    if (step > total_steps) throw std::invalid_argument("lr_at: step beyond total_steps");
    const double warmup_steps = warmup_ratio * static_cast<double>(total_steps);
    const double s = static_cast<double>(step);
    if (warmup_steps > 0.0 && s < warmup_steps) return base_lr * s / warmup_steps;
    const double span = static_cast<double>(total_steps) - warmup_steps;
    if (span <= 0.0) return base_lr;
    const double progress = (s - warmup_steps) / span;
    return base_lr * 0.5 *
           (1.0 + std::cos(3.141592653589793238462643383279502884 * progress));
}

// Adam over a named parameter set. Reads each tensor's accumulated grad,
// writes updated values in place, then leaves grad clearing to the caller.
class Adam {
public:
    explicit Adam(const std::map<std::string, Tensor>& params, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8)
        : params_(params), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (auto& [name, t] : params_) {
            m_[name].assign(t.numel(), 0.0);
            v_[name].assign(t.numel(), 0.0);
        }
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (auto& [name, tensor] : params_) {
            const auto& g = tensor.grad();
            if (g.size() != tensor.numel())
                throw std::runtime_error("Adam: missing gradient for " + name);
            auto& m = m_[name];
            auto& v = v_[name];
            auto& x = tensor.mutable_data();
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (!std::isfinite(g[i]))
                    throw std::runtime_error("Adam: non-finite gradient in " + name);
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
                x[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
            }
        }
    }

    void zero_grad() {
        for (auto& [name, tensor] : params_) tensor.zero_grad();
    }

    std::size_t steps_taken() const { return t_; }

private:
    std::map<std::string, Tensor> params_;
    double beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::map<std::string, std::vector<double>> m_;
    std::map<std::string, std::vector<double>> v_;
};

}  // namespace jtc

#include <weakloc/adam.hpp>

#include <cmath>

namespace weakloc
{

Adam::Adam(ParameterList params, AdamConfig config) : params_(std::move(params)), config_(config)
{
    for (const auto &p : params_) {
        m_.emplace_back(p.value.numel(), 0.0);
        v_.emplace_back(p.value.numel(), 0.0);
    }
}

void Adam::step()
{
    double norm_sq = 0.0;
    for (auto &p : params_) {
        if (!p.value.has_grad()) {
            continue;
        }
        for (double g : p.value.grad()) {
            if (!std::isfinite(g)) {
                throw Error("non-finite gradient in parameter '" + p.name + "'");
            }
            norm_sq += g * g;
        }
    }
    double factor = 1.0;
    if (config_.max_grad_norm && std::sqrt(norm_sq) > *config_.max_grad_norm) {
        factor = *config_.max_grad_norm / std::sqrt(norm_sq);
    }

    ++t_;
    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto &p = params_[i].value;
        auto w = p.data();
        auto &m = m_[i];
        auto &v = v_[i];
        const bool has = p.has_grad();
        const auto g = has ? p.grad() : std::span<double>{};
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = has ? g[j] * factor : 0.0;
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            const double m_hat = m[j] / c1;
            const double v_hat = v[j] / c2;
            w[j] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
        }
    }
}

void Adam::zero_grad()
{
    zero_grads(params_);
}

} // namespace weakloc

#ifndef WEAKLOC_ADAM_HPP
#define WEAKLOC_ADAM_HPP

#include <weakloc/nn.hpp>

#include <cstdint>
#include <optional>
#include <vector>

namespace weakloc
{

struct AdamConfig {
    double learning_rate = 0.0003;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Rescale the joint gradient to this L2 norm when exceeded.
    std::optional<double> max_grad_norm;
};

/// Adam with bias correction. Holds first/second moment buffers for a fixed parameter list.
class Adam
{
public:
    Adam(ParameterList params, AdamConfig config);

    /// One update from the parameters' current gradients. Throws, naming the
    /// parameter, if any gradient is non-finite; no parameter is modified then.
    void step();
    void zero_grad();

    [[nodiscard]] std::uint64_t steps() const noexcept { return t_; }
    [[nodiscard]] const AdamConfig &config() const noexcept { return config_; }
    void set_learning_rate(double lr) noexcept { config_.learning_rate = lr; }
    [[nodiscard]] const ParameterList &parameters() const noexcept { return params_; }
    [[nodiscard]] const std::vector<double> &first_moment(std::size_t i) const { return m_.at(i); }
    [[nodiscard]] const std::vector<double> &second_moment(std::size_t i) const { return v_.at(i); }

private:
    ParameterList params_;
    AdamConfig config_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::uint64_t t_ = 0;
};

} // namespace weakloc

#endif

#ifndef WEAKLOC_PPO_HPP
#define WEAKLOC_PPO_HPP

#include <weakloc/adam.hpp>
#include <weakloc/cropenv.hpp>
#include <weakloc/nn.hpp>
#include <weakloc/synthdata.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace weakloc::ppo
{

using env::Action;

inline const double log_std_min = std::log(0.01);
inline const double log_std_max = std::log(1.0);
inline const double log_std_init = std::log(0.5);

/// Controller h(.; theta): a 2x box downsample of the observation, four
/// conv3x3/relu/maxpool blocks, a hidden dense layer, then an action-mean head and a
/// value head on the shared trunk. The Gaussian log-std is a state-independent parameter.
class PolicyNet
{
public:
    /// `resolution` is the side of environment observations.
    PolicyNet(std::size_t in_channels, std::size_t resolution, std::uint64_t seed);

    /// Network input for one environment observation: [C,R,R] -> [C,ceil(R/2),ceil(R/2)].
    [[nodiscard]] Tensor prepare(const Tensor &observation) const;

    struct Output {
        Tensor mean;  ///< [N,4], pre-tanh action means
        Tensor value; ///< [N,1], value in units of value_scale
    };

    /// Forward pass on a batch of prepared observations.
    Output forward(Tape &tape, const Tensor &batch) const;

    [[nodiscard]] const Tensor &log_std() const noexcept { return log_std_; }
    /// Log-std clamped to [ln 0.01, ln 1].
    [[nodiscard]] std::array<double, 4> effective_log_std() const;
    /// Project the log-std parameter back into its clamp range.
    void clamp_log_std();

    [[nodiscard]] std::size_t in_channels() const noexcept { return in_channels_; }
    [[nodiscard]] std::size_t resolution() const noexcept { return resolution_; }
    [[nodiscard]] ParameterList parameters() const;
    /// Deep copy with independent parameter storage.
    [[nodiscard]] PolicyNet clone() const;

    static constexpr std::array<std::size_t, 4> widths{8, 16, 32, 32};
    static constexpr std::size_t hidden = 64;
    static constexpr std::size_t input_pool = 2;

private:
    std::size_t in_channels_;
    std::size_t resolution_;
    std::size_t input_side_;
    std::vector<ConvBlock> blocks_;
    Dense hidden_;
    Dense mean_head_;
    Dense value_head_;
    Tensor log_std_;
};

/// Diagonal Gaussian log-density of `action` under N(mean, exp(log_std)^2).
double gaussian_log_prob(std::span<const double> action, std::span<const double> mean,
                         std::span<const double> log_std);

/// Differential entropy of the diagonal Gaussian.
double gaussian_entropy(std::span<const double> log_std);

enum class ActMode { sample, mean };

struct ActResult {
    Action raw_action;
    double log_prob;
    double value; ///< in return units
};

/// Act on a batch of environment observations. `rngs` (one per observation) is required in sample mode.
std::vector<ActResult> act_batch(const PolicyNet &policy, const std::vector<Tensor> &observations, ActMode mode,
                                 std::span<Rng> rngs, double value_scale);

ActResult act(const PolicyNet &policy, const Tensor &observation, ActMode mode, Rng *rng, double value_scale = 1.0);

/// returns_t = sum_k gamma^k R_{t+k}, by backward recursion.
std::vector<double> discounted_returns(std::span<const double> rewards, double gamma);

struct Trajectory {
    std::vector<Tensor> observations; ///< prepared policy inputs
    std::vector<Action> actions;
    std::vector<double> log_probs;
    std::vector<double> rewards;
    std::vector<double> values;
    double terminal_value = 0.0;

    [[nodiscard]] std::size_t size() const noexcept { return rewards.size(); }
};

struct Advantages {
    std::vector<double> advantages;
    std::vector<double> value_targets;
};

/// GAE(lambda): delta_t = R_t + gamma V_{t+1} - V_t, A_t = delta_t + gamma lambda A_{t+1},
/// with V_T the trajectory's terminal value; value targets are A_t + V_t.
Advantages gae_advantages(std::span<const double> rewards, std::span<const double> values, double terminal_value,
                          double gamma, double lambda);
Advantages gae_advantages(const Trajectory &trajectory, double gamma, double lambda);

/// Zero mean, unit standard deviation; all zeros when the spread is below 1e-8.
void normalize_advantages(std::vector<double> &advantages);

struct PPOConfig {
    double learning_rate = 0.0003;
    std::size_t minibatch_size = 128;
    double entropy_coef = 0.001;
    double clip_epsilon = 0.2;
    double gamma = 0.99;
    double gae_lambda = 0.95;
    double value_coef = 0.5;
    std::size_t epochs_per_update = 4;
    std::size_t rollout_steps = 2048;
    std::size_t total_updates = 100;
    double max_grad_norm = 0.5;
    std::uint64_t seed = 0;
    /// Updates between validation evaluations (best-policy selection).
    std::size_t eval_interval = 10;
    std::size_t eval_images = 16;

    void validate() const;
    /// Values are predicted in units of 1/(1-gamma) (or T when gamma = 1).
    [[nodiscard]] double value_scale(std::size_t episode_length) const;
};

/// min(rho * A, clip(rho, 1-eps, 1+eps) * A).
double clipped_surrogate_term(double ratio, double advantage, double clip_epsilon);

struct UpdateBatch {
    std::vector<Tensor> observations; ///< prepared policy inputs
    std::vector<Action> actions;
    std::vector<double> old_log_probs;
    std::vector<double> advantages;    ///< already normalized
    std::vector<double> value_targets; ///< in return units

    [[nodiscard]] std::size_t size() const noexcept { return actions.size(); }
};

struct LossStats {
    double surrogate = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double clip_fraction = 0.0;
    double approx_kl = 0.0;
    double mean_ratio = 0.0;
    double max_ratio_deviation = 0.0;
    [[nodiscard]] double objective(const PPOConfig &c) const
    {
        return surrogate - c.value_coef * value_loss + c.entropy_coef * entropy;
    }
};

/// Evaluate the PPO objective terms on a batch without changing the policy.
LossStats evaluate_batch(const PolicyNet &policy, const UpdateBatch &batch, const PPOConfig &config, double value_scale);

/// Record the negated PPO objective on the tape for the batch rows in `rows`.
Tensor ppo_loss(Tape &tape, const PolicyNet::Output &out, const Tensor &log_std, const UpdateBatch &batch,
                std::span<const std::size_t> rows, const PPOConfig &config, double value_scale, LossStats *stats);

/// epochs_per_update passes of shuffled minibatch gradient steps. Throws on a non-finite loss.
LossStats ppo_update(PolicyNet &policy, Adam &optimizer, const UpdateBatch &batch, const PPOConfig &config,
                     double value_scale, Rng &rng);

struct UpdateRecord {
    std::size_t update;
    double mean_episode_reward;
    double surrogate;
    double entropy;
    double clip_fraction;
    double value_loss;
};

struct TrainOptions {
    std::size_t threads = 1;
    std::optional<std::filesystem::path> checkpoint_path;
    bool verbose = false;
};

struct TrainResult {
    PolicyNet policy;          ///< best-by-validation-reward policy
    PolicyNet final_policy;    ///< policy after the last update
    std::vector<UpdateRecord> curve;
    double best_validation_reward = 0.0;
    bool diverged = false;
};

/// Alternate rollouts on uniformly drawn training images with PPO updates.
/// Reads only images from `train` and `val`; never their boxes or masks.
TrainResult train_controller(const synth::Dataset &train, const synth::Dataset &val,
                             std::shared_ptr<const env::Scorer> scorer, const env::EnvConfig &env_config,
                             const PPOConfig &config, const TrainOptions &options = {});

/// Collect one batch of episodes with the given policy; exposed for tests.
struct Rollout {
    std::vector<Trajectory> trajectories;
    double mean_episode_reward = 0.0;
};
Rollout collect_rollout(const PolicyNet &policy, const env::CropEnv &environment, const synth::Dataset &images,
                        std::size_t episodes, std::uint64_t seed, double value_scale, std::size_t threads = 1);

/// Assemble trajectories into a normalized update batch.
UpdateBatch build_update_batch(const std::vector<Trajectory> &trajectories, const PPOConfig &config);

/// Mean per-step reward of deterministic episodes on the first `count` images.
double validation_reward(const PolicyNet &policy, const env::CropEnv &environment, const synth::Dataset &images,
                         std::size_t count);

enum class Selection { final_step, best_reward };

struct LocalizeOptions {
    std::size_t t_infer = 1024;
    Selection select = Selection::final_step;
    std::ostream *trace = nullptr;
};

/// One deterministic (mean-action) trajectory of t_infer steps.
env::CropRect localize(const Tensor &image, const PolicyNet &policy, const env::CropEnv &environment,
                       const LocalizeOptions &options);

void write_curve_csv(const std::filesystem::path &path, const std::vector<UpdateRecord> &curve);

/// Threads for rollout collection from WEAKLOC_THREADS (default 1).
std::size_t threads_from_env();

} // namespace weakloc::ppo

#endif

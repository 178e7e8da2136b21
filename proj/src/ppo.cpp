#include <weakloc/ppo.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <numeric>
#include <thread>

namespace weakloc::ppo
{

namespace
{

const double half_log_two_pi = 0.5 * std::log(2.0 * std::numbers::pi);

Tensor stack(const std::vector<Tensor> &items, std::span<const std::size_t> rows)
{
    const auto &s = items.at(rows.front()).shape();
    Shape shape{rows.size()};
    shape.insert(shape.end(), s.begin(), s.end());
    std::vector<double> values;
    values.reserve(shape_numel(shape));
    for (auto r : rows) {
        const auto &t = items.at(r);
        if (t.shape() != s) {
            throw ShapeError("observation " + shape_to_string(t.shape()) + " does not match " + shape_to_string(s));
        }
        values.insert(values.end(), t.data().begin(), t.data().end());
    }
    return Tensor::from(std::move(shape), std::move(values));
}

std::vector<std::size_t> iota(std::size_t n)
{
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

} // namespace

PolicyNet::PolicyNet(std::size_t in_channels, std::size_t resolution, std::uint64_t seed)
    : in_channels_(in_channels), resolution_(resolution),
      input_side_((resolution + input_pool - 1) / input_pool), blocks_([&] {
          Rng rng(seed);
          std::vector<ConvBlock> b;
          std::size_t c = in_channels;
          for (auto w : widths) {
              b.emplace_back(c, w, rng);
              c = w;
          }
          return b;
      }()),
      hidden_([&] {
          Rng rng(substream_seed(seed, 1));
          const auto side = pooled_side(input_side_, widths.size());
          return Dense(widths.back() * side * side, hidden, rng);
      }()),
      mean_head_([&] {
          Rng rng(substream_seed(seed, 2));
          Dense d(hidden, 4, rng);
          // Small initial means: the first episodes start from centred mid-size crops.
          for (double &w : d.weights.data()) {
              w *= 0.01;
          }
          return d;
      }()),
      value_head_([&] {
          Rng rng(substream_seed(seed, 3));
          return Dense(hidden, 1, rng);
      }()),
      log_std_(Tensor::full({4}, log_std_init, true))
{
}

Tensor PolicyNet::prepare(const Tensor &observation) const
{
    if (observation.rank() != 3 || observation.dim(0) != in_channels_ || observation.dim(1) != resolution_
        || observation.dim(2) != resolution_) {
        throw ShapeError("policy observation must be [" + std::to_string(in_channels_) + ","
                         + std::to_string(resolution_) + "," + std::to_string(resolution_) + "], got "
                         + shape_to_string(observation.shape()));
    }
    return box_downsample(observation, input_pool);
}

PolicyNet::Output PolicyNet::forward(Tape &tape, const Tensor &batch) const
{
    if (batch.rank() != 4 || batch.dim(1) != in_channels_ || batch.dim(2) != input_side_
        || batch.dim(3) != input_side_) {
        throw ShapeError("policy expects [N," + std::to_string(in_channels_) + "," + std::to_string(input_side_) + ","
                         + std::to_string(input_side_) + "], got " + shape_to_string(batch.shape()));
    }
    Tensor h = batch;
    for (const auto &b : blocks_) {
        h = b.forward(tape, h);
    }
    h = ops::flatten(tape, h);
    h = ops::activation(tape, hidden_.forward(tape, h), ops::Activation::relu);
    return {mean_head_.forward(tape, h), value_head_.forward(tape, h)};
}

std::array<double, 4> PolicyNet::effective_log_std() const
{
    std::array<double, 4> out{};
    for (std::size_t i = 0; i < 4; ++i) {
        out[i] = std::clamp(log_std_[i], log_std_min, log_std_max);
    }
    return out;
}

void PolicyNet::clamp_log_std()
{
    for (double &v : log_std_.data()) {
        v = std::clamp(v, log_std_min, log_std_max);
    }
}

ParameterList PolicyNet::parameters() const
{
    ParameterList out;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        blocks_[i].collect("policy.block" + std::to_string(i), out);
    }
    hidden_.collect("policy.hidden", out);
    mean_head_.collect("policy.mean", out);
    value_head_.collect("policy.value", out);
    out.push_back({"policy.log_std", log_std_});
    return out;
}

PolicyNet PolicyNet::clone() const
{
    PolicyNet copy(in_channels_, resolution_, 0);
    auto dst = copy.parameters();
    copy_parameters(parameters(), dst);
    return copy;
}

double gaussian_log_prob(std::span<const double> action, std::span<const double> mean, std::span<const double> log_std)
{
    double lp = 0.0;
    for (std::size_t d = 0; d < action.size(); ++d) {
        const double z = (action[d] - mean[d]) / std::exp(log_std[d]);
        lp += -0.5 * z * z - log_std[d] - half_log_two_pi;
    }
    return lp;
}

double gaussian_entropy(std::span<const double> log_std)
{
    double h = 0.0;
    for (double ls : log_std) {
        h += ls + 0.5 + half_log_two_pi;
    }
    return h;
}

namespace
{

std::vector<ActResult> act_prepared(const PolicyNet &policy, const std::vector<Tensor> &observations, ActMode mode,
                                    std::span<Rng> rngs, double value_scale)
{
    if (observations.empty()) {
        return {};
    }
    if (mode == ActMode::sample && rngs.size() != observations.size()) {
        throw Error("sample mode needs one RNG per observation");
    }
    Tape tape(false);
    const auto rows = iota(observations.size());
    const auto out = policy.forward(tape, stack(observations, rows));
    const auto ls = policy.effective_log_std();
    std::vector<ActResult> results(observations.size());
    for (std::size_t i = 0; i < observations.size(); ++i) {
        auto &r = results[i];
        std::array<double, 4> mean{};
        for (std::size_t d = 0; d < 4; ++d) {
            mean[d] = out.mean[i * 4 + d];
            if (!std::isfinite(mean[d])) {
                throw Error("policy produced a non-finite action mean");
            }
            r.raw_action[d] = mode == ActMode::sample ? rngs[i].normal(mean[d], std::exp(ls[d])) : mean[d];
        }
        r.log_prob = gaussian_log_prob(r.raw_action, mean, ls);
        r.value = out.value[i] * value_scale;
        if (!std::isfinite(r.value)) {
            throw Error("policy produced a non-finite value estimate");
        }
    }
    return results;
}

} // namespace

std::vector<ActResult> act_batch(const PolicyNet &policy, const std::vector<Tensor> &observations, ActMode mode,
                                 std::span<Rng> rngs, double value_scale)
{
    std::vector<Tensor> prepared;
    prepared.reserve(observations.size());
    for (const auto &o : observations) {
        prepared.push_back(policy.prepare(o));
    }
    return act_prepared(policy, prepared, mode, rngs, value_scale);
}

ActResult act(const PolicyNet &policy, const Tensor &observation, ActMode mode, Rng *rng, double value_scale)
{
    if (mode == ActMode::sample && rng == nullptr) {
        throw Error("sample mode needs an RNG");
    }
    std::span<Rng> rngs = rng != nullptr ? std::span<Rng>(rng, 1) : std::span<Rng>{};
    return act_batch(policy, {observation}, mode, rngs, value_scale).front();
}

std::vector<double> discounted_returns(std::span<const double> rewards, double gamma)
{
    if (rewards.empty()) {
        throw Error("discounted_returns of an empty reward sequence");
    }
    std::vector<double> out(rewards.size());
    double acc = 0.0;
    for (std::size_t t = rewards.size(); t-- > 0;) {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    return out;
}

Advantages gae_advantages(std::span<const double> rewards, std::span<const double> values, double terminal_value,
                          double gamma, double lambda)
{
    if (rewards.size() != values.size()) {
        throw ShapeError("gae: " + std::to_string(rewards.size()) + " rewards but " + std::to_string(values.size())
                         + " values");
    }
    Advantages out;
    out.advantages.resize(rewards.size());
    out.value_targets.resize(rewards.size());
    double next_value = terminal_value;
    double acc = 0.0;
    for (std::size_t t = rewards.size(); t-- > 0;) {
        const double delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lambda * acc;
        out.advantages[t] = acc;
        out.value_targets[t] = acc + values[t];
        next_value = values[t];
    }
    return out;
}

Advantages gae_advantages(const Trajectory &trajectory, double gamma, double lambda)
{
    return gae_advantages(trajectory.rewards, trajectory.values, trajectory.terminal_value, gamma, lambda);
}

void normalize_advantages(std::vector<double> &advantages)
{
    if (advantages.empty()) {
        return;
    }
    const double n = static_cast<double>(advantages.size());
    const double mean = std::accumulate(advantages.begin(), advantages.end(), 0.0) / n;
    double var = 0.0;
    for (double a : advantages) {
        var += (a - mean) * (a - mean);
    }
    const double sd = std::sqrt(var / n);
    for (double &a : advantages) {
        a = sd < 1e-8 ? 0.0 : (a - mean) / sd;
    }
}

void PPOConfig::validate() const
{
    if (!(gamma > 0.0 && gamma <= 1.0)) {
        throw Error("gamma must lie in (0, 1]");
    }
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) {
        throw Error("clip_epsilon must lie in (0, 1)");
    }
    if (minibatch_size < 2 || rollout_steps < 2 || epochs_per_update < 1) {
        throw Error("minibatch_size and rollout_steps must be >= 2, epochs_per_update >= 1");
    }
    if (!(learning_rate > 0.0)) {
        throw Error("learning_rate must be positive");
    }
}

double PPOConfig::value_scale(std::size_t episode_length) const
{
    return gamma < 1.0 ? 1.0 / (1.0 - gamma) : static_cast<double>(episode_length);
}

double clipped_surrogate_term(double ratio, double advantage, double clip_epsilon)
{
    const double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
    return std::min(ratio * advantage, clipped * advantage);
}

Tensor ppo_loss(Tape &tape, const PolicyNet::Output &out, const Tensor &log_std, const UpdateBatch &batch,
                std::span<const std::size_t> rows, const PPOConfig &config, double value_scale, LossStats *stats)
{
    const std::size_t n = rows.size();
    if (n < 1 || out.mean.dim(0) != n || out.value.dim(0) != n) {
        throw ShapeError("ppo_loss: network output rows do not match the minibatch");
    }
    std::array<double, 4> ls{};
    for (std::size_t d = 0; d < 4; ++d) {
        ls[d] = std::clamp(log_std[d], log_std_min, log_std_max);
    }
    const double eps = config.clip_epsilon;
    const double inv_n = 1.0 / static_cast<double>(n);

    // Per-row coefficient of d(log pi)/d(theta) in d(surrogate)/d(theta).
    std::vector<double> weight(n, 0.0);
    LossStats s;
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = rows[i];
        const auto mean = std::span<const double>(out.mean.data().data() + i * 4, 4);
        const double lp = gaussian_log_prob(batch.actions[r], mean, ls);
        const double log_ratio = lp - batch.old_log_probs[r];
        const double ratio = std::exp(log_ratio);
        const double adv = batch.advantages[r];
        s.surrogate += clipped_surrogate_term(ratio, adv, eps);
        const bool clipped = std::abs(ratio - 1.0) > eps;
        s.clip_fraction += clipped ? 1.0 : 0.0;
        const bool blocked = (adv > 0.0 && ratio > 1.0 + eps) || (adv < 0.0 && ratio < 1.0 - eps);
        weight[i] = blocked ? 0.0 : ratio * adv;
        const double diff = out.value[i] - batch.value_targets[r] / value_scale;
        s.value_loss += diff * diff;
        s.approx_kl += (ratio - 1.0) - log_ratio;
        s.mean_ratio += ratio;
        s.max_ratio_deviation = std::max(s.max_ratio_deviation, std::abs(ratio - 1.0));
    }
    s.surrogate *= inv_n;
    s.value_loss *= inv_n;
    s.clip_fraction *= inv_n;
    s.approx_kl *= inv_n;
    s.mean_ratio *= inv_n;
    s.entropy = gaussian_entropy(ls);
    if (stats != nullptr) {
        *stats = s;
    }

    auto loss = Tensor::scalar(-s.surrogate + config.value_coef * s.value_loss - config.entropy_coef * s.entropy);
    if (!std::isfinite(loss.item())) {
        throw Error("non-finite PPO loss (surrogate " + std::to_string(s.surrogate) + ", value loss "
                    + std::to_string(s.value_loss) + ", entropy " + std::to_string(s.entropy) + ")");
    }
    const Tensor mean_t = out.mean;
    const Tensor value_t = out.value;
    if (tape.tracks({&mean_t, &value_t, &log_std})) {
        std::vector<std::size_t> row_ids(rows.begin(), rows.end());
        tape.record(loss, [mean_t, value_t, log_std, loss, weight = std::move(weight), row_ids = std::move(row_ids),
                           ls, &batch, config, value_scale, inv_n]() {
            const double g = loss.grad()[0];
            std::array<double, 4> g_ls{};
            const bool mean_grad = mean_t.requires_grad();
            for (std::size_t i = 0; i < row_ids.size(); ++i) {
                const auto r = row_ids[i];
                for (std::size_t d = 0; d < 4; ++d) {
                    const double var = std::exp(2 * ls[d]);
                    const double diff = batch.actions[r][d] - mean_t[i * 4 + d];
                    if (mean_grad) {
                        mean_t.grad()[i * 4 + d] += g * -inv_n * weight[i] * diff / var;
                    }
                    g_ls[d] += -inv_n * weight[i] * (diff * diff / var - 1.0);
                }
                if (value_t.requires_grad()) {
                    value_t.grad()[i] += g * config.value_coef * 2.0
                                         * (value_t[i] - batch.value_targets[r] / value_scale) * inv_n;
                }
            }
            if (log_std.requires_grad()) {
                auto gl = log_std.grad();
                for (std::size_t d = 0; d < 4; ++d) {
                    if (log_std[d] < log_std_min || log_std[d] > log_std_max) {
                        continue;
                    }
                    gl[d] += g * (g_ls[d] - config.entropy_coef);
                }
            }
        });
    }
    return loss;
}

LossStats evaluate_batch(const PolicyNet &policy, const UpdateBatch &batch, const PPOConfig &config, double value_scale)
{
    LossStats total;
    constexpr std::size_t chunk = 64;
    const auto all = iota(batch.size());
    for (std::size_t start = 0; start < all.size(); start += chunk) {
        const auto rows = std::span<const std::size_t>(all).subspan(start, std::min(chunk, all.size() - start));
        Tape tape(false);
        const auto out = policy.forward(tape, stack(batch.observations, rows));
        LossStats s;
        (void)ppo_loss(tape, out, policy.log_std(), batch, rows, config, value_scale, &s);
        const double w = static_cast<double>(rows.size()) / static_cast<double>(all.size());
        total.surrogate += s.surrogate * w;
        total.value_loss += s.value_loss * w;
        total.clip_fraction += s.clip_fraction * w;
        total.approx_kl += s.approx_kl * w;
        total.mean_ratio += s.mean_ratio * w;
        total.max_ratio_deviation = std::max(total.max_ratio_deviation, s.max_ratio_deviation);
        total.entropy = s.entropy;
    }
    return total;
}

LossStats ppo_update(PolicyNet &policy, Adam &optimizer, const UpdateBatch &batch, const PPOConfig &config,
                     double value_scale, Rng &rng)
{
    if (batch.size() < 2) {
        throw Error("ppo_update needs at least 2 samples");
    }
    auto order = iota(batch.size());
    LossStats mean_stats;
    std::size_t steps = 0;
    for (std::size_t epoch = 0; epoch < config.epochs_per_update; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        for (std::size_t start = 0; start < order.size(); start += config.minibatch_size) {
            const auto rows =
                std::span<const std::size_t>(order).subspan(start, std::min(config.minibatch_size, order.size() - start));
            optimizer.zero_grad();
            Tape tape;
            const auto out = policy.forward(tape, stack(batch.observations, rows));
            LossStats s;
            auto loss = ppo_loss(tape, out, policy.log_std(), batch, rows, config, value_scale, &s);
            tape.backward(loss);
            optimizer.step();
            policy.clamp_log_std();
            mean_stats.surrogate += s.surrogate;
            mean_stats.value_loss += s.value_loss;
            mean_stats.clip_fraction += s.clip_fraction;
            mean_stats.approx_kl += s.approx_kl;
            mean_stats.entropy = s.entropy;
            ++steps;
        }
    }
    const double k = static_cast<double>(steps);
    mean_stats.surrogate /= k;
    mean_stats.value_loss /= k;
    mean_stats.clip_fraction /= k;
    mean_stats.approx_kl /= k;
    return mean_stats;
}

namespace
{

void run_episodes(const PolicyNet &policy, const env::CropEnv &environment, const synth::Dataset &images,
                  std::size_t first, std::size_t last, std::uint64_t seed, double value_scale,
                  std::vector<Trajectory> &out)
{
    const std::size_t count = last - first;
    if (count == 0) {
        return;
    }
    const std::size_t T = environment.config().episode_length;
    std::vector<Rng> rngs;
    std::vector<env::EnvState> states;
    for (std::size_t e = first; e < last; ++e) {
        rngs.emplace_back(substream_seed(seed, e));
        const auto idx = static_cast<std::size_t>(rngs.back().integer(0, static_cast<std::int64_t>(images.size()) - 1));
        states.push_back(environment.reset(images.image(idx)));
    }
    for (std::size_t t = 0; t < T; ++t) {
        std::vector<Tensor> obs;
        obs.reserve(count);
        for (const auto &s : states) {
            obs.push_back(policy.prepare(environment.observe(s)));
        }
        const auto acts = act_prepared(policy, obs, ActMode::sample, rngs, value_scale);
        std::vector<Tensor> crops;
        crops.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            crops.push_back(environment.transition(states[i], acts[i].raw_action));
        }
        const auto rewards = environment.scorer().score_batch(crops);
        for (std::size_t i = 0; i < count; ++i) {
            auto &tr = out[first + i];
            tr.observations.push_back(std::move(obs[i]));
            tr.actions.push_back(acts[i].raw_action);
            tr.log_probs.push_back(acts[i].log_prob);
            tr.rewards.push_back(rewards[i]);
            tr.values.push_back(acts[i].value);
        }
    }
    // Episodes end on a time limit, so the tail is bootstrapped from the value of the last state.
    std::vector<Tensor> last_obs;
    for (const auto &s : states) {
        last_obs.push_back(environment.observe(s));
    }
    const auto tail = act_batch(policy, last_obs, ActMode::mean, {}, value_scale);
    for (std::size_t i = 0; i < count; ++i) {
        out[first + i].terminal_value = tail[i].value;
    }
}

} // namespace

Rollout collect_rollout(const PolicyNet &policy, const env::CropEnv &environment, const synth::Dataset &images,
                        std::size_t episodes, std::uint64_t seed, double value_scale, std::size_t threads)
{
    if (images.empty()) {
        throw Error("rollout needs at least one image");
    }
    Rollout r;
    r.trajectories.resize(episodes);
    threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(episodes, 1));
    if (threads == 1) {
        run_episodes(policy, environment, images, 0, episodes, seed, value_scale, r.trajectories);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(threads);
        const std::size_t per = (episodes + threads - 1) / threads;
        for (std::size_t k = 0; k < threads; ++k) {
            const std::size_t first = std::min(episodes, k * per);
            const std::size_t last = std::min(episodes, first + per);
            pool.emplace_back([&, k, first, last] {
                try {
                    run_episodes(policy, environment, images, first, last, seed, value_scale, r.trajectories);
                } catch (...) {
                    errors[k] = std::current_exception();
                }
            });
        }
        for (auto &t : pool) {
            t.join();
        }
        for (auto &e : errors) {
            if (e) {
                std::rethrow_exception(e);
            }
        }
    }
    double total = 0.0;
    std::size_t steps = 0;
    for (const auto &tr : r.trajectories) {
        total += std::accumulate(tr.rewards.begin(), tr.rewards.end(), 0.0);
        steps += tr.size();
    }
    r.mean_episode_reward = steps == 0 ? 0.0 : total / static_cast<double>(steps);
    return r;
}

UpdateBatch build_update_batch(const std::vector<Trajectory> &trajectories, const PPOConfig &config)
{
    UpdateBatch b;
    for (const auto &tr : trajectories) {
        const auto adv = gae_advantages(tr, config.gamma, config.gae_lambda);
        b.observations.insert(b.observations.end(), tr.observations.begin(), tr.observations.end());
        b.actions.insert(b.actions.end(), tr.actions.begin(), tr.actions.end());
        b.old_log_probs.insert(b.old_log_probs.end(), tr.log_probs.begin(), tr.log_probs.end());
        b.advantages.insert(b.advantages.end(), adv.advantages.begin(), adv.advantages.end());
        b.value_targets.insert(b.value_targets.end(), adv.value_targets.begin(), adv.value_targets.end());
    }
    normalize_advantages(b.advantages);
    return b;
}

double validation_reward(const PolicyNet &policy, const env::CropEnv &environment, const synth::Dataset &images,
                         std::size_t count)
{
    count = std::min(count, images.size());
    if (count == 0) {
        return 0.0;
    }
    std::vector<env::EnvState> states;
    for (std::size_t i = 0; i < count; ++i) {
        states.push_back(environment.reset(images.image(i)));
    }
    double total = 0.0;
    for (std::size_t t = 0; t < environment.config().episode_length; ++t) {
        std::vector<Tensor> obs;
        for (const auto &s : states) {
            obs.push_back(environment.observe(s));
        }
        const auto acts = act_batch(policy, obs, ActMode::mean, {}, 1.0);
        std::vector<Tensor> crops;
        for (std::size_t i = 0; i < count; ++i) {
            crops.push_back(environment.transition(states[i], acts[i].raw_action));
        }
        for (double r : environment.scorer().score_batch(crops)) {
            total += r;
        }
    }
    return total / static_cast<double>(count * environment.config().episode_length);
}

TrainResult train_controller(const synth::Dataset &train, const synth::Dataset &val,
                             std::shared_ptr<const env::Scorer> scorer, const env::EnvConfig &env_config,
                             const PPOConfig &config, const TrainOptions &options)
{
    config.validate();
    if (train.empty()) {
        throw Error("controller training needs a non-empty train split");
    }
    const env::CropEnv environment(std::move(scorer), env_config);
    const double value_scale = config.value_scale(env_config.episode_length);
    const std::size_t episodes = std::max<std::size_t>(1, config.rollout_steps / env_config.episode_length);

    PolicyNet policy(env_config.observation_channels(), env_config.resolution, config.seed);
    AdamConfig adam_config;
    adam_config.learning_rate = config.learning_rate;
    adam_config.max_grad_norm = config.max_grad_norm;
    Adam optimizer(policy.parameters(), adam_config);
    Rng update_rng(substream_seed(config.seed, 0xB47C));

    TrainResult result{policy.clone(), policy.clone(), {}, -std::numeric_limits<double>::infinity(), false};
    const auto &val_images = val.empty() ? train : val;

    for (std::size_t u = 0; u < config.total_updates; ++u) {
        const auto last_good = policy.clone();
        const auto rollout = collect_rollout(policy, environment, train, episodes,
                                             substream_seed(config.seed, 1000 + u), value_scale, options.threads);
        const auto batch = build_update_batch(rollout.trajectories, config);
        LossStats stats;
        try {
            stats = ppo_update(policy, optimizer, batch, config, value_scale, update_rng);
        } catch (const Error &e) {
            if (options.verbose) {
                std::cerr << "update " << u + 1 << " diverged: " << e.what() << '\n';
            }
            auto dst = policy.parameters();
            copy_parameters(last_good.parameters(), dst);
            result.diverged = true;
            break;
        }
        result.curve.push_back({u + 1, rollout.mean_episode_reward, stats.surrogate, stats.entropy,
                                stats.clip_fraction, stats.value_loss});
        if (options.verbose) {
            std::cerr << "update " << u + 1 << " reward " << rollout.mean_episode_reward << " entropy "
                      << stats.entropy << " clip " << stats.clip_fraction << " vloss " << stats.value_loss << '\n';
        }
        const bool last = u + 1 == config.total_updates;
        if ((config.eval_interval > 0 && (u + 1) % config.eval_interval == 0) || last) {
            const double v = validation_reward(policy, environment, val_images, config.eval_images);
            if (v > result.best_validation_reward) {
                result.best_validation_reward = v;
                auto dst = result.policy.parameters();
                copy_parameters(policy.parameters(), dst);
                if (options.checkpoint_path) {
                    save_checkpoint(*options.checkpoint_path, policy.parameters());
                }
            }
        }
    }
    if (result.diverged && result.best_validation_reward == -std::numeric_limits<double>::infinity()) {
        auto dst = result.policy.parameters();
        copy_parameters(policy.parameters(), dst);
        if (options.checkpoint_path) {
            save_checkpoint(*options.checkpoint_path, policy.parameters());
        }
    }
    auto dst = result.final_policy.parameters();
    copy_parameters(policy.parameters(), dst);
    return result;
}

env::CropRect localize(const Tensor &image, const PolicyNet &policy, const env::CropEnv &environment,
                       const LocalizeOptions &options)
{
    auto state = environment.reset(image);
    env::CropRect best_rect = state.rect;
    double best_reward = -std::numeric_limits<double>::infinity();
    double reward = 0.0;
    const bool need_reward = options.select == Selection::best_reward || options.trace != nullptr;
    for (std::size_t t = 0; t < options.t_infer; ++t) {
        if (state.step >= environment.config().episode_length) {
            // Inference horizons may exceed the training episode length; continue from the current crop.
            state.step = 0;
        }
        const auto previous = state.rect;
        const auto a = act(policy, environment.observe(state), ActMode::mean, nullptr);
        const auto &crop = environment.transition(state, a.raw_action);
        if (need_reward) {
            reward = environment.scorer().score(crop);
            if (options.trace != nullptr) {
                *options.trace << t + 1 << ' ' << state.rect.cx << ' ' << state.rect.cy << ' ' << state.rect.w << ' '
                               << state.rect.h << ' ' << reward << '\n';
            }
            if (reward > best_reward) {
                best_reward = reward;
                best_rect = state.rect;
            }
        }
        // Same rectangle => same observation => same action from here on.
        if (t > 0 && state.rect == previous && options.trace == nullptr) {
            break;
        }
    }
    return options.select == Selection::best_reward ? best_rect : state.rect;
}

void write_curve_csv(const std::filesystem::path &path, const std::vector<UpdateRecord> &curve)
{
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw Error("cannot write " + path.string());
    }
    os << "update,mean_episode_reward,surrogate,entropy,clip_fraction\n";
    os.precision(17);
    for (const auto &r : curve) {
        os << r.update << ',' << r.mean_episode_reward << ',' << r.surrogate << ',' << r.entropy << ','
           << r.clip_fraction << '\n';
    }
}

std::size_t threads_from_env()
{
    if (const char *v = std::getenv("WEAKLOC_THREADS")) {
        try {
            const auto n = std::stoul(v);
            return std::max<std::size_t>(1, n);
        } catch (const std::exception &) {
            throw Error(std::string("WEAKLOC_THREADS must be a positive integer, got '") + v + "'");
        }
    }
    return 1;
}

} // namespace weakloc::ppo

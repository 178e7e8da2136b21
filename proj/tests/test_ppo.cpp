#include "support.hpp"

#include <weakloc/ppo.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>

using namespace weakloc;
using namespace weakloc::ppo;

namespace
{

constexpr std::size_t side = 16;

std::vector<double> naive_returns(const std::vector<double> &r, double gamma)
{
    std::vector<double> out(r.size(), 0.0);
    for (std::size_t t = 0; t < r.size(); ++t) {
        double g = 1.0;
        for (std::size_t k = t; k < r.size(); ++k) {
            out[t] += g * r[k];
            g *= gamma;
        }
    }
    return out;
}

synth::Dataset small_images(std::size_t n, std::uint64_t seed)
{
    synth::SynthConfig c;
    c.image_side = 24;
    c.train_count = n;
    c.val_count = 0;
    c.holdout_count = 0;
    return synth::generate_in_memory(c, seed).train;
}

env::EnvConfig small_env(env::Variant v = env::Variant::config3, std::size_t episode_length = 4)
{
    env::EnvConfig c;
    c.variant = v;
    c.episode_length = episode_length;
    c.resolution = side;
    return c;
}

PPOConfig small_ppo()
{
    PPOConfig c;
    c.rollout_steps = 64;
    c.minibatch_size = 32;
    c.total_updates = 3;
    c.eval_interval = 1;
    c.eval_images = 4;
    return c;
}

} // namespace

TEST(GaussianLogProb, AtMeanWithHalfStd)
{
    const std::array<double, 4> zero{0, 0, 0, 0};
    const std::array<double, 4> ls{log_std_init, log_std_init, log_std_init, log_std_init};
    const double expected = 4 * -std::log(0.5 * std::sqrt(2 * std::numbers::pi));
    EXPECT_NEAR(gaussian_log_prob(zero, zero, ls), expected, 1e-12);
    EXPECT_NEAR(gaussian_log_prob(zero, zero, ls), -0.90308, 1e-3);
}

TEST(GaussianLogProb, IntegratesToNormalCdfOnMarginal)
{
    // Simpson integration of the analytic density against the closed-form CDF.
    const std::array<double, 1> mu{0.3};
    const std::array<double, 1> ls{std::log(0.7)};
    const double sigma = 0.7;
    auto density = [&](double x) {
        const std::array<double, 1> a{x};
        return std::exp(gaussian_log_prob(a, mu, ls));
    };
    auto cdf = [&](double x) { return 0.5 * std::erfc(-(x - mu[0]) / (sigma * std::numbers::sqrt2)); };
    for (auto [lo, hi] : {std::pair{-1.0, 0.5}, std::pair{0.0, 2.0}, std::pair{-5.0, 5.0}}) {
        const int n = 2000;
        const double h = (hi - lo) / n;
        double s = density(lo) + density(hi);
        for (int i = 1; i < n; ++i) {
            s += (i % 2 == 1 ? 4.0 : 2.0) * density(lo + i * h);
        }
        EXPECT_NEAR(s * h / 3.0, cdf(hi) - cdf(lo), 1e-6);
    }
}

TEST(GaussianEntropy, MatchesClosedForm)
{
    const std::array<double, 4> ls{0.0, std::log(0.5), std::log(0.1), std::log(0.9)};
    double expected = 0.0;
    for (double l : ls) {
        expected += 0.5 * std::log(2 * std::numbers::pi * std::numbers::e * std::exp(2 * l));
    }
    EXPECT_NEAR(gaussian_entropy(ls), expected, 1e-12);
}

TEST(Act, MeanModeDeterministicAndSampleSpread)
{
    PolicyNet policy(3, side, 5);
    Rng img_rng(1);
    const auto obs = weakloc::testing::random_tensor({3, side, side}, img_rng, 0, 1);
    const auto a = act(policy, obs, ActMode::mean, nullptr);
    const auto b = act(policy, obs, ActMode::mean, nullptr);
    EXPECT_EQ(a.raw_action, b.raw_action);
    EXPECT_NEAR(a.log_prob, 4 * -std::log(0.5 * std::sqrt(2 * std::numbers::pi)), 1e-12);

    Rng rng(2);
    const std::size_t n = 10000;
    std::array<double, 4> sum{}, sum2{};
    for (std::size_t i = 0; i < n; ++i) {
        const auto s = act(policy, obs, ActMode::sample, &rng);
        for (std::size_t d = 0; d < 4; ++d) {
            const double x = s.raw_action[d] - a.raw_action[d];
            sum[d] += x;
            sum2[d] += x * x;
        }
    }
    for (std::size_t d = 0; d < 4; ++d) {
        const double mean = sum[d] / n;
        const double sd = std::sqrt(sum2[d] / n - mean * mean);
        EXPECT_NEAR(sd, 0.5, 0.05 * 0.5) << d;
    }
    EXPECT_THROW((void)act(policy, obs, ActMode::sample, nullptr), Error);
    EXPECT_THROW((void)act(policy, Tensor::zeros({6, side, side}), ActMode::mean, nullptr), ShapeError);
}

TEST(PolicyNet, LogStdStartsAtHalfAndClamps)
{
    PolicyNet policy(6, side, 1);
    for (double v : policy.effective_log_std()) {
        EXPECT_DOUBLE_EQ(v, std::log(0.5));
    }
    Tensor handle = policy.log_std();
    handle[0] = 3.0;
    handle[1] = -30.0;
    EXPECT_DOUBLE_EQ(policy.effective_log_std()[0], log_std_max);
    EXPECT_DOUBLE_EQ(policy.effective_log_std()[1], log_std_min);
    policy.clamp_log_std();
    EXPECT_DOUBLE_EQ(policy.log_std()[0], 0.0);
    EXPECT_DOUBLE_EQ(policy.log_std()[1], std::log(0.01));
}

TEST(PolicyNet, CloneIsIndependent)
{
    PolicyNet policy(3, side, 4);
    auto copy = policy.clone();
    const auto p = policy.parameters();
    const auto q = copy.parameters();
    ASSERT_EQ(p.size(), q.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        EXPECT_EQ(p[i].name, q[i].name);
        for (std::size_t j = 0; j < p[i].value.numel(); ++j) {
            ASSERT_EQ(p[i].value[j], q[i].value[j]);
        }
    }
    Tensor handle = copy.log_std();
    handle[0] = 0.0;
    EXPECT_DOUBLE_EQ(policy.log_std()[0], log_std_init);
}

TEST(DiscountedReturns, WorkedExamples)
{
    const std::vector<double> r{1, 2, 3};
    EXPECT_EQ(discounted_returns(r, 0.0), r);
    const auto g1 = discounted_returns(r, 1.0);
    EXPECT_DOUBLE_EQ(g1[0], 6);
    EXPECT_DOUBLE_EQ(g1[1], 5);
    EXPECT_DOUBLE_EQ(g1[2], 3);
    const auto g = discounted_returns(std::vector<double>{1, 1, 1}, 0.99);
    EXPECT_NEAR(g[0], 2.9701, 1e-12);
    EXPECT_NEAR(g[1], 1.99, 1e-12);
    EXPECT_NEAR(g[2], 1.0, 1e-12);
    EXPECT_THROW((void)discounted_returns(std::vector<double>{}, 0.9), Error);
}

TEST(DiscountedReturns, MatchesNaiveDoubleSum)
{
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> r(1 + rng.integer(0, 60));
        for (double &v : r) {
            v = rng.uniform(0, 1);
        }
        const double gamma = rng.uniform(0, 1);
        const auto fast = discounted_returns(r, gamma);
        const auto slow = naive_returns(r, gamma);
        for (std::size_t t = 0; t < r.size(); ++t) {
            ASSERT_NEAR(fast[t], slow[t], 1e-12);
        }
    }
}

TEST(Gae, LambdaOneZeroTerminalIsReturnsMinusValues)
{
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.integer(0, 30);
        std::vector<double> r(n), v(n);
        for (std::size_t i = 0; i < n; ++i) {
            r[i] = rng.uniform(0, 1);
            v[i] = rng.uniform(-2, 2);
        }
        const auto adv = gae_advantages(r, v, 0.0, 0.97, 1.0);
        const auto ret = naive_returns(r, 0.97);
        for (std::size_t t = 0; t < n; ++t) {
            ASSERT_NEAR(adv.advantages[t], ret[t] - v[t], 1e-12);
            ASSERT_NEAR(adv.value_targets[t], ret[t], 1e-12);
        }
    }
    const std::vector<double> r{0.2, 0.9, 0.4};
    const auto zero = gae_advantages(r, std::vector<double>(3, 0.0), 0.0, 0.9, 1.0);
    const auto ret = discounted_returns(r, 0.9);
    for (std::size_t t = 0; t < 3; ++t) {
        EXPECT_NEAR(zero.advantages[t], ret[t], 1e-15);
    }
}

TEST(Gae, LambdaZeroIsOneStepTd)
{
    const std::vector<double> r{0.3, 0.8, 0.1};
    const std::vector<double> v{1.0, -0.5, 2.0};
    const double terminal = 0.7, gamma = 0.9;
    const auto adv = gae_advantages(r, v, terminal, gamma, 0.0);
    EXPECT_NEAR(adv.advantages[0], r[0] + gamma * v[1] - v[0], 1e-15);
    EXPECT_NEAR(adv.advantages[1], r[1] + gamma * v[2] - v[1], 1e-15);
    EXPECT_NEAR(adv.advantages[2], r[2] + gamma * terminal - v[2], 1e-15);
}

TEST(Gae, SingleStepAndLengthMismatch)
{
    const auto adv = gae_advantages(std::vector<double>{1.0}, std::vector<double>{0.5}, 0.0, 0.99, 0.95);
    EXPECT_DOUBLE_EQ(adv.advantages[0], 0.5);
    EXPECT_THROW((void)gae_advantages(std::vector<double>{1.0, 2.0}, std::vector<double>{0.5}, 0.0, 0.99, 0.95),
                 ShapeError);
}

TEST(NormalizeAdvantages, ZeroMeanUnitStdAndGuard)
{
    std::vector<double> a{1, 2, 3, 4, 10};
    normalize_advantages(a);
    double m = 0, s = 0;
    for (double x : a) {
        m += x;
    }
    m /= 5;
    for (double x : a) {
        s += (x - m) * (x - m);
    }
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(std::sqrt(s / 5), 1.0, 1e-12);

    std::vector<double> flat(7, 0.25);
    normalize_advantages(flat);
    for (double x : flat) {
        EXPECT_EQ(x, 0.0);
    }
}

TEST(ClippedSurrogate, WorkedExamples)
{
    EXPECT_DOUBLE_EQ(clipped_surrogate_term(1.5, 1.0, 0.2), 1.2);
    EXPECT_DOUBLE_EQ(clipped_surrogate_term(0.5, -1.0, 0.2), -0.8);
    EXPECT_DOUBLE_EQ(clipped_surrogate_term(1.0, 0.7, 0.2), 0.7);
    // The pessimistic minimum keeps the unclipped value when it is lower.
    EXPECT_DOUBLE_EQ(clipped_surrogate_term(0.5, 1.0, 0.2), 0.5);
    EXPECT_DOUBLE_EQ(clipped_surrogate_term(1.5, -1.0, 0.2), -1.5);
}

TEST(PPOConfig, DefaultsAndValidation)
{
    const PPOConfig c;
    EXPECT_DOUBLE_EQ(c.learning_rate, 0.0003);
    EXPECT_EQ(c.minibatch_size, 128u);
    EXPECT_DOUBLE_EQ(c.entropy_coef, 0.001);
    EXPECT_NEAR(c.value_scale(16), 100.0, 1e-12);
    PPOConfig bad;
    bad.gamma = 0.0;
    EXPECT_THROW(bad.validate(), Error);
    bad = PPOConfig{};
    bad.clip_epsilon = 1.0;
    EXPECT_THROW(bad.validate(), Error);
    bad = PPOConfig{};
    bad.gamma = 1.0;
    EXPECT_DOUBLE_EQ(bad.value_scale(16), 16.0);
}

namespace
{

struct Fixture {
    synth::Dataset images = small_images(6, 3);
    std::shared_ptr<const env::Scorer> scorer = std::make_shared<env::MeanIntensityScorer>();
    env::CropEnv environment{scorer, small_env()};
    PPOConfig config = small_ppo();
    double scale = config.value_scale(4);
};

} // namespace

TEST(PpoLoss, IdenticalPoliciesGiveUnitRatio)
{
    Fixture f;
    PolicyNet policy(6, side, 7);
    const auto rollout = collect_rollout(policy, f.environment, f.images, 8, 11, f.scale);
    const auto batch = build_update_batch(rollout.trajectories, f.config);
    ASSERT_EQ(batch.size(), 32u);
    const auto stats = evaluate_batch(policy, batch, f.config, f.scale);
    EXPECT_NEAR(stats.mean_ratio, 1.0, 1e-12);
    EXPECT_LT(stats.max_ratio_deviation, 1e-12);
    EXPECT_EQ(stats.clip_fraction, 0.0);
    // Ratio 1 makes clipped and unclipped surrogates equal: the mean normalized advantage.
    double mean_adv = 0.0;
    for (double a : batch.advantages) {
        mean_adv += a;
    }
    EXPECT_NEAR(stats.surrogate, mean_adv / 32.0, 1e-12);
}

TEST(PpoLoss, AnalyticGradientMatchesFiniteDifferences)
{
    Rng rng(21);
    const std::size_t n = 6;
    UpdateBatch batch;
    auto mean = weakloc::testing::random_tensor({n, 4}, rng, -1, 1, true);
    auto value = weakloc::testing::random_tensor({n, 1}, rng, -1, 1, true);
    auto log_std = weakloc::testing::random_tensor({4}, rng, -1.5, -0.3, true);
    std::vector<double> ls(log_std.data().begin(), log_std.data().end());
    const std::array<double, 6> log_ratio{0.05, -0.1, 0.6, -0.7, 0.02, 0.4};
    for (std::size_t i = 0; i < n; ++i) {
        Action a{};
        for (auto &x : a) {
            x = rng.normal(0, 0.8);
        }
        batch.actions.push_back(a);
        const auto m = std::span<const double>(mean.data().data() + i * 4, 4);
        batch.old_log_probs.push_back(gaussian_log_prob(a, m, ls) - log_ratio[i]);
        batch.advantages.push_back(i % 2 == 0 ? rng.uniform(0.2, 1.5) : -rng.uniform(0.2, 1.5));
        batch.value_targets.push_back(rng.uniform(0, 80));
    }
    const std::vector<std::size_t> rows{0, 1, 2, 3, 4, 5};
    PPOConfig config;
    config.entropy_coef = 0.05;
    const double err = weakloc::testing::gradient_check({mean, value, log_std}, [&](Tape &t) {
        return ppo_loss(t, PolicyNet::Output{mean, value}, log_std, batch, rows, config, 100.0, nullptr);
    });
    EXPECT_LT(err, 1e-6);

    LossStats stats;
    Tape tape(false);
    (void)ppo_loss(tape, PolicyNet::Output{mean, value}, log_std, batch, rows, config, 100.0, &stats);
    EXPECT_NEAR(stats.clip_fraction, 3.0 / 6.0, 1e-12);
}

TEST(PpoLoss, NonFiniteLossIsAnError)
{
    UpdateBatch batch;
    batch.actions.push_back({0, 0, 0, 0});
    batch.old_log_probs.push_back(0.0);
    batch.advantages.push_back(1.0);
    batch.value_targets.push_back(std::nan(""));
    const std::vector<std::size_t> rows{0};
    Tape tape(false);
    const PolicyNet::Output out{Tensor::zeros({1, 4}), Tensor::zeros({1, 1})};
    EXPECT_THROW((void)ppo_loss(tape, out, Tensor::full({4}, log_std_init), batch, rows, PPOConfig{}, 1.0, nullptr),
                 Error);
}

TEST(PpoUpdate, OneStepIncreasesSurrogate)
{
    Fixture f;
    PolicyNet policy(6, side, 9);
    const auto rollout = collect_rollout(policy, f.environment, f.images, 16, 12, f.scale);
    auto config = f.config;
    config.learning_rate = 1e-4;
    config.value_coef = 0.0;
    config.entropy_coef = 0.0;
    config.epochs_per_update = 1;
    const auto batch = build_update_batch(rollout.trajectories, config);
    config.minibatch_size = batch.size();
    const double before = evaluate_batch(policy, batch, config, f.scale).surrogate;
    AdamConfig ac;
    ac.learning_rate = config.learning_rate;
    Adam optimizer(policy.parameters(), ac);
    Rng rng(1);
    (void)ppo_update(policy, optimizer, batch, config, f.scale, rng);
    const double after = evaluate_batch(policy, batch, config, f.scale).surrogate;
    EXPECT_GT(after, before);
}

TEST(Rollout, ThreadCountDoesNotChangeTrajectories)
{
    Fixture f;
    PolicyNet policy(6, side, 2);
    const auto one = collect_rollout(policy, f.environment, f.images, 7, 5, f.scale, 1);
    const auto three = collect_rollout(policy, f.environment, f.images, 7, 5, f.scale, 3);
    ASSERT_EQ(one.trajectories.size(), 7u);
    for (std::size_t e = 0; e < 7; ++e) {
        const auto &a = one.trajectories[e];
        const auto &b = three.trajectories[e];
        ASSERT_EQ(a.size(), 4u);
        EXPECT_EQ(a.actions, b.actions);
        EXPECT_EQ(a.rewards, b.rewards);
        EXPECT_EQ(a.log_probs, b.log_probs);
        EXPECT_EQ(a.terminal_value, b.terminal_value);
    }
    EXPECT_EQ(one.mean_episode_reward, three.mean_episode_reward);
}

TEST(Rollout, TrajectoryListsAgree)
{
    Fixture f;
    PolicyNet policy(6, side, 2);
    const auto r = collect_rollout(policy, f.environment, f.images, 3, 8, f.scale);
    for (const auto &tr : r.trajectories) {
        EXPECT_EQ(tr.observations.size(), tr.size());
        EXPECT_EQ(tr.actions.size(), tr.size());
        EXPECT_EQ(tr.log_probs.size(), tr.size());
        EXPECT_EQ(tr.values.size(), tr.size());
        for (double rew : tr.rewards) {
            EXPECT_GT(rew, 0.0);
            EXPECT_LT(rew, 1.0);
        }
        EXPECT_EQ(tr.observations.front().shape(), (Shape{6, side / 2, side / 2}));
    }
}

TEST(TrainController, ReadsNoLocalizationLabels)
{
    Fixture f;
    const auto val = small_images(4, 9);
    f.images.audit().reset();
    val.audit().reset();
    const auto result = train_controller(f.images, val, f.scorer, small_env(), f.config);
    EXPECT_EQ(f.images.audit().total(), 0u);
    EXPECT_EQ(val.audit().total(), 0u);
    EXPECT_EQ(result.curve.size(), 3u);
    EXPECT_FALSE(result.diverged);
}

TEST(TrainController, ConstantRewardKeepsPolicyNearInitial)
{
    Fixture f;
    auto scorer = std::make_shared<env::ConstantScorer>(0.5);
    auto config = f.config;
    config.total_updates = 5;
    const auto result = train_controller(f.images, f.images, scorer, small_env(), config);
    for (const auto &u : result.curve) {
        EXPECT_DOUBLE_EQ(u.mean_episode_reward, 0.5);
    }
    const PolicyNet initial(6, side, config.seed);
    env::CropEnv environment(scorer, small_env());
    double drift = 0.0;
    for (std::size_t i = 0; i < f.images.size(); ++i) {
        const auto obs = environment.observe(environment.reset(f.images.image(i)));
        const auto a = act(initial, obs, ActMode::mean, nullptr);
        const auto b = act(result.final_policy, obs, ActMode::mean, nullptr);
        for (std::size_t d = 0; d < 4; ++d) {
            drift = std::max(drift, std::abs(a.raw_action[d] - b.raw_action[d]));
        }
    }
    EXPECT_LT(drift, 0.1);
    for (double v : result.final_policy.effective_log_std()) {
        EXPECT_NEAR(v, log_std_init, 0.05);
    }
}

TEST(Localize, DeterministicSingleStepAndBestReward)
{
    Fixture f;
    PolicyNet policy(6, side, 13);
    const auto &image = f.images.image(0);

    LocalizeOptions one;
    one.t_infer = 1;
    const auto first = act(policy, f.environment.observe(f.environment.reset(image)), ActMode::mean, nullptr);
    EXPECT_EQ(localize(image, policy, f.environment, one),
              env::apply_action(first.raw_action, Rect::full(), f.environment.config()));

    LocalizeOptions longer;
    longer.t_infer = 40;
    EXPECT_EQ(localize(image, policy, f.environment, longer), localize(image, policy, f.environment, longer));

    std::ostringstream trace;
    longer.trace = &trace;
    longer.select = Selection::best_reward;
    const auto best = localize(image, policy, f.environment, longer);
    std::istringstream is(trace.str());
    std::size_t t = 0, lines = 0;
    double cx = 0, cy = 0, w = 0, h = 0, reward = 0, best_reward = -1;
    Rect expected;
    while (is >> t >> cx >> cy >> w >> h >> reward) {
        ++lines;
        if (reward > best_reward) {
            best_reward = reward;
            expected = Rect{cx, cy, w, h};
        }
    }
    EXPECT_EQ(lines, 40u);
    EXPECT_NEAR(best.cx, expected.cx, 1e-5);
    EXPECT_NEAR(best.w, expected.w, 1e-5);
}

TEST(CurveCsv, WritesHeader)
{
    weakloc::testing::TempDir dir("ppo-csv");
    write_curve_csv(dir.path() / "c.csv", {{1, 0.4, 0.01, 2.7, 0.1, 0.02}});
    std::ifstream is(dir.path() / "c.csv");
    std::string header;
    std::getline(is, header);
    EXPECT_EQ(header, "update,mean_episode_reward,surrogate,entropy,clip_fraction");
}

TEST(ThreadsFromEnv, ParsesAndRejects)
{
    ::setenv("WEAKLOC_THREADS", "3", 1);
    EXPECT_EQ(threads_from_env(), 3u);
    ::setenv("WEAKLOC_THREADS", "zero", 1);
    EXPECT_THROW((void)threads_from_env(), Error);
    ::unsetenv("WEAKLOC_THREADS");
    EXPECT_EQ(threads_from_env(), 1u);
}

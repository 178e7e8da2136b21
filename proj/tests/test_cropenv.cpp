#include "support.hpp"

#include <weakloc/cropenv.hpp>

#include <gtest/gtest.h>

#include <limits>
#include <sstream>

using namespace weakloc;
using namespace weakloc::env;

namespace
{

std::shared_ptr<const Scorer> mean_scorer()
{
    return std::make_shared<MeanIntensityScorer>();
}

EnvConfig config_for(Variant v, std::size_t episode_length = 16)
{
    EnvConfig c;
    c.variant = v;
    c.episode_length = episode_length;
    c.resolution = 16;
    return c;
}

Tensor test_image(std::uint64_t seed, std::size_t side = 24)
{
    Rng rng(seed);
    return weakloc::testing::random_tensor({3, side, side}, rng, 0, 1);
}

} // namespace

TEST(ApplyAction, AbsoluteZeroActionIsCentredMidSize)
{
    const EnvConfig c = config_for(Variant::config1);
    const std::array<double, 4> zero{0, 0, 0, 0};
    const auto r = apply_action(zero, Rect{0.2, 0.3, 0.4, 0.4}, c);
    EXPECT_DOUBLE_EQ(r.cx, 0.5);
    EXPECT_DOUBLE_EQ(r.cy, 0.5);
    EXPECT_DOUBLE_EQ(r.w, 0.55);
    EXPECT_DOUBLE_EQ(r.h, 0.55);
}

TEST(ApplyAction, RelativeZeroActionKeepsRectangle)
{
    const EnvConfig c = config_for(Variant::config2);
    const std::array<double, 4> zero{0, 0, 0, 0};
    const Rect prev{0.3, 0.6, 0.4, 0.25};
    EXPECT_EQ(apply_action(zero, prev, c), prev);
}

TEST(ApplyAction, RelativeStepIsBoundedByDeltaMax)
{
    const EnvConfig c = config_for(Variant::config2);
    const std::array<double, 4> big{50, -50, 50, -50};
    const Rect prev{0.5, 0.5, 0.5, 0.5};
    const auto r = apply_action(big, prev, c);
    EXPECT_NEAR(r.cx, 0.6, 1e-12);
    EXPECT_NEAR(r.cy, 0.4, 1e-12);
    EXPECT_NEAR(r.w, 0.6, 1e-12);
    EXPECT_NEAR(r.h, 0.4, 1e-12);
}

TEST(ApplyAction, RightEdgeClampedToImage)
{
    const EnvConfig c = config_for(Variant::config1);
    // Width action chosen so the mapped width is 0.5.
    const double u_w = 2 * (0.5 - c.s_min) / (c.s_max - c.s_min) - 1;
    const std::array<double, 4> a{40.0, 0.0, std::atanh(u_w), 0.0};
    const auto r = apply_action(a, Rect::full(), c);
    EXPECT_NEAR(r.w, 0.5, 1e-12);
    EXPECT_NEAR(r.right(), 1.0, 1e-12);
    EXPECT_NEAR(r.cx, 0.75, 1e-12);
}

TEST(ApplyAction, NanIsRejected)
{
    const std::array<double, 4> a{0.0, std::numeric_limits<double>::quiet_NaN(), 0.0, 0.0};
    EXPECT_THROW((void)apply_action(a, Rect::full(), EnvConfig{}), Error);
}

TEST(ApplyAction, ClampingHoldsForAnyFiniteAction)
{
    Rng rng(31);
    for (auto v : {Variant::config1, Variant::config2, Variant::config3}) {
        const EnvConfig c = config_for(v);
        Rect prev = Rect::full();
        for (int i = 0; i < 5000; ++i) {
            std::array<double, 4> a{};
            for (double &x : a) {
                // Mix moderate values with extreme magnitudes.
                x = rng.bernoulli(0.2) ? rng.uniform(-1e300, 1e300) : rng.normal(0, 3);
            }
            prev = apply_action(a, prev, c);
            ASSERT_TRUE(satisfies_invariants(prev, c)) << i;
        }
    }
}

TEST(CropEnv, ResetIsDeterministicAndStartsFromFullImage)
{
    CropEnv environment(mean_scorer(), config_for(Variant::config3));
    const auto image = test_image(1);
    const auto a = environment.reset(image);
    const auto b = environment.reset(image);
    EXPECT_EQ(a.rect, Rect::full());
    EXPECT_EQ(a.step, 0u);
    EXPECT_TRUE(satisfies_invariants(a.rect, environment.config()));
    const auto expected = resample(image, 16);
    ASSERT_EQ(a.crop.shape(), expected.shape());
    for (std::size_t i = 0; i < expected.numel(); ++i) {
        EXPECT_EQ(a.crop[i], expected[i]);
        EXPECT_EQ(b.crop[i], a.crop[i]);
    }
}

TEST(CropEnv, EpisodeYieldsExactlyTRewardsThenDone)
{
    CropEnv environment(mean_scorer(), config_for(Variant::config1, 5));
    auto s = environment.reset(test_image(2));
    const std::array<double, 4> a{0.3, -0.2, 0.1, 0.4};
    for (std::size_t t = 1; t <= 5; ++t) {
        const auto r = environment.step(s, a);
        EXPECT_EQ(r.done, t == 5);
        EXPECT_GT(r.reward, 0.0);
    }
    EXPECT_THROW(environment.step(s, a), Error);
}

TEST(CropEnv, RewardIsScorerOfExtractedCrop)
{
    auto scorer = mean_scorer();
    CropEnv environment(scorer, config_for(Variant::config2));
    const auto image = test_image(3);
    auto s = environment.reset(image);
    const std::array<double, 4> a{0.7, -1.1, -2.0, 0.4};
    const auto r = environment.step(s, a);
    const auto rect = apply_action(a, Rect::full(), environment.config());
    EXPECT_EQ(s.rect, rect);
    EXPECT_EQ(r.reward, scorer->score(extract_crop(image, rect, 16)));
}

TEST(CropEnv, TransitionsAreDeterministic)
{
    CropEnv environment(mean_scorer(), config_for(Variant::config3));
    const auto image = test_image(4);
    auto s1 = environment.reset(image);
    auto s2 = environment.reset(image);
    Rng rng(5);
    for (int t = 0; t < 10; ++t) {
        const std::array<double, 4> a{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        const auto r1 = environment.step(s1, a);
        const auto r2 = environment.step(s2, a);
        EXPECT_EQ(r1.reward, r2.reward);
        EXPECT_EQ(s1.rect, s2.rect);
    }
}

TEST(CropEnv, FullImageRewardWithMeanStubEqualsImageMean)
{
    // Native-size observations make the full-image resample the identity.
    EnvConfig c = config_for(Variant::config1);
    c.resolution = 24;
    auto scorer = mean_scorer();
    CropEnv environment(scorer, c);
    const auto image = test_image(6);
    double mean = 0.0;
    for (double v : image.data()) {
        mean += v;
    }
    mean /= static_cast<double>(image.numel());
    auto s = environment.reset(image);
    const std::array<double, 4> full{0.0, 0.0, 40.0, 40.0};
    const auto r = environment.step(s, full);
    EXPECT_EQ(s.rect, Rect::full());
    EXPECT_NEAR(r.reward, mean, 1e-12);
}

TEST(CropEnv, ObservationChannels)
{
    const auto image = test_image(7);
    CropEnv c1(mean_scorer(), config_for(Variant::config1));
    EXPECT_EQ(c1.observe(c1.reset(image)).shape(), (Shape{3, 16, 16}));

    CropEnv c3(mean_scorer(), config_for(Variant::config3));
    auto s = c3.reset(image);
    const std::array<double, 4> a{1.0, 1.0, -1.0, -1.0};
    c3.step(s, a);
    const auto obs = c3.observe(s);
    ASSERT_EQ(obs.shape(), (Shape{6, 16, 16}));
    const auto full = resample(image, 16);
    const std::size_t half = 3 * 16 * 16;
    for (std::size_t i = 0; i < half; ++i) {
        EXPECT_EQ(obs[i], s.crop[i]);
        EXPECT_EQ(obs[half + i], full[i]);
    }
}

TEST(CropEnv, TraceWritesOneLinePerStep)
{
    CropEnv environment(mean_scorer(), config_for(Variant::config1, 3));
    std::ostringstream os;
    environment.set_trace(&os);
    auto s = environment.reset(test_image(8));
    const std::array<double, 4> a{0, 0, 0, 0};
    for (int t = 0; t < 3; ++t) {
        environment.step(s, a);
    }
    std::istringstream is(os.str());
    std::string line;
    std::size_t lines = 0;
    while (std::getline(is, line)) {
        ++lines;
        std::istringstream fields(line);
        std::size_t step = 0;
        double cx = 0, cy = 0, w = 0, h = 0, reward = 0;
        ASSERT_TRUE(fields >> step >> cx >> cy >> w >> h >> reward);
        EXPECT_EQ(step, lines);
        EXPECT_DOUBLE_EQ(w, 0.55);
    }
    EXPECT_EQ(lines, 3u);
}

TEST(EnvConfigValidate, RejectsBadBounds)
{
    EnvConfig c;
    c.episode_length = 0;
    EXPECT_THROW(c.validate(), Error);
    c = EnvConfig{};
    c.delta_max = 0.6;
    EXPECT_THROW(c.validate(), Error);
    c = EnvConfig{};
    c.s_min = 0.0;
    EXPECT_THROW(c.validate(), Error);
    EXPECT_THROW((void)parse_variant(4), Error);
    EXPECT_NO_THROW(EnvConfig{}.validate());
}

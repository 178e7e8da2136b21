#include <weakloc/cropenv.hpp>

#include <algorithm>
#include <cmath>
#include <ostream>

namespace weakloc::env
{

Variant parse_variant(int v)
{
    if (v < 1 || v > 3) {
        throw Error("variant must be 1, 2 or 3, got " + std::to_string(v));
    }
    return static_cast<Variant>(v);
}

void EnvConfig::validate() const
{
    if (episode_length < 1) {
        throw Error("episode_length must be >= 1");
    }
    if (!(delta_max > 0.0 && delta_max <= 0.5)) {
        throw Error("delta_max must lie in (0, 0.5]");
    }
    if (!(s_min > 0.0 && s_min <= s_max && s_max <= 1.0)) {
        throw Error("crop size bounds must satisfy 0 < s_min <= s_max <= 1");
    }
    if (resolution < 4) {
        throw Error("observation resolution must be >= 4");
    }
}

bool satisfies_invariants(const CropRect &r, const EnvConfig &c)
{
    constexpr double tol = 1e-12;
    const bool finite = std::isfinite(r.cx) && std::isfinite(r.cy) && std::isfinite(r.w) && std::isfinite(r.h);
    return finite && r.w >= c.s_min - tol && r.w <= c.s_max + tol && r.h >= c.s_min - tol && r.h <= c.s_max + tol
           && r.left() >= -tol && r.right() <= 1.0 + tol && r.top() >= -tol && r.bottom() <= 1.0 + tol;
}

CropRect clamp_rect(CropRect r, const EnvConfig &c)
{
    r.w = std::clamp(r.w, c.s_min, c.s_max);
    r.h = std::clamp(r.h, c.s_min, c.s_max);
    r.cx = std::clamp(r.cx, r.w / 2, 1.0 - r.w / 2);
    r.cy = std::clamp(r.cy, r.h / 2, 1.0 - r.h / 2);
    return r;
}

CropRect apply_action(std::span<const double> raw_action, const CropRect &prev, const EnvConfig &c)
{
    if (raw_action.size() != 4) {
        throw ShapeError("action must have 4 components, got " + std::to_string(raw_action.size()));
    }
    Action u{};
    for (std::size_t i = 0; i < 4; ++i) {
        if (std::isnan(raw_action[i])) {
            throw Error("NaN in action component " + std::to_string(i));
        }
        u[i] = std::tanh(raw_action[i]);
    }
    CropRect next;
    if (c.absolute()) {
        const double span = c.s_max - c.s_min;
        next.cx = (u[0] + 1) / 2;
        next.cy = (u[1] + 1) / 2;
        next.w = c.s_min + (u[2] + 1) / 2 * span;
        next.h = c.s_min + (u[3] + 1) / 2 * span;
    } else {
        next.cx = prev.cx + u[0] * c.delta_max;
        next.cy = prev.cy + u[1] * c.delta_max;
        next.w = prev.w + u[2] * c.delta_max;
        next.h = prev.h + u[3] * c.delta_max;
    }
    return clamp_rect(next, c);
}

Tensor extract_crop(const Tensor &image, const CropRect &rect, std::size_t side)
{
    return resample_region(image, rect, side);
}

std::vector<double> Scorer::score_batch(const std::vector<Tensor> &crops) const
{
    std::vector<double> out;
    out.reserve(crops.size());
    for (const auto &c : crops) {
        out.push_back(score(c));
    }
    return out;
}

double ClassifierScorer::score(const Tensor &crop) const
{
    return classifier::objectness(*net_, crop);
}

std::vector<double> ClassifierScorer::score_batch(const std::vector<Tensor> &crops) const
{
    for (const auto &c : crops) {
        if (c.rank() != 3 || c.dim(1) != net_->resolution() || c.dim(2) != net_->resolution()) {
            return Scorer::score_batch(crops);
        }
    }
    return classifier::objectness_batch(*net_, crops);
}

double MeanIntensityScorer::score(const Tensor &crop) const
{
    double s = 0.0;
    for (double v : crop.data()) {
        s += v;
    }
    return s / static_cast<double>(crop.numel());
}

CropEnv::CropEnv(std::shared_ptr<const Scorer> scorer, EnvConfig config)
    : scorer_(std::move(scorer)), config_(config)
{
    config_.validate();
    if (!scorer_) {
        throw Error("CropEnv needs a scorer");
    }
}

EnvState CropEnv::reset(const Tensor &image) const
{
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) < 1 || image.dim(2) < 1) {
        throw ShapeError("environment image must be [3,H,W], got " + shape_to_string(image.shape()));
    }
    EnvState s;
    s.image = image;
    s.image_resampled = resample(image, config_.resolution);
    s.rect = CropRect::full();
    s.crop = s.image_resampled;
    s.step = 0;
    return s;
}

const Tensor &CropEnv::transition(EnvState &state, std::span<const double> raw_action) const
{
    if (state.step >= config_.episode_length) {
        throw Error("step() after the episode is done");
    }
    state.rect = apply_action(raw_action, state.rect, config_);
    state.crop = extract_crop(state.image, state.rect, config_.resolution);
    ++state.step;
    return state.crop;
}

StepResult CropEnv::step(EnvState &state, std::span<const double> raw_action) const
{
    const auto &crop = transition(state, raw_action);
    const double reward = scorer_->score(crop);
    trace({state.step, state.rect, reward});
    return {reward, state.step >= config_.episode_length};
}

Tensor CropEnv::observe(const EnvState &state) const
{
    if (config_.variant != Variant::config3) {
        return state.crop;
    }
    const std::size_t k = config_.resolution;
    std::vector<double> v;
    v.reserve(6 * k * k);
    v.insert(v.end(), state.crop.data().begin(), state.crop.data().end());
    v.insert(v.end(), state.image_resampled.data().begin(), state.image_resampled.data().end());
    return Tensor::from({6, k, k}, std::move(v));
}

void CropEnv::trace(const TraceLine &line) const
{
    if (trace_ != nullptr) {
        *trace_ << line.step << ' ' << line.rect.cx << ' ' << line.rect.cy << ' ' << line.rect.w << ' ' << line.rect.h
                << ' ' << line.reward << '\n';
    }
}

} // namespace weakloc::env

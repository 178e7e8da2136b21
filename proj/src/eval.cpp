#include <weakloc/eval.hpp>

#include <weakloc/rng.hpp>

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numeric>
#include <sstream>

namespace weakloc::eval
{

namespace
{

struct Counts {
    std::size_t inter = 0;
    std::size_t pred = 0;
    std::size_t truth = 0;
};

Counts overlap(const Rect &pred, const Mask &truth)
{
    const auto raster = Mask::rasterize(pred, truth.height, truth.width);
    Counts c;
    for (std::size_t i = 0; i < truth.bits.size(); ++i) {
        const bool a = raster.bits[i] != 0;
        const bool b = truth.bits[i] != 0;
        c.pred += a ? 1 : 0;
        c.truth += b ? 1 : 0;
        c.inter += (a && b) ? 1 : 0;
    }
    if (c.truth == 0) {
        throw Error("dice/iou undefined for an empty ground-truth mask");
    }
    return c;
}

double mean_of(const std::vector<double> &v)
{
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double> &v, double mean)
{
    double s = 0.0;
    for (double x : v) {
        s += (x - mean) * (x - mean);
    }
    return s / static_cast<double>(v.size() - 1);
}

} // namespace

double dice(const Rect &pred, const Mask &truth)
{
    const auto c = overlap(pred, truth);
    return 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.pred + c.truth);
}

double iou(const Rect &pred, const Mask &truth)
{
    const auto c = overlap(pred, truth);
    return static_cast<double>(c.inter) / static_cast<double>(c.pred + c.truth - c.inter);
}

std::vector<double> EvalReport::dice_values() const
{
    std::vector<double> v;
    v.reserve(records.size());
    for (const auto &r : records) {
        v.push_back(r.dice);
    }
    return v;
}

void summarize(EvalReport &report)
{
    if (report.records.empty()) {
        throw Error("report for " + report.model + " has no samples");
    }
    const auto d = report.dice_values();
    report.mean_dice = mean_of(d);
    report.std_dice = d.size() > 1 ? std::sqrt(sample_variance(d, report.mean_dice)) : 0.0;
    double iou_sum = 0.0;
    for (const auto &r : report.records) {
        iou_sum += r.iou;
    }
    report.mean_iou = iou_sum / static_cast<double>(report.records.size());
}

EvalReport evaluate_model(const std::string &model, const Localizer &localizer, const synth::Dataset &holdout)
{
    EvalReport report;
    report.model = model;
    for (std::size_t i = 0; i < holdout.size(); ++i) {
        if (holdout.label(i) != 1) {
            continue;
        }
        const auto &mask = holdout.mask(i);
        if (!mask || mask->empty()) {
            throw Error("positive holdout sample " + holdout.id(i) + " has no mask");
        }
        const Rect pred = localizer(holdout.image(i));
        report.records.push_back({holdout.id(i), dice(pred, *mask), iou(pred, *mask), pred, mask->bounding_rect()});
    }
    if (report.records.empty()) {
        throw Error("holdout split has no positive samples");
    }
    summarize(report);
    return report;
}

Localizer random_rect_localizer(std::uint64_t seed, double s_min, double s_max)
{
    auto rng = std::make_shared<Rng>(seed);
    return [rng, s_min, s_max](const Tensor &) {
        Rect r;
        r.w = rng->uniform(s_min, s_max);
        r.h = rng->uniform(s_min, s_max);
        r.cx = rng->uniform(r.w / 2, 1.0 - r.w / 2);
        r.cy = rng->uniform(r.h / 2, 1.0 - r.h / 2);
        return r;
    };
}

double two_sided_p(double t, double df)
{
    if (!(df > 0.0)) {
        throw Error("degrees of freedom must be positive");
    }
    if (std::isinf(t)) {
        return 0.0;
    }
    const boost::math::students_t dist(df);
    return std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))), 0.0, 1.0);
}

Comparison welch_t_test(const std::vector<double> &a, const std::vector<double> &b, std::string model_a,
                        std::string model_b)
{
    if (a.size() < 2 || b.size() < 2) {
        throw Error("welch_t_test needs at least two values per sample");
    }
    Comparison c;
    c.model_a = std::move(model_a);
    c.model_b = std::move(model_b);
    const double ma = mean_of(a), mb = mean_of(b);
    c.mean_difference = ma - mb;
    const double qa = sample_variance(a, ma) / static_cast<double>(a.size());
    const double qb = sample_variance(b, mb) / static_cast<double>(b.size());
    const double se2 = qa + qb;
    if (se2 == 0.0) {
        c.t = c.mean_difference == 0.0 ? 0.0 : std::copysign(INFINITY, c.mean_difference);
        c.df = static_cast<double>(a.size() + b.size() - 2);
        c.p_value = c.mean_difference == 0.0 ? 1.0 : 0.0;
        return c;
    }
    c.t = c.mean_difference / std::sqrt(se2);
    c.df = se2 * se2
           / (qa * qa / static_cast<double>(a.size() - 1) + qb * qb / static_cast<double>(b.size() - 1));
    c.p_value = two_sided_p(c.t, c.df);
    return c;
}

Mask rect_outline(const Rect &rect, std::size_t height, std::size_t width)
{
    const auto fill = Mask::rasterize(rect, height, width);
    return mask_outline(fill);
}

Mask mask_outline(const Mask &mask)
{
    Mask out(mask.height, mask.width);
    for (std::size_t y = 0; y < mask.height; ++y) {
        for (std::size_t x = 0; x < mask.width; ++x) {
            if (!mask.at(y, x)) {
                continue;
            }
            const bool edge = y == 0 || x == 0 || y + 1 == mask.height || x + 1 == mask.width || !mask.at(y - 1, x)
                              || !mask.at(y + 1, x) || !mask.at(y, x - 1) || !mask.at(y, x + 1);
            out.set(y, x, edge);
        }
    }
    return out;
}

void render_overlay(const Tensor &image, const Mask &truth, const Rect &pred, const std::filesystem::path &path)
{
    if (image.rank() != 3 || image.dim(1) != truth.height || image.dim(2) != truth.width) {
        throw ShapeError("overlay image " + shape_to_string(image.shape()) + " does not match a "
                         + std::to_string(truth.height) + "x" + std::to_string(truth.width) + " mask");
    }
    const std::size_t h = truth.height, w = truth.width;
    const auto green = mask_outline(truth);
    const auto red = rect_outline(pred, h, w);
    std::vector<unsigned char> pixels(3 * h * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double g = std::clamp(image[y * w + x], 0.0, 1.0);
            const auto gray = static_cast<unsigned char>(std::lround(g * 255.0));
            std::array<unsigned char, 3> rgb{gray, gray, gray};
            if (green.at(y, x)) {
                rgb = {0, 255, 0};
            }
            if (red.at(y, x)) {
                rgb = {255, 0, 0};
            }
            std::copy(rgb.begin(), rgb.end(), pixels.begin() + static_cast<std::ptrdiff_t>(3 * (y * w + x)));
        }
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw Error("cannot write " + path.string());
    }
    os << "P6\n" << w << ' ' << h << "\n255\n";
    os.write(reinterpret_cast<const char *>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!os) {
        throw Error("failed writing " + path.string());
    }
}

void write_report_csv(const std::filesystem::path &path, const EvalReport &report)
{
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw Error("cannot write " + path.string());
    }
    os << "id,dice,iou,pred_cx,pred_cy,pred_w,pred_h,truth_cx,truth_cy,truth_w,truth_h\n";
    os.precision(17);
    for (const auto &r : report.records) {
        os << r.id << ',' << r.dice << ',' << r.iou << ',' << r.pred.cx << ',' << r.pred.cy << ',' << r.pred.w << ','
           << r.pred.h << ',' << r.truth_box.cx << ',' << r.truth_box.cy << ',' << r.truth_box.w << ','
           << r.truth_box.h << '\n';
    }
    os << "# " << summary_line(report) << '\n';
}

std::string summary_line(const EvalReport &report)
{
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << report.model << ": dice " << report.mean_dice << " +/- "
       << report.std_dice << ", iou " << report.mean_iou << ", n = " << report.count();
    return os.str();
}

void write_comparison_table(std::ostream &os, const std::vector<EvalReport> &reports)
{
    std::size_t name_width = 5;
    for (const auto &r : reports) {
        name_width = std::max(name_width, r.model.size());
    }
    const auto pad = static_cast<int>(name_width) + 2;
    os << "Performance on the holdout set\n";
    os << std::left << std::setw(pad) << "Model" << "Dice score (mean +/- std)   n\n";
    for (const auto &r : reports) {
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(2) << r.mean_dice << " +/- " << r.std_dice;
        os << std::left << std::setw(pad) << r.model << std::setw(28) << cell.str() << r.count() << '\n';
    }
    if (reports.size() < 2) {
        return;
    }
    os << "\nPairwise Welch t-tests (two-sided)\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
        for (std::size_t j = i + 1; j < reports.size(); ++j) {
            const auto c = welch_t_test(reports[i].dice_values(), reports[j].dice_values(), reports[i].model,
                                        reports[j].model);
            std::ostringstream line;
            line << c.model_a << " vs " << c.model_b << ": diff " << std::showpos << std::fixed << std::setprecision(4)
                 << c.mean_difference << std::noshowpos << ", t " << std::setprecision(3) << c.t << ", df "
                 << std::setprecision(1) << c.df << ", p " << std::scientific << std::setprecision(3) << c.p_value;
            os << line.str() << '\n';
        }
    }
}

} // namespace weakloc::eval

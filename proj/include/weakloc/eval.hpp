#ifndef WEAKLOC_EVAL_HPP
#define WEAKLOC_EVAL_HPP

#include <weakloc/geometry.hpp>
#include <weakloc/synthdata.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace weakloc::eval
{

/// 2|A n B| / (|A| + |B|) with A the rasterized rectangle and B the mask. Throws on an empty mask.
double dice(const Rect &pred, const Mask &truth);

/// |A n B| / |A u B|. Throws on an empty mask.
double iou(const Rect &pred, const Mask &truth);

struct SampleRecord {
    std::string id;
    double dice;
    double iou;
    Rect pred;
    Rect truth_box;
};

struct EvalReport {
    std::string model;
    std::vector<SampleRecord> records;
    double mean_dice = 0.0;
    double std_dice = 0.0; ///< sample standard deviation (n - 1)
    double mean_iou = 0.0;

    [[nodiscard]] std::size_t count() const noexcept { return records.size(); }
    [[nodiscard]] std::vector<double> dice_values() const;
};

using Localizer = std::function<Rect(const Tensor &image)>;

/// Run the localizer on every positive sample of `holdout`.
EvalReport evaluate_model(const std::string &model, const Localizer &localizer, const synth::Dataset &holdout);

/// Uniformly random rectangles with sides in [s_min, s_max], drawn in call order from `seed`.
Localizer random_rect_localizer(std::uint64_t seed, double s_min = 0.1, double s_max = 1.0);

/// Recompute the summary fields from the records.
void summarize(EvalReport &report);

struct Comparison {
    std::string model_a;
    std::string model_b;
    double mean_difference = 0.0; ///< mean(a) - mean(b)
    double t = 0.0;
    double df = 0.0;
    double p_value = 1.0; ///< two-sided
};

/// Welch's unequal-variance t-test with Welch-Satterthwaite degrees of freedom.
/// Both samples need at least two values; zero pooled variance gives p = 1 for equal
/// means and p = 0 otherwise.
Comparison welch_t_test(const std::vector<double> &a, const std::vector<double> &b, std::string model_a = "A",
                        std::string model_b = "B");

/// Two-sided p-value of a t statistic under Student's t with `df` degrees of freedom.
double two_sided_p(double t, double df);

/// Channel-0 grayscale with the mask outline in green and the rectangle border in red,
/// written as binary PPM (P6).
void render_overlay(const Tensor &image, const Mask &truth, const Rect &pred, const std::filesystem::path &path);

/// Pixels on the border of the rasterized rectangle.
Mask rect_outline(const Rect &rect, std::size_t height, std::size_t width);

/// Mask pixels with at least one 4-neighbour outside the mask (or on the image edge).
Mask mask_outline(const Mask &mask);

/// One row per sample: id,dice,iou,pred_cx,pred_cy,pred_w,pred_h,truth_cx,truth_cy,truth_w,truth_h.
void write_report_csv(const std::filesystem::path &path, const EvalReport &report);
std::string summary_line(const EvalReport &report);

/// Table of mean +/- std dice per model followed by pairwise p-values (omitted for a single model).
void write_comparison_table(std::ostream &os, const std::vector<EvalReport> &reports);

} // namespace weakloc::eval

#endif

#pragma once

// Pixel-level evaluation: confusion counting, the five overlap metrics,
// threshold binarization, per-image category binning, and reporting.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "blastoseg/data.hpp"
#include "blastoseg/tensor.hpp"

namespace blastoseg {

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::int64_t total() const { return tp + fp + tn + fn; }
};

struct Metrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double dice = 0.0;
    double jaccard = 0.0;
};

enum class Category { kBest, kBetter, kFair, kBelow };

std::string category_name(Category c);

// pixel >= threshold -> 1 (ties go to foreground), else 0.
Tensor<float> binarize(const Tensor<float>& prob_map, double threshold = 0.5);

// Exact integer tallies; both masks must be binary and same-shaped.
ConfusionCounts confusion(const Tensor<float>& pred, const Tensor<float>& truth);

// Accuracy, precision, recall, Dice coefficient, Jaccard index in [0,1].
// Degenerate denominators: precision is 1 when tp+fp==0 and fn==0, else
// 0 when tp+fp==0; recall symmetrically; dice/jaccard are 1 when
// tp+fp+fn==0. All-zero counts are a parameter error.
Metrics metrics(const ConfusionCounts& c);

// Per-image quality bands, strict on the lower edge ("more than" rules):
//   ICM: best > 0.97, better (0.92, 0.97], fair (0.77, 0.92], else below
//   TE:  best > 0.94, better (0.87, 0.94], fair (0.76, 0.87], else below
Category categorize(double jaccard, Target target);

struct ImageResult {
    std::string id;
    Metrics metrics;
    Category category = Category::kBelow;
};

struct MetricsReport {
    Target target = Target::kIcm;
    std::vector<ImageResult> per_image;
    Metrics aggregate;  // unweighted mean of per-image metrics
    double frac_best = 0.0, frac_better = 0.0, frac_fair = 0.0, frac_below = 0.0;
};

// Probability map [1,H,W] for an image tensor [C,H,W].
using PredictFn = std::function<Tensor<float>(const Tensor<float>&)>;

MetricsReport evaluate_set(const PredictFn& predict, const std::vector<const Sample*>& test_set,
                           double threshold, Target target);

// id,target,accuracy,precision,recall,dice,jaccard,category
void write_report_csv(const std::string& path, const MetricsReport& report);

// Summary in the comparison-table column order, percentages to one
// decimal, plus the category fractions.
std::string format_summary_table(const MetricsReport& report);

} // namespace blastoseg

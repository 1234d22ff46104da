#include "blastoseg/eval.hpp"

#include <cstdio>
#include <fstream>

#include "blastoseg/errors.hpp"

namespace blastoseg {

std::string category_name(Category c) {
    switch (c) {
        case Category::kBest: return "best";
        case Category::kBetter: return "better";
        case Category::kFair: return "fair";
        case Category::kBelow: return "below";
    }
    return "below";
}

Tensor<float> binarize(const Tensor<float>& prob_map, double threshold) {
    if (threshold <= 0.0 || threshold >= 1.0)
        throw ParameterError("binarize: threshold must be in (0,1), got " + std::to_string(threshold));
    Tensor<float> out(prob_map.shape());
    const float t = static_cast<float>(threshold);
    for (index_t i = 0; i < prob_map.numel(); ++i) out[i] = prob_map[i] >= t ? 1.0f : 0.0f;
    return out;
}

ConfusionCounts confusion(const Tensor<float>& pred, const Tensor<float>& truth) {
    if (!pred.same_shape(truth))
        throw DimensionError("confusion: shape mismatch " + shape_str(pred.shape()) + " vs " +
                             shape_str(truth.shape()));
    ConfusionCounts c;
    for (index_t i = 0; i < pred.numel(); ++i) {
        const float p = pred[i], g = truth[i];
        if ((p != 0.0f && p != 1.0f) || (g != 0.0f && g != 1.0f))
            throw ParameterError("confusion: masks must be exactly binary");
        if (p == 1.0f && g == 1.0f)
            ++c.tp;
        else if (p == 1.0f)
            ++c.fp;
        else if (g == 1.0f)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

Metrics metrics(const ConfusionCounts& c) {
    if (c.total() == 0) throw ParameterError("metrics: all-zero confusion counts");
    Metrics m;
    const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
    const double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
    m.accuracy = (tp + tn) / (tp + tn + fp + fn);
    if (c.tp + c.fp == 0)
        m.precision = c.fn == 0 ? 1.0 : 0.0;
    else
        m.precision = tp / (tp + fp);
    if (c.tp + c.fn == 0)
        m.recall = c.fp == 0 ? 1.0 : 0.0;
    else
        m.recall = tp / (tp + fn);
    if (c.tp + c.fp + c.fn == 0) {
        m.dice = 1.0;
        m.jaccard = 1.0;
    } else {
        m.dice = 2.0 * tp / (2.0 * tp + fp + fn);
        m.jaccard = tp / (tp + fp + fn);
    }
    return m;
}

Category categorize(double jaccard, Target target) {
    const double best = target == Target::kIcm ? 0.97 : 0.94;
    const double better = target == Target::kIcm ? 0.92 : 0.87;
    const double fair = target == Target::kIcm ? 0.77 : 0.76;
    if (jaccard > best) return Category::kBest;
    if (jaccard > better) return Category::kBetter;
    if (jaccard > fair) return Category::kFair;
    return Category::kBelow;
}

MetricsReport evaluate_set(const PredictFn& predict, const std::vector<const Sample*>& test_set,
                           double threshold, Target target) {
    if (test_set.empty()) throw DataError("evaluate_set: empty test split");
    MetricsReport report;
    report.target = target;
    int counts[4] = {0, 0, 0, 0};
    for (const Sample* s : test_set) {
        const Tensor<float> prob = predict(s->image);
        const Tensor<float> pred = binarize(prob, threshold);
        const Metrics m = metrics(confusion(pred, s->mask));
        ImageResult r;
        r.id = s->id;
        r.metrics = m;
        r.category = categorize(m.jaccard, target);
        ++counts[static_cast<int>(r.category)];
        report.aggregate.accuracy += m.accuracy;
        report.aggregate.precision += m.precision;
        report.aggregate.recall += m.recall;
        report.aggregate.dice += m.dice;
        report.aggregate.jaccard += m.jaccard;
        report.per_image.push_back(std::move(r));
    }
    const double n = static_cast<double>(report.per_image.size());
    report.aggregate.accuracy /= n;
    report.aggregate.precision /= n;
    report.aggregate.recall /= n;
    report.aggregate.dice /= n;
    report.aggregate.jaccard /= n;
    report.frac_best = counts[0] / n;
    report.frac_better = counts[1] / n;
    report.frac_fair = counts[2] / n;
    report.frac_below = counts[3] / n;
    return report;
}

void write_report_csv(const std::string& path, const MetricsReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write report: " + path);
    out << "id,target,accuracy,precision,recall,dice,jaccard,category\n";
    char line[256];
    for (const auto& r : report.per_image) {
        std::snprintf(line, sizeof line, "%s,%s,%.10g,%.10g,%.10g,%.10g,%.10g,%s\n", r.id.c_str(),
                      target_name(report.target).c_str(), r.metrics.accuracy, r.metrics.precision,
                      r.metrics.recall, r.metrics.dice, r.metrics.jaccard,
                      category_name(r.category).c_str());
        out << line;
    }
}

std::string format_summary_table(const MetricsReport& report) {
    char buf[512];
    std::string out;
    std::snprintf(buf, sizeof buf, "Target: %s (%zu images)\n", target_name(report.target).c_str(),
                  report.per_image.size());
    out += buf;
    out += "Accuracy (%)  Precision (%)  Recall (%)  Dice Coefficient (%)  Jaccard Index (%)\n";
    std::snprintf(buf, sizeof buf, "%-13.1f %-14.1f %-11.1f %-21.1f %.1f\n",
                  100.0 * report.aggregate.accuracy, 100.0 * report.aggregate.precision,
                  100.0 * report.aggregate.recall, 100.0 * report.aggregate.dice,
                  100.0 * report.aggregate.jaccard);
    out += buf;
    std::snprintf(buf, sizeof buf,
                  "Categories: best %.1f%%, better %.1f%%, fair %.1f%%, below %.1f%%\n",
                  100.0 * report.frac_best, 100.0 * report.frac_better, 100.0 * report.frac_fair,
                  100.0 * report.frac_below);
    out += buf;
    return out;
}

} // namespace blastoseg

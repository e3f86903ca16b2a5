#pragma once

// Evaluation metrics: framewise accuracy and F1, segmental F1@k, ranking
// metrics for OOD separation, and the four calibration errors.

#include <cstdint>
#include <utility>
#include <vector>

#include "uqtf/tensor.hpp"

namespace uqtf::metrics {

struct SegmentSpan {
    int cls = 0;
    int64_t start = 0;
    int64_t end = 0;  // exclusive

    bool operator==(const SegmentSpan&) const = default;
};

using SegmentLabeling = std::vector<SegmentSpan>;

// Maximal constant runs of the framewise labels.
SegmentLabeling segments_from_frames(const std::vector<int>& labels);

// Segmental F1 at overlap threshold k percent, in [0, 100]. Predicted
// segments are walked in temporal order; each one consumes the not-yet-used
// ground-truth segment of its class with the highest IoU (span-union
// convention), and counts as a true positive iff that IoU reaches k/100.
// Consumption does not depend on k, which makes F1@k monotone in k.
double f1_at_k(const SegmentLabeling& pred, const SegmentLabeling& gt, double k_percent);

double top1_accuracy(const std::vector<int>& pred, const std::vector<int>& gt);

// Unweighted mean over classes of per-class frame F1 (support-weighted when
// requested); classes absent from both prediction and truth are excluded.
double f1_macro(const std::vector<int>& pred, const std::vector<int>& gt, int n_classes,
                bool support_weighted = false);

double macro_recall(const std::vector<int>& pred, const std::vector<int>& gt, int n_classes);

// (AUROC, AUPRC) with the positive class being the higher-scoring one.
// AUROC is the rank statistic with tie correction; AUPRC is step-wise
// integration of precision over recall.
std::pair<double, double> ranking_metrics(const std::vector<double>& scores_pos,
                                          const std::vector<double>& scores_neg);

enum class CalibKind { ECE, SCE, ACE, TACE };

struct BinSpec {
    int bins = 15;
    double threshold = 0.01;  // TACE only
};

// probs: one row per sample, each row a distribution over classes.
double calibration_error(const std::vector<std::vector<double>>& probs,
                         const std::vector<int>& labels, const BinSpec& spec, CalibKind kind);

}  // namespace uqtf::metrics

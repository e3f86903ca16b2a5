#include "uqtf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace uqtf::metrics {

SegmentLabeling segments_from_frames(const std::vector<int>& labels) {
    if (labels.empty()) throw ContractError("segments_from_frames: empty label sequence");
    SegmentLabeling segs;
    int64_t start = 0;
    for (int64_t i = 1; i <= static_cast<int64_t>(labels.size()); ++i) {
        if (i == static_cast<int64_t>(labels.size()) ||
            labels[static_cast<size_t>(i)] != labels[static_cast<size_t>(start)]) {
            segs.push_back({labels[static_cast<size_t>(start)], start, i});
            start = i;
        }
    }
    return segs;
}

namespace {
double segment_iou(const SegmentSpan& a, const SegmentSpan& b) {
    const double inter = static_cast<double>(std::min(a.end, b.end) - std::max(a.start, b.start));
    const double uni = static_cast<double>(std::max(a.end, b.end) - std::min(a.start, b.start));
    return uni > 0 ? inter / uni : 0.0;
}
}  // namespace

double f1_at_k(const SegmentLabeling& pred, const SegmentLabeling& gt, double k_percent) {
    const double thr = k_percent / 100.0;
    std::vector<bool> used(gt.size(), false);
    int64_t tp = 0;
    for (const auto& p : pred) {
        double best = 0.0;
        int64_t best_j = -1;
        for (size_t j = 0; j < gt.size(); ++j) {
            if (used[j] || gt[j].cls != p.cls) continue;
            const double iou = segment_iou(p, gt[j]);
            if (iou > best) {
                best = iou;
                best_j = static_cast<int64_t>(j);
            }
        }
        if (best_j >= 0) {
            used[static_cast<size_t>(best_j)] = true;
            if (best >= thr) ++tp;
        }
    }
    const double precision = pred.empty() ? 0.0 : static_cast<double>(tp) / pred.size();
    const double recall = gt.empty() ? 0.0 : static_cast<double>(tp) / gt.size();
    if (precision + recall == 0.0) return 0.0;
    return 100.0 * 2.0 * precision * recall / (precision + recall);
}

double top1_accuracy(const std::vector<int>& pred, const std::vector<int>& gt) {
    if (pred.size() != gt.size() || pred.empty())
        throw ContractError("top1_accuracy: length mismatch or empty");
    int64_t hit = 0;
    for (size_t i = 0; i < pred.size(); ++i) hit += pred[i] == gt[i];
    return static_cast<double>(hit) / pred.size();
}

namespace {
struct Confusion {
    std::vector<int64_t> tp, fp, fn, support;
    explicit Confusion(int n) : tp(n, 0), fp(n, 0), fn(n, 0), support(n, 0) {}
};

Confusion confusion(const std::vector<int>& pred, const std::vector<int>& gt, int n) {
    if (pred.size() != gt.size() || pred.empty())
        throw ContractError("frame metrics: length mismatch or empty");
    Confusion cm(n);
    for (size_t i = 0; i < pred.size(); ++i) {
        const int p = pred[i], g = gt[i];
        if (p < 0 || p >= n || g < 0 || g >= n)
            throw ContractError("frame metrics: label out of range");
        ++cm.support[static_cast<size_t>(g)];
        if (p == g) {
            ++cm.tp[static_cast<size_t>(p)];
        } else {
            ++cm.fp[static_cast<size_t>(p)];
            ++cm.fn[static_cast<size_t>(g)];
        }
    }
    return cm;
}
}  // namespace

double f1_macro(const std::vector<int>& pred, const std::vector<int>& gt, int n_classes,
                bool support_weighted) {
    const auto cm = confusion(pred, gt, n_classes);
    double sum = 0, weight = 0;
    for (int c = 0; c < n_classes; ++c) {
        const auto k = static_cast<size_t>(c);
        const int64_t denom = 2 * cm.tp[k] + cm.fp[k] + cm.fn[k];
        if (denom == 0 && cm.support[k] == 0) continue;  // absent from both sides
        const double f1 = denom == 0 ? 0.0 : 2.0 * cm.tp[k] / static_cast<double>(denom);
        const double w = support_weighted ? static_cast<double>(cm.support[k]) : 1.0;
        sum += w * f1;
        weight += w;
    }
    return weight > 0 ? 100.0 * sum / weight : 0.0;
}

double macro_recall(const std::vector<int>& pred, const std::vector<int>& gt, int n_classes) {
    const auto cm = confusion(pred, gt, n_classes);
    double sum = 0;
    int used = 0;
    for (int c = 0; c < n_classes; ++c) {
        const auto k = static_cast<size_t>(c);
        if (cm.support[k] == 0) continue;
        sum += static_cast<double>(cm.tp[k]) / static_cast<double>(cm.support[k]);
        ++used;
    }
    return used > 0 ? 100.0 * sum / used : 0.0;
}

std::pair<double, double> ranking_metrics(const std::vector<double>& scores_pos,
                                          const std::vector<double>& scores_neg) {
    if (scores_pos.empty() || scores_neg.empty())
        throw ContractError("ranking_metrics: both score lists must be non-empty");
    struct Entry {
        double score;
        bool positive;
    };
    std::vector<Entry> all;
    all.reserve(scores_pos.size() + scores_neg.size());
    for (double s : scores_pos) all.push_back({s, true});
    for (double s : scores_neg) all.push_back({s, false});
    std::sort(all.begin(), all.end(),
              [](const Entry& a, const Entry& b) { return a.score < b.score; });

    // AUROC from the rank sum with average ranks on ties
    const double np = static_cast<double>(scores_pos.size());
    const double nn = static_cast<double>(scores_neg.size());
    double rank_sum_pos = 0;
    size_t i = 0;
    while (i < all.size()) {
        size_t j = i;
        while (j < all.size() && all[j].score == all[i].score) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (size_t k = i; k < j; ++k)
            if (all[k].positive) rank_sum_pos += avg_rank;
        i = j;
    }
    const double auroc = (rank_sum_pos - np * (np + 1) / 2.0) / (np * nn);

    // AUPRC by stepwise integration over descending score groups
    double tp = 0, fp = 0, auprc = 0, prev_recall = 0;
    int64_t gi = static_cast<int64_t>(all.size()) - 1;
    while (gi >= 0) {
        int64_t gj = gi;
        while (gj >= 0 && all[static_cast<size_t>(gj)].score == all[static_cast<size_t>(gi)].score)
            --gj;
        for (int64_t k = gi; k > gj; --k) {
            if (all[static_cast<size_t>(k)].positive)
                ++tp;
            else
                ++fp;
        }
        const double recall = tp / np;
        const double precision = (tp + fp) > 0 ? tp / (tp + fp) : 0.0;
        auprc += (recall - prev_recall) * precision;
        prev_recall = recall;
        gi = gj;
    }
    return {auroc, auprc};
}

namespace {
void check_probs(const std::vector<std::vector<double>>& probs, const std::vector<int>& labels) {
    if (probs.empty() || probs.size() != labels.size())
        throw ContractError("calibration_error: empty input or label mismatch");
    const size_t n = probs[0].size();
    for (size_t i = 0; i < probs.size(); ++i) {
        if (probs[i].size() != n) throw ContractError("calibration_error: ragged rows");
        double sum = 0;
        for (double p : probs[i]) sum += p;
        if (std::abs(sum - 1.0) > 1e-6)
            throw ContractError("calibration_error: probability row does not sum to 1");
        if (labels[i] < 0 || labels[i] >= static_cast<int>(n))
            throw ContractError("calibration_error: label out of range");
    }
}
}  // namespace

double calibration_error(const std::vector<std::vector<double>>& probs,
                         const std::vector<int>& labels, const BinSpec& spec, CalibKind kind) {
    check_probs(probs, labels);
    if (spec.bins < 2) throw ContractError("calibration_error: need at least 2 bins");
    const int n_classes = static_cast<int>(probs[0].size());
    const int b = spec.bins;
    const double total = static_cast<double>(probs.size());

    if (kind == CalibKind::ECE) {
        std::vector<double> conf_sum(static_cast<size_t>(b), 0.0), acc_sum(static_cast<size_t>(b), 0.0);
        std::vector<int64_t> count(static_cast<size_t>(b), 0);
        for (size_t i = 0; i < probs.size(); ++i) {
            int arg = 0;
            for (int c = 1; c < n_classes; ++c)
                if (probs[i][static_cast<size_t>(c)] > probs[i][static_cast<size_t>(arg)]) arg = c;
            const double conf = probs[i][static_cast<size_t>(arg)];
            const int bin = std::min(b - 1, static_cast<int>(conf * b));
            conf_sum[static_cast<size_t>(bin)] += conf;
            acc_sum[static_cast<size_t>(bin)] += arg == labels[i] ? 1.0 : 0.0;
            ++count[static_cast<size_t>(bin)];
        }
        double ece = 0;
        for (int k = 0; k < b; ++k) {
            const auto kk = static_cast<size_t>(k);
            if (!count[kk]) continue;
            ece += (count[kk] / total) * std::abs(acc_sum[kk] / count[kk] - conf_sum[kk] / count[kk]);
        }
        return ece;
    }

    if (kind == CalibKind::SCE) {
        double sce = 0;
        for (int c = 0; c < n_classes; ++c) {
            std::vector<double> conf_sum(static_cast<size_t>(b), 0.0), acc_sum(static_cast<size_t>(b), 0.0);
            std::vector<int64_t> count(static_cast<size_t>(b), 0);
            for (size_t i = 0; i < probs.size(); ++i) {
                const double p = probs[i][static_cast<size_t>(c)];
                const int bin = std::min(b - 1, static_cast<int>(p * b));
                conf_sum[static_cast<size_t>(bin)] += p;
                acc_sum[static_cast<size_t>(bin)] += labels[i] == c ? 1.0 : 0.0;
                ++count[static_cast<size_t>(bin)];
            }
            for (int k = 0; k < b; ++k) {
                const auto kk = static_cast<size_t>(k);
                if (!count[kk]) continue;
                sce += (count[kk] / total) *
                       std::abs(acc_sum[kk] / count[kk] - conf_sum[kk] / count[kk]);
            }
        }
        return sce / n_classes;
    }

    // ACE / TACE: equal-mass bins per class, unweighted average over the
    // (class, bin) cells that received samples; TACE keeps only values at or
    // above the threshold.
    double sum = 0;
    int64_t cells = 0;
    for (int c = 0; c < n_classes; ++c) {
        std::vector<std::pair<double, int>> vals;  // (probability, correct)
        for (size_t i = 0; i < probs.size(); ++i) {
            const double p = probs[i][static_cast<size_t>(c)];
            if (kind == CalibKind::TACE && p < spec.threshold) continue;
            vals.emplace_back(p, labels[i] == c ? 1 : 0);
        }
        if (vals.empty()) continue;
        std::sort(vals.begin(), vals.end());
        const int64_t m = static_cast<int64_t>(vals.size());
        for (int k = 0; k < b; ++k) {
            const int64_t lo = k * m / b, hi = (k + 1) * m / b;
            if (hi <= lo) continue;
            double conf = 0, acc = 0;
            for (int64_t i = lo; i < hi; ++i) {
                conf += vals[static_cast<size_t>(i)].first;
                acc += vals[static_cast<size_t>(i)].second;
            }
            const double width = static_cast<double>(hi - lo);
            sum += std::abs(acc / width - conf / width);
            ++cells;
        }
    }
    return cells > 0 ? sum / static_cast<double>(cells) : 0.0;
}

}  // namespace uqtf::metrics

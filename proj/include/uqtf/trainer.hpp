#pragma once

// Training loop: SGD with Nesterov momentum over augmented 120/10 windows,
// per-epoch logging, NaN abort with last-good-epoch restore, checkpointing,
// whole-record evaluation with softmax or GP heads, and the coefficient
// sweep driver.

#include <optional>
#include <string>
#include <vector>

#include "uqtf/gp_head.hpp"
#include "uqtf/metrics.hpp"
#include "uqtf/model.hpp"
#include "uqtf/synth.hpp"

namespace uqtf::train {

struct TrainConfig {
    int batch_size = 16;
    double learning_rate = 0.003;
    double momentum = 0.9;  // Nesterov
    double weight_decay = 0.0002;
    int epochs = 30;
    std::vector<double> lr_decay_at = {0.6, 0.8};  // fractions of the epoch budget
    double lr_decay_factor = 0.1;
    int window_length = 120;
    int window_stride = 10;
    bool augment = true;
    uint64_t seed = 1;
    // stop once training accuracy holds at or above this for `patience` epochs
    double early_stop_accuracy = 0.995;
    int early_stop_patience = 2;
};

// v <- m*v + (g + wd*p); p <- p - lr*(g + wd*p + m*v)
template <typename S>
void sgd_nesterov_step(Tensor<S>& param, const Tensor<S>& grad, Tensor<S>& velocity, double lr,
                       double momentum, double weight_decay) {
    if (!grad.all_finite()) throw NumericError("sgd step: non-finite gradient");
    S* p = param.mutable_data();
    const S* g = grad.data();
    S* v = velocity.mutable_data();
    const int64_t n = param.numel();
    const S m = static_cast<S>(momentum);
    const S wd = static_cast<S>(weight_decay);
    const S step = static_cast<S>(lr);
#pragma omp parallel for
    for (int64_t i = 0; i < n; ++i) {
        const S d = g[i] + wd * p[i];
        v[i] = m * v[i] + d;
        p[i] -= step * (d + m * v[i]);
    }
}

struct EpochLog {
    int epoch = 0;
    double loss = 0;
    double accuracy = 0;
    double learning_rate = 0;
    double seconds = 0;
};

struct TrainResult {
    std::vector<EpochLog> log;
    bool diverged = false;
    int epochs_run = 0;
};

TrainResult train(Model<float>& model, const synth::Dataset& dataset, const TrainConfig& cfg);

enum class Head { softmax, gp };

struct EvalReport {
    double top1 = 0;
    double f1_macro = 0;
    double f1_weighted = 0;
    double macro_recall = 0;
    double f1_at_10 = 0, f1_at_25 = 0, f1_at_50 = 0;
    double ece = 0, sce = 0, ace = 0, tace = 0;
    std::vector<std::vector<int>> predictions;  // per record, per frame
    std::vector<std::vector<std::vector<double>>> probabilities;  // per record/frame/class
};

// Whole records at batch size 1, no preprocessing. The GP head needs a bank;
// frame predictions take the arg-max score (the OOD threshold only matters
// for scoring, not for in-distribution evaluation).
EvalReport evaluate(Model<float>& model, const synth::Dataset& dataset, Head head,
                    const gp::FeatureBank* bank = nullptr,
                    const metrics::BinSpec& bins = {});

// Penultimate feature vectors per frame of one record.
std::vector<std::vector<double>> extract_features(Model<float>& model,
                                                  const synth::Record& record);

// Fits the per-class Gaussian bank on the leading records and sets the OOD
// threshold from the percentile of max-scores over the held-out tail.
gp::FeatureBank fit_bank(Model<float>& model, const synth::Dataset& dataset,
                         bool full_cov = false, double epsilon = 1e-4,
                         double holdout_fraction = 0.2, double percentile = 1.0);

// Per-frame max log-probability scores of a record (the ranking score).
std::vector<double> record_frame_scores(Model<float>& model, const synth::Record& record,
                                        const gp::FeatureBank& bank);

void save_checkpoint(const std::string& dir, const Model<float>& model,
                     const std::vector<Tensor<float>>& velocities, int epoch,
                     const std::string& config_hash);

struct CheckpointInfo {
    int epoch = 0;
    std::string config_hash;
};

CheckpointInfo load_checkpoint(const std::string& dir, Model<float>& model,
                               std::vector<Tensor<float>>* velocities = nullptr);

struct SweepRow {
    double c = 0;
    double accuracy = 0;
    double f1_at_10 = 0;
    double auroc = 0;
    double auprc = 0;
};

// Trains one model per coefficient from a shared seed and reports accuracy,
// segmentation and OOD separation per value.
std::vector<SweepRow> coefficient_sweep(const std::vector<double>& c_values,
                                        const ModelConfig& base_model_cfg,
                                        const TrainConfig& train_cfg,
                                        const synth::Dataset& train_set,
                                        const synth::Dataset& eval_set,
                                        const synth::Dataset& ood_set);

}  // namespace uqtf::train

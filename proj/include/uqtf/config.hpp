#pragma once

// Run configuration: one nested JSON document covering every module, with a
// single schema table that drives validation (unknown keys rejected), the
// generated help text, and defaults. The canonical serialized form is hashed
// into every output file.

#include <string>
#include <vector>

#include "uqtf/model.hpp"
#include "uqtf/synth.hpp"
#include "uqtf/trainer.hpp"

namespace uqtf::config {

constexpr const char* kToolVersion = "uqtf 0.1.0";

struct RunConfig {
    uint64_t seed = 1;
    int threads = 1;

    struct Data {
        int records = 40;
        int record_frames = 160;
        int object_slots = 4;
        int objects_used = 2;
        double jitter_amp = 0.004;
        double obs_noise = 0.001;
        bool ood_vocabulary = false;
        std::string layout_path;  // empty: built-in 12-joint skeleton
    } data;

    struct Model {
        std::string residual = "plain";         // none | plain | sn
        double sn_coefficient = 3.0;
        std::string attention = "product";      // product | subtract
        std::string adjacency_norm = "symmetric";  // symmetric | row_stochastic
        std::vector<int> channels = {8, 8, 8, 16, 16, 16, 32, 32, 32, 32};
        std::vector<int> stride2_blocks = {5, 8};  // 1-indexed
        int temporal_kernel = 9;
        int classes = 5;
    } model;

    struct Decoder {
        int bottleneck_expansion = 2;
        std::vector<int> tpp_bins = {1, 2, 4, 8};
        int fusion_channels = 32;
        int classifier_hidden = 32;
        bool global_feature_extractor = true;
        bool temporal_feature_fusion = true;
        bool classifier = true;
    } decoder;

    struct Train {
        int batch_size = 16;
        double learning_rate = 0.003;
        double momentum = 0.9;
        double weight_decay = 0.0002;
        int epochs = 30;
        std::vector<double> lr_decay_at = {0.6, 0.8};
        double lr_decay_factor = 0.1;
        int window_length = 120;
        int window_stride = 10;
        bool augment = true;
        double early_stop_accuracy = 0.995;
        int early_stop_patience = 2;
    } train;

    struct Gp {
        std::string mode = "diag";  // diag | full
        double epsilon = 1e-4;
        double threshold_percentile = 1.0;
        double holdout_fraction = 0.2;
    } gp;

    struct Metrics {
        int calibration_bins = 15;
        double tace_threshold = 0.01;
    } metrics;

    struct Probe {
        int pairs = 1000;
    } probe;

    struct Score {
        std::vector<std::string> noise_kinds = {"impulse", "gaussian", "poisson"};
        std::vector<double> noise_units = {1, 2, 3};
    } score;

    struct Sweep {
        std::vector<double> coefficients = {1, 2, 3, 4, 5};
    } sweep;
};

struct KeyInfo {
    std::string path;
    std::string type;
    std::string description;
};

// The schema table behind validation and --help-config.
const std::vector<KeyInfo>& schema();

// Parses and validates a config document; unknown keys are errors.
RunConfig parse(const std::string& json_text);
RunConfig load_file(const std::string& path);

// Canonical full-form serialization (all keys present, sorted).
std::string canonical_json(const RunConfig& cfg);

// FNV-1a hash of the canonical serialization, hex string.
std::string config_hash(const RunConfig& cfg);

std::string help_text();

// Module-config builders.
ModelConfig build_model_config(const RunConfig& cfg);
train::TrainConfig build_train_config(const RunConfig& cfg);
synth::GenOptions build_gen_options(const RunConfig& cfg);
graph::NodeLayout build_layout(const RunConfig& cfg);
metrics::BinSpec build_bin_spec(const RunConfig& cfg);

}  // namespace uqtf::config

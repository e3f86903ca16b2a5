#include "uqtf/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace uqtf::config {

using nlohmann::json;

const std::vector<KeyInfo>& schema() {
    static const std::vector<KeyInfo> table = {
        {"seed", "u64", "master seed; every derived stream is counter-based"},
        {"threads", "int", "worker thread cap (default 1 for bitwise reproducibility)"},
        {"data.records", "int", "number of records to generate"},
        {"data.record_frames", "int", "approximate frames per record"},
        {"data.object_slots", "int", "object node slots in the graph"},
        {"data.objects_used", "int", "object slots actually populated; the rest stay zero"},
        {"data.jitter_amp", "double", "smooth idle sway amplitude, meters"},
        {"data.obs_noise", "double", "per-frame observation noise, meters"},
        {"data.ood_vocabulary", "bool", "generate the disjoint out-of-distribution vocabulary"},
        {"data.layout_path", "string", "layout sidecar JSON; empty uses the 12-joint skeleton"},
        {"model.residual", "string", "residual arm: none | plain | sn"},
        {"model.sn_coefficient", "double", "spectral norm bound c for the sn arm"},
        {"model.attention", "string", "attention map form: product | subtract"},
        {"model.adjacency_norm", "string", "adjacency normalization: symmetric | row_stochastic"},
        {"model.channels", "int[]", "encoder channel schedule, one entry per block"},
        {"model.stride2_blocks", "int[]", "1-indexed blocks with temporal stride 2"},
        {"model.temporal_kernel", "int", "temporal convolution width (odd)"},
        {"model.classes", "int", "number of action classes"},
        {"decoder.bottleneck_expansion", "int", "inverted bottleneck expansion ratio"},
        {"decoder.tpp_bins", "int[]", "four pyramid pooling bin counts"},
        {"decoder.fusion_channels", "int", "feature fusion width"},
        {"decoder.classifier_hidden", "int", "classifier hidden width (penultimate features)"},
        {"decoder.global_feature_extractor", "bool", "ablation arm: bottlenecks plus pyramid pooling"},
        {"decoder.temporal_feature_fusion", "bool", "ablation arm: fusion vs plain interpolation"},
        {"decoder.classifier", "bool", "ablation arm: classifier vs node averaging"},
        {"train.batch_size", "int", "windows per optimizer step"},
        {"train.learning_rate", "double", "initial SGD learning rate"},
        {"train.momentum", "double", "Nesterov momentum"},
        {"train.weight_decay", "double", "L2 weight decay"},
        {"train.epochs", "int", "epoch budget"},
        {"train.lr_decay_at", "double[]", "epoch fractions where the rate decays"},
        {"train.lr_decay_factor", "double", "multiplicative decay factor"},
        {"train.window_length", "int", "training window length in frames"},
        {"train.window_stride", "int", "training window stride in frames"},
        {"train.augment", "bool", "rotation/translation/scale augmentation"},
        {"train.early_stop_accuracy", "double", "stop once training accuracy holds here"},
        {"train.early_stop_patience", "int", "epochs the accuracy must hold (0 disables)"},
        {"gp.mode", "string", "covariance mode: diag | full"},
        {"gp.epsilon", "double", "covariance regularizer added to the diagonal"},
        {"gp.threshold_percentile", "double", "held-out max-score percentile for the OOD threshold"},
        {"gp.holdout_fraction", "double", "record fraction held out for the threshold"},
        {"metrics.calibration_bins", "int", "bin count for all calibration errors"},
        {"metrics.tace_threshold", "double", "probability floor for TACE"},
        {"probe.pairs", "int", "sampled input pairs per Lipschitz probe"},
        {"score.noise_kinds", "string[]", "noise families for the AUROC-vs-intensity curve"},
        {"score.noise_units", "double[]", "unit intensities per noise family"},
        {"sweep.coefficients", "double[]", "spectral-norm coefficients to sweep"},
    };
    return table;
}

namespace {

bool known_prefix(const std::string& path) {
    for (const auto& k : schema())
        if (k.path.rfind(path + ".", 0) == 0) return true;
    return false;
}

bool known_key(const std::string& path) {
    for (const auto& k : schema())
        if (k.path == path) return true;
    return false;
}

void validate_keys(const json& j, const std::string& prefix) {
    if (!j.is_object())
        throw ConfigError("config: expected an object at '" + (prefix.empty() ? "<root>" : prefix) +
                          "'");
    for (const auto& [key, value] : j.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (known_key(path)) continue;
        if (known_prefix(path)) {
            validate_keys(value, path);
            continue;
        }
        throw ConfigError("config: unknown key '" + path + "'");
    }
}

template <typename T>
void read(const json& j, const std::string& dotted, T& out) {
    const json* cur = &j;
    std::stringstream ss(dotted);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (!cur->is_object() || !cur->contains(part)) return;  // keep default
        cur = &(*cur)[part];
    }
    try {
        out = cur->get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: bad value type for '" + dotted + "'");
    }
}

}  // namespace

RunConfig parse(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: parse error: ") + e.what());
    }
    validate_keys(j, "");

    RunConfig cfg;
    read(j, "seed", cfg.seed);
    read(j, "threads", cfg.threads);
    read(j, "data.records", cfg.data.records);
    read(j, "data.record_frames", cfg.data.record_frames);
    read(j, "data.object_slots", cfg.data.object_slots);
    read(j, "data.objects_used", cfg.data.objects_used);
    read(j, "data.jitter_amp", cfg.data.jitter_amp);
    read(j, "data.obs_noise", cfg.data.obs_noise);
    read(j, "data.ood_vocabulary", cfg.data.ood_vocabulary);
    read(j, "data.layout_path", cfg.data.layout_path);
    read(j, "model.residual", cfg.model.residual);
    read(j, "model.sn_coefficient", cfg.model.sn_coefficient);
    read(j, "model.attention", cfg.model.attention);
    read(j, "model.adjacency_norm", cfg.model.adjacency_norm);
    read(j, "model.channels", cfg.model.channels);
    read(j, "model.stride2_blocks", cfg.model.stride2_blocks);
    read(j, "model.temporal_kernel", cfg.model.temporal_kernel);
    read(j, "model.classes", cfg.model.classes);
    read(j, "decoder.bottleneck_expansion", cfg.decoder.bottleneck_expansion);
    read(j, "decoder.tpp_bins", cfg.decoder.tpp_bins);
    read(j, "decoder.fusion_channels", cfg.decoder.fusion_channels);
    read(j, "decoder.classifier_hidden", cfg.decoder.classifier_hidden);
    read(j, "decoder.global_feature_extractor", cfg.decoder.global_feature_extractor);
    read(j, "decoder.temporal_feature_fusion", cfg.decoder.temporal_feature_fusion);
    read(j, "decoder.classifier", cfg.decoder.classifier);
    read(j, "train.batch_size", cfg.train.batch_size);
    read(j, "train.learning_rate", cfg.train.learning_rate);
    read(j, "train.momentum", cfg.train.momentum);
    read(j, "train.weight_decay", cfg.train.weight_decay);
    read(j, "train.epochs", cfg.train.epochs);
    read(j, "train.lr_decay_at", cfg.train.lr_decay_at);
    read(j, "train.lr_decay_factor", cfg.train.lr_decay_factor);
    read(j, "train.window_length", cfg.train.window_length);
    read(j, "train.window_stride", cfg.train.window_stride);
    read(j, "train.augment", cfg.train.augment);
    read(j, "train.early_stop_accuracy", cfg.train.early_stop_accuracy);
    read(j, "train.early_stop_patience", cfg.train.early_stop_patience);
    read(j, "gp.mode", cfg.gp.mode);
    read(j, "gp.epsilon", cfg.gp.epsilon);
    read(j, "gp.threshold_percentile", cfg.gp.threshold_percentile);
    read(j, "gp.holdout_fraction", cfg.gp.holdout_fraction);
    read(j, "metrics.calibration_bins", cfg.metrics.calibration_bins);
    read(j, "metrics.tace_threshold", cfg.metrics.tace_threshold);
    read(j, "probe.pairs", cfg.probe.pairs);
    read(j, "score.noise_kinds", cfg.score.noise_kinds);
    read(j, "score.noise_units", cfg.score.noise_units);
    read(j, "sweep.coefficients", cfg.sweep.coefficients);

    if (cfg.model.residual != "none" && cfg.model.residual != "plain" &&
        cfg.model.residual != "sn")
        throw ConfigError("config: model.residual must be none|plain|sn");
    if (cfg.model.attention != "product" && cfg.model.attention != "subtract")
        throw ConfigError("config: model.attention must be product|subtract");
    if (cfg.model.adjacency_norm != "symmetric" && cfg.model.adjacency_norm != "row_stochastic")
        throw ConfigError("config: model.adjacency_norm must be symmetric|row_stochastic");
    if (cfg.gp.mode != "diag" && cfg.gp.mode != "full")
        throw ConfigError("config: gp.mode must be diag|full");
    if (cfg.model.sn_coefficient <= 0)
        throw ConfigError("config: model.sn_coefficient must be positive");
    if (cfg.decoder.tpp_bins.size() != 4)
        throw ConfigError("config: decoder.tpp_bins must list exactly 4 scales");
    return cfg;
}

RunConfig load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config file not found: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str());
}

std::string canonical_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["threads"] = cfg.threads;
    j["data"]["records"] = cfg.data.records;
    j["data"]["record_frames"] = cfg.data.record_frames;
    j["data"]["object_slots"] = cfg.data.object_slots;
    j["data"]["objects_used"] = cfg.data.objects_used;
    j["data"]["jitter_amp"] = cfg.data.jitter_amp;
    j["data"]["obs_noise"] = cfg.data.obs_noise;
    j["data"]["ood_vocabulary"] = cfg.data.ood_vocabulary;
    j["data"]["layout_path"] = cfg.data.layout_path;
    j["model"]["residual"] = cfg.model.residual;
    j["model"]["sn_coefficient"] = cfg.model.sn_coefficient;
    j["model"]["attention"] = cfg.model.attention;
    j["model"]["adjacency_norm"] = cfg.model.adjacency_norm;
    j["model"]["channels"] = cfg.model.channels;
    j["model"]["stride2_blocks"] = cfg.model.stride2_blocks;
    j["model"]["temporal_kernel"] = cfg.model.temporal_kernel;
    j["model"]["classes"] = cfg.model.classes;
    j["decoder"]["bottleneck_expansion"] = cfg.decoder.bottleneck_expansion;
    j["decoder"]["tpp_bins"] = cfg.decoder.tpp_bins;
    j["decoder"]["fusion_channels"] = cfg.decoder.fusion_channels;
    j["decoder"]["classifier_hidden"] = cfg.decoder.classifier_hidden;
    j["decoder"]["global_feature_extractor"] = cfg.decoder.global_feature_extractor;
    j["decoder"]["temporal_feature_fusion"] = cfg.decoder.temporal_feature_fusion;
    j["decoder"]["classifier"] = cfg.decoder.classifier;
    j["train"]["batch_size"] = cfg.train.batch_size;
    j["train"]["learning_rate"] = cfg.train.learning_rate;
    j["train"]["momentum"] = cfg.train.momentum;
    j["train"]["weight_decay"] = cfg.train.weight_decay;
    j["train"]["epochs"] = cfg.train.epochs;
    j["train"]["lr_decay_at"] = cfg.train.lr_decay_at;
    j["train"]["lr_decay_factor"] = cfg.train.lr_decay_factor;
    j["train"]["window_length"] = cfg.train.window_length;
    j["train"]["window_stride"] = cfg.train.window_stride;
    j["train"]["augment"] = cfg.train.augment;
    j["train"]["early_stop_accuracy"] = cfg.train.early_stop_accuracy;
    j["train"]["early_stop_patience"] = cfg.train.early_stop_patience;
    j["gp"]["mode"] = cfg.gp.mode;
    j["gp"]["epsilon"] = cfg.gp.epsilon;
    j["gp"]["threshold_percentile"] = cfg.gp.threshold_percentile;
    j["gp"]["holdout_fraction"] = cfg.gp.holdout_fraction;
    j["metrics"]["calibration_bins"] = cfg.metrics.calibration_bins;
    j["metrics"]["tace_threshold"] = cfg.metrics.tace_threshold;
    j["probe"]["pairs"] = cfg.probe.pairs;
    j["score"]["noise_kinds"] = cfg.score.noise_kinds;
    j["score"]["noise_units"] = cfg.score.noise_units;
    j["sweep"]["coefficients"] = cfg.sweep.coefficients;
    return j.dump();
}

std::string config_hash(const RunConfig& cfg) {
    const std::string text = canonical_json(cfg);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string help_text() {
    std::string out = "configuration keys:\n";
    for (const auto& k : schema()) {
        out += "  ";
        out += k.path;
        out += " (" + k.type + "): " + k.description + "\n";
    }
    return out;
}

ModelConfig build_model_config(const RunConfig& cfg) {
    ModelConfig mc;
    mc.in_channels = 3;
    mc.classes = cfg.model.classes;
    mc.arm = cfg.model.residual == "none"
                 ? ResidualArm::none
                 : (cfg.model.residual == "sn" ? ResidualArm::sn : ResidualArm::plain);
    mc.sn_c = cfg.model.sn_coefficient;
    mc.adj_norm = cfg.model.adjacency_norm == "row_stochastic" ? graph::AdjNorm::row_stochastic
                                                               : graph::AdjNorm::symmetric;
    mc.encoder.attention = cfg.model.attention == "subtract" ? enc::AttentionForm::subtract
                                                             : enc::AttentionForm::product;
    mc.encoder.blocks.clear();
    int64_t prev = 3;
    for (size_t i = 0; i < cfg.model.channels.size(); ++i) {
        enc::STBlockConfig b;
        b.c_in = prev;
        b.c_out = cfg.model.channels[i];
        b.temporal_kernel = cfg.model.temporal_kernel;
        const bool stride2 =
            std::find(cfg.model.stride2_blocks.begin(), cfg.model.stride2_blocks.end(),
                      static_cast<int>(i) + 1) != cfg.model.stride2_blocks.end();
        b.temporal_stride = stride2 ? 2 : 1;
        if (mc.arm == ResidualArm::none)
            b.residual = enc::ResidualKind::none;
        else
            b.residual = (b.c_in == b.c_out && !stride2) ? enc::ResidualKind::identity
                                                         : enc::ResidualKind::projection;
        mc.encoder.blocks.push_back(b);
        prev = b.c_out;
    }
    mc.decoder.enc_channels = mc.encoder.out_channels();
    mc.decoder.bottleneck_expansion = cfg.decoder.bottleneck_expansion;
    for (size_t i = 0; i < 4; ++i)
        mc.decoder.tpp_bins[i] = cfg.decoder.tpp_bins[i];
    mc.decoder.fusion_channels = cfg.decoder.fusion_channels;
    mc.decoder.classifier_hidden = cfg.decoder.classifier_hidden;
    mc.decoder.classes = cfg.model.classes;
    mc.decoder.temporal_kernel = cfg.model.temporal_kernel;
    mc.decoder.global_feature_extractor = cfg.decoder.global_feature_extractor;
    mc.decoder.temporal_feature_fusion = cfg.decoder.temporal_feature_fusion;
    mc.decoder.classifier = cfg.decoder.classifier;
    return mc;
}

train::TrainConfig build_train_config(const RunConfig& cfg) {
    train::TrainConfig tc;
    tc.batch_size = cfg.train.batch_size;
    tc.learning_rate = cfg.train.learning_rate;
    tc.momentum = cfg.train.momentum;
    tc.weight_decay = cfg.train.weight_decay;
    tc.epochs = cfg.train.epochs;
    tc.lr_decay_at = cfg.train.lr_decay_at;
    tc.lr_decay_factor = cfg.train.lr_decay_factor;
    tc.window_length = cfg.train.window_length;
    tc.window_stride = cfg.train.window_stride;
    tc.augment = cfg.train.augment;
    tc.seed = cfg.seed;
    tc.early_stop_accuracy = cfg.train.early_stop_accuracy;
    tc.early_stop_patience = cfg.train.early_stop_patience;
    return tc;
}

synth::GenOptions build_gen_options(const RunConfig& cfg) {
    synth::GenOptions opt;
    opt.record_frames = cfg.data.record_frames;
    opt.jitter_amp = cfg.data.jitter_amp;
    opt.obs_noise = cfg.data.obs_noise;
    opt.object_slots_used = cfg.data.objects_used;
    return opt;
}

graph::NodeLayout build_layout(const RunConfig& cfg) {
    if (!cfg.data.layout_path.empty()) return graph::layout_from_json_file(cfg.data.layout_path);
    return graph::default_layout(cfg.data.object_slots);
}

metrics::BinSpec build_bin_spec(const RunConfig& cfg) {
    metrics::BinSpec spec;
    spec.bins = cfg.metrics.calibration_bins;
    spec.threshold = cfg.metrics.tace_threshold;
    return spec;
}

}  // namespace uqtf::config

#include "uqtf/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <random>

#include "json.hpp"
#include "uqtf/logging.hpp"
#include "uqtf/tensor_io.hpp"

namespace uqtf::train {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct WindowSet {
    std::vector<synth::Record> windows;
};

WindowSet make_windows(const synth::Dataset& dataset, const TrainConfig& cfg) {
    WindowSet ws;
    for (const auto& rec : dataset.records) {
        auto w = synth::window(rec, cfg.window_length, cfg.window_stride);
        for (auto& win : w) ws.windows.push_back(std::move(win));
    }
    if (ws.windows.empty())
        throw ContractError("train: no windows; records shorter than the window length");
    return ws;
}

// Stacks records (already equal length) into one batch tensor plus labels.
std::pair<Tensor<float>, std::vector<int>> stack_batch(const std::vector<const synth::Record*>& recs) {
    const int64_t b = static_cast<int64_t>(recs.size());
    const int64_t c = recs[0]->data.dim(0), t = recs[0]->data.dim(1), v = recs[0]->data.dim(2);
    Tensor<float> batch({b, c, t, v});
    std::vector<int> labels;
    labels.reserve(static_cast<size_t>(b * t));
    for (int64_t i = 0; i < b; ++i) {
        std::copy(recs[static_cast<size_t>(i)]->data.data(),
                  recs[static_cast<size_t>(i)]->data.data() + c * t * v,
                  batch.mutable_data() + i * c * t * v);
        for (int lbl : recs[static_cast<size_t>(i)]->labels) labels.push_back(lbl);
    }
    return {std::move(batch), std::move(labels)};
}

struct ParamSnapshot {
    std::vector<Tensor<float>> values;
    std::vector<Tensor<float>> buffers;
};

ParamSnapshot snapshot(const Model<float>& model) {
    ParamSnapshot s;
    for (const auto& p : model.store.params()) s.values.push_back(p->value.clone());
    for (const auto& b : model.store.buffers()) s.buffers.push_back(b->value.clone());
    return s;
}

void restore(Model<float>& model, const ParamSnapshot& s) {
    auto& params = model.store.params();
    for (size_t i = 0; i < params.size(); ++i)
        std::copy(s.values[i].data(), s.values[i].data() + s.values[i].numel(),
                  params[i]->value.mutable_data());
    auto& buffers = model.store.buffers();
    for (size_t i = 0; i < buffers.size(); ++i)
        std::copy(s.buffers[i].data(), s.buffers[i].data() + s.buffers[i].numel(),
                  buffers[i]->value.mutable_data());
}

}  // namespace

TrainResult train(Model<float>& model, const synth::Dataset& dataset, const TrainConfig& cfg) {
    if (cfg.batch_size < 1 || cfg.epochs < 1 || cfg.learning_rate < 0)
        throw ConfigError("train: bad optimizer configuration");

    auto ws = make_windows(dataset, cfg);
    const size_t n_windows = ws.windows.size();
    log::info("training on " + std::to_string(n_windows) + " windows from " +
              std::to_string(dataset.records.size()) + " records");

    std::vector<Tensor<float>> velocity;
    for (const auto& p : model.store.params()) velocity.emplace_back(p->value.shape());

    TrainResult result;
    ParamSnapshot last_good = snapshot(model);
    int steady_epochs = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = Clock::now();
        double lr = cfg.learning_rate;
        for (double frac : cfg.lr_decay_at)
            if (epoch >= static_cast<int>(frac * cfg.epochs)) lr *= cfg.lr_decay_factor;

        std::mt19937_64 shuffle_rng(synth::derive_seed(cfg.seed, 0x5e9 + static_cast<uint64_t>(epoch)));
        std::vector<size_t> order(n_windows);
        for (size_t i = 0; i < n_windows; ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0;
        int64_t frames = 0, correct = 0;
        size_t batches = 0;

        try {
            for (size_t start = 0; start < n_windows; start += static_cast<size_t>(cfg.batch_size)) {
                const size_t stop = std::min(n_windows, start + static_cast<size_t>(cfg.batch_size));
                std::vector<synth::Record> augmented;
                augmented.reserve(stop - start);
                std::vector<const synth::Record*> batch_recs;
                for (size_t k = start; k < stop; ++k) {
                    const auto& win = ws.windows[order[k]];
                    if (cfg.augment) {
                        augmented.push_back(synth::augment(
                            win, synth::derive_seed(cfg.seed,
                                                    0xa06ULL * (epoch + 1) + order[k])));
                        batch_recs.push_back(&augmented.back());
                    } else {
                        batch_recs.push_back(&win);
                    }
                }
                auto [batch, labels] = stack_batch(batch_recs);

                model.store.zero_grads();
                auto ctx = model.make_ctx(true);
                auto out = model.forward(ctx, batch);
                auto loss = ad::cross_entropy(out.logits, labels);
                ad::backward(loss);
                ctx.harvest();

                auto& params = model.store.params();
                for (size_t i = 0; i < params.size(); ++i)
                    sgd_nesterov_step(params[i]->value, params[i]->grad, velocity[i], lr,
                                      cfg.momentum, cfg.weight_decay);

                loss_sum += static_cast<double>(loss->value.item());
                ++batches;
                // training accuracy from the same forward
                const auto& lg = out.logits->value;
                const int64_t bsz = lg.dim(0), ncls = lg.dim(1), tlen = lg.dim(2);
                for (int64_t b = 0; b < bsz; ++b)
                    for (int64_t t = 0; t < tlen; ++t) {
                        int arg = 0;
                        for (int64_t cc = 1; cc < ncls; ++cc)
                            if (lg.at3(b, cc, t) > lg.at3(b, arg, t)) arg = static_cast<int>(cc);
                        correct += arg == labels[static_cast<size_t>(b * tlen + t)];
                        ++frames;
                    }
            }
        } catch (const NumericError& e) {
            log::error(std::string("training diverged: ") + e.what() +
                       "; restoring the last finished epoch");
            restore(model, last_good);
            result.diverged = true;
            break;
        }

        EpochLog el;
        el.epoch = epoch;
        el.loss = loss_sum / static_cast<double>(batches);
        el.accuracy = static_cast<double>(correct) / static_cast<double>(frames);
        el.learning_rate = lr;
        el.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
        result.log.push_back(el);
        result.epochs_run = epoch + 1;
        last_good = snapshot(model);
        log::info("epoch " + std::to_string(epoch) + ": loss " + std::to_string(el.loss) +
                  ", acc " + std::to_string(el.accuracy) + ", lr " + std::to_string(lr));

        if (el.accuracy >= cfg.early_stop_accuracy)
            ++steady_epochs;
        else
            steady_epochs = 0;
        if (cfg.early_stop_patience > 0 && steady_epochs >= cfg.early_stop_patience) break;
    }
    return result;
}

namespace {

std::vector<int> argmax_frames(const Tensor<float>& logits) {
    const int64_t n = logits.dim(1), t = logits.dim(2);
    std::vector<int> out(static_cast<size_t>(t));
    for (int64_t tt = 0; tt < t; ++tt) {
        int arg = 0;
        for (int64_t c = 1; c < n; ++c)
            if (logits.at3(0, c, tt) > logits.at3(0, arg, tt)) arg = static_cast<int>(c);
        out[static_cast<size_t>(tt)] = arg;
    }
    return out;
}

std::vector<std::vector<double>> softmax_frames(const Tensor<float>& logits) {
    const int64_t n = logits.dim(1), t = logits.dim(2);
    std::vector<std::vector<double>> probs(static_cast<size_t>(t),
                                           std::vector<double>(static_cast<size_t>(n)));
    for (int64_t tt = 0; tt < t; ++tt) {
        double mx = logits.at3(0, 0, tt);
        for (int64_t c = 1; c < n; ++c) mx = std::max(mx, static_cast<double>(logits.at3(0, c, tt)));
        double z = 0;
        for (int64_t c = 0; c < n; ++c) {
            const double e = std::exp(static_cast<double>(logits.at3(0, c, tt)) - mx);
            probs[static_cast<size_t>(tt)][static_cast<size_t>(c)] = e;
            z += e;
        }
        for (int64_t c = 0; c < n; ++c) probs[static_cast<size_t>(tt)][static_cast<size_t>(c)] /= z;
    }
    return probs;
}

}  // namespace

std::vector<std::vector<double>> extract_features(Model<float>& model,
                                                  const synth::Record& record) {
    const int64_t c = record.data.dim(0), t = record.data.dim(1), v = record.data.dim(2);
    auto ctx = model.make_ctx(false, false);
    auto out = model.forward(ctx, record.data.reshape({1, c, t, v}));
    const auto& feat = out.penultimate->value;  // [1 x h x T x 1]
    const int64_t h = feat.dim(1);
    std::vector<std::vector<double>> features(static_cast<size_t>(t),
                                              std::vector<double>(static_cast<size_t>(h)));
    for (int64_t tt = 0; tt < t; ++tt)
        for (int64_t j = 0; j < h; ++j)
            features[static_cast<size_t>(tt)][static_cast<size_t>(j)] =
                static_cast<double>(feat.at4(0, j, tt, 0));
    return features;
}

EvalReport evaluate(Model<float>& model, const synth::Dataset& dataset, Head head,
                    const gp::FeatureBank* bank, const metrics::BinSpec& bins) {
    if (head == Head::gp && !bank) throw ContractError("evaluate: GP head requires a bank");
    if (dataset.records.empty()) throw ContractError("evaluate: empty dataset");

    EvalReport rep;
    std::vector<int> all_pred, all_gt;
    std::vector<std::vector<double>> all_probs;
    double f10 = 0, f25 = 0, f50 = 0;

    for (const auto& rec : dataset.records) {
        const int64_t c = rec.data.dim(0), t = rec.data.dim(1), v = rec.data.dim(2);
        auto ctx = model.make_ctx(false, false);
        auto out = model.forward(ctx, rec.data.reshape({1, c, t, v}));

        std::vector<int> pred;
        std::vector<std::vector<double>> probs;
        if (head == Head::softmax) {
            pred = argmax_frames(out.logits->value);
            probs = softmax_frames(out.logits->value);
        } else {
            const auto feats = extract_features(model, rec);
            pred.resize(static_cast<size_t>(t));
            probs.resize(static_cast<size_t>(t));
            for (int64_t tt = 0; tt < t; ++tt) {
                const auto scores = gp::gp_log_likelihood(feats[static_cast<size_t>(tt)], *bank);
                auto uq = gp::predict_with_threshold(scores,
                                                     -std::numeric_limits<double>::infinity());
                pred[static_cast<size_t>(tt)] = uq.label;
                probs[static_cast<size_t>(tt)] = uq.calibration_probs;
            }
        }

        const auto pred_segs = metrics::segments_from_frames(pred);
        const auto gt_segs = metrics::segments_from_frames(rec.labels);
        f10 += metrics::f1_at_k(pred_segs, gt_segs, 10);
        f25 += metrics::f1_at_k(pred_segs, gt_segs, 25);
        f50 += metrics::f1_at_k(pred_segs, gt_segs, 50);

        all_pred.insert(all_pred.end(), pred.begin(), pred.end());
        all_gt.insert(all_gt.end(), rec.labels.begin(), rec.labels.end());
        all_probs.insert(all_probs.end(), probs.begin(), probs.end());
        rep.predictions.push_back(std::move(pred));
        rep.probabilities.push_back(std::move(probs));
    }

    const int n_classes = static_cast<int>(model.cfg.classes);
    rep.top1 = metrics::top1_accuracy(all_pred, all_gt);
    rep.f1_macro = metrics::f1_macro(all_pred, all_gt, n_classes);
    rep.f1_weighted = metrics::f1_macro(all_pred, all_gt, n_classes, true);
    rep.macro_recall = metrics::macro_recall(all_pred, all_gt, n_classes);
    const double nrec = static_cast<double>(dataset.records.size());
    rep.f1_at_10 = f10 / nrec;
    rep.f1_at_25 = f25 / nrec;
    rep.f1_at_50 = f50 / nrec;
    rep.ece = metrics::calibration_error(all_probs, all_gt, bins, metrics::CalibKind::ECE);
    rep.sce = metrics::calibration_error(all_probs, all_gt, bins, metrics::CalibKind::SCE);
    rep.ace = metrics::calibration_error(all_probs, all_gt, bins, metrics::CalibKind::ACE);
    rep.tace = metrics::calibration_error(all_probs, all_gt, bins, metrics::CalibKind::TACE);
    return rep;
}

gp::FeatureBank fit_bank(Model<float>& model, const synth::Dataset& dataset, bool full_cov,
                         double epsilon, double holdout_fraction, double percentile) {
    if (dataset.records.empty()) throw ContractError("fit_bank: empty dataset");
    const size_t n = dataset.records.size();
    size_t holdout = static_cast<size_t>(holdout_fraction * static_cast<double>(n));
    if (holdout >= n) holdout = n - 1;
    const size_t fit_count = n - holdout;

    std::optional<gp::FeatureCollector> collector;
    for (size_t r = 0; r < fit_count; ++r) {
        const auto& rec = dataset.records[r];
        const auto feats = extract_features(model, rec);
        if (!collector)
            collector.emplace(static_cast<int>(model.cfg.classes),
                              static_cast<int64_t>(feats[0].size()));
        for (size_t t = 0; t < feats.size(); ++t)
            collector->add(rec.labels[t], feats[t].data());
    }
    auto bank = collector->fit(full_cov, epsilon);

    std::vector<double> max_scores;
    for (size_t r = fit_count; r < n; ++r) {
        const auto scores = record_frame_scores(model, dataset.records[r], bank);
        max_scores.insert(max_scores.end(), scores.begin(), scores.end());
    }
    if (max_scores.empty()) {
        // no held-out records: fall back to the fitting split
        for (size_t r = 0; r < fit_count; ++r) {
            const auto scores = record_frame_scores(model, dataset.records[r], bank);
            max_scores.insert(max_scores.end(), scores.begin(), scores.end());
        }
    }
    bank.threshold = gp::threshold_from_scores(std::move(max_scores), percentile);
    return bank;
}

std::vector<double> record_frame_scores(Model<float>& model, const synth::Record& record,
                                        const gp::FeatureBank& bank) {
    const auto feats = extract_features(model, record);
    std::vector<double> out(feats.size());
    for (size_t t = 0; t < feats.size(); ++t)
        out[t] = gp::max_score(gp::gp_log_likelihood(feats[t], bank));
    return out;
}

void save_checkpoint(const std::string& dir, const Model<float>& model,
                     const std::vector<Tensor<float>>& velocities, int epoch,
                     const std::string& config_hash) {
    fs::create_directories(fs::path(dir) / "params");
    nlohmann::json index;
    index["epoch"] = epoch;
    index["config_hash"] = config_hash;
    index["arm"] = residual_arm_name(model.cfg.arm);
    auto params = nlohmann::json::array();
    const auto& ps = model.store.params();
    for (size_t i = 0; i < ps.size(); ++i) {
        const auto& p = ps[i];
        io::save_tensor((fs::path(dir) / "params" / (p->name + ".uqtf")).string(), p->value);
        nlohmann::json entry;
        entry["name"] = p->name;
        entry["spectral_norm"] = p->spectral_norm;
        if (p->spectral_norm && p->sn.initialized()) {
            io::save_tensor((fs::path(dir) / "params" / (p->name + ".sn_u.uqtf")).string(), p->sn.u);
            io::save_tensor((fs::path(dir) / "params" / (p->name + ".sn_v.uqtf")).string(), p->sn.v);
            entry["sn_state"] = true;
        }
        if (i < velocities.size()) {
            io::save_tensor((fs::path(dir) / "params" / (p->name + ".vel.uqtf")).string(),
                            velocities[i]);
            entry["velocity"] = true;
        }
        params.push_back(entry);
    }
    index["params"] = params;
    auto buffers = nlohmann::json::array();
    for (const auto& b : model.store.buffers()) {
        io::save_tensor((fs::path(dir) / "params" / (b->name + ".uqtf")).string(), b->value);
        buffers.push_back(b->name);
    }
    index["buffers"] = buffers;
    std::ofstream os(fs::path(dir) / "index.json");
    if (!os) throw IoError("cannot write checkpoint index under " + dir);
    os << index.dump(2);
}

CheckpointInfo load_checkpoint(const std::string& dir, Model<float>& model,
                               std::vector<Tensor<float>>* velocities) {
    std::ifstream is(fs::path(dir) / "index.json");
    if (!is) throw IoError("checkpoint not found: " + dir);
    nlohmann::json index;
    try {
        is >> index;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("bad checkpoint index: ") + e.what());
    }
    CheckpointInfo info;
    info.epoch = index.value("epoch", 0);
    info.config_hash = index.value("config_hash", "");

    if (velocities) velocities->clear();
    for (const auto& entry : index.at("params")) {
        const std::string name = entry.at("name").get<std::string>();
        auto* p = model.store.find(name);
        if (!p) throw IoError("checkpoint parameter not in model: " + name);
        auto loaded = io::load_tensor<float>((fs::path(dir) / "params" / (name + ".uqtf")).string());
        if (loaded.shape() != p->value.shape())
            throw IoError("checkpoint shape mismatch for " + name);
        std::copy(loaded.data(), loaded.data() + loaded.numel(), p->value.mutable_data());
        if (entry.value("sn_state", false)) {
            p->sn.u = io::load_tensor<float>(
                (fs::path(dir) / "params" / (name + ".sn_u.uqtf")).string());
            p->sn.v = io::load_tensor<float>(
                (fs::path(dir) / "params" / (name + ".sn_v.uqtf")).string());
        }
        if (velocities && entry.value("velocity", false))
            velocities->push_back(io::load_tensor<float>(
                (fs::path(dir) / "params" / (name + ".vel.uqtf")).string()));
    }
    for (const auto& bname : index.at("buffers")) {
        const std::string name = bname.get<std::string>();
        auto* b = model.store.find_buffer(name);
        if (!b) throw IoError("checkpoint buffer not in model: " + name);
        auto loaded = io::load_tensor<float>((fs::path(dir) / "params" / (name + ".uqtf")).string());
        std::copy(loaded.data(), loaded.data() + loaded.numel(), b->value.mutable_data());
    }
    return info;
}

std::vector<SweepRow> coefficient_sweep(const std::vector<double>& c_values,
                                        const ModelConfig& base_model_cfg,
                                        const TrainConfig& train_cfg,
                                        const synth::Dataset& train_set,
                                        const synth::Dataset& eval_set,
                                        const synth::Dataset& ood_set) {
    if (c_values.empty()) throw ConfigError("sweep: no coefficient values");
    std::vector<SweepRow> rows;
    for (double c : c_values) {
        if (c <= 0) throw ConfigError("sweep: coefficients must be positive");
        ModelConfig cfg = base_model_cfg;
        cfg.arm = ResidualArm::sn;
        cfg.sn_c = c;
        auto model = Model<float>::build(cfg, train_set.layout, train_cfg.seed);
        train(model, train_set, train_cfg);

        auto bank = fit_bank(model, train_set);
        auto rep = evaluate(model, eval_set, Head::gp, &bank);

        std::vector<double> id_scores, ood_scores;
        for (const auto& rec : eval_set.records) {
            auto s = record_frame_scores(model, rec, bank);
            id_scores.insert(id_scores.end(), s.begin(), s.end());
        }
        for (const auto& rec : ood_set.records) {
            auto s = record_frame_scores(model, rec, bank);
            ood_scores.insert(ood_scores.end(), s.begin(), s.end());
        }
        const auto [auroc, auprc] = metrics::ranking_metrics(id_scores, ood_scores);

        SweepRow row;
        row.c = c;
        row.accuracy = rep.top1;
        row.f1_at_10 = rep.f1_at_10;
        row.auroc = auroc;
        row.auprc = auprc;
        rows.push_back(row);
        log::info("sweep c=" + std::to_string(c) + ": acc " + std::to_string(row.accuracy) +
                  ", auroc " + std::to_string(auroc));
    }
    return rows;
}

}  // namespace uqtf::train

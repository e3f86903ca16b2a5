// Command-line entry point: dataset generation, training, evaluation,
// feature-bank fitting, OOD scoring with noise curves, Lipschitz probes,
// coefficient sweeps and standalone metric reports.

#include <filesystem>
#include <fstream>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"
#include "uqtf/config.hpp"
#include "uqtf/gp_head.hpp"
#include "uqtf/logging.hpp"
#include "uqtf/metrics.hpp"
#include "uqtf/spectral.hpp"
#include "uqtf/trainer.hpp"

namespace fs = std::filesystem;
using namespace uqtf;
using nlohmann::json;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::string out_dir;
    uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
};

config::RunConfig load_config(const GlobalArgs& g) {
    config::RunConfig cfg;
    if (!g.config_path.empty()) cfg = config::load_file(g.config_path);
    if (g.seed_set) cfg.seed = g.seed;
    if (g.threads > 0) cfg.threads = g.threads;
#ifdef _OPENMP
    omp_set_num_threads(std::max(1, cfg.threads));
#endif
    return cfg;
}

json provenance(const config::RunConfig& cfg) {
    json j;
    j["config_hash"] = config::config_hash(cfg);
    j["seed"] = cfg.seed;
    j["tool_version"] = config::kToolVersion;
    return j;
}

void write_json(const std::string& path, const json& j) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << j.dump(2) << "\n";
}

void require_artifact(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) throw ConfigError(what + " not found: " + path);
}

synth::Dataset generate(const config::RunConfig& cfg) {
    auto layout = config::build_layout(cfg);
    auto opt = config::build_gen_options(cfg);
    synth::Dataset ds;
    ds.layout = layout;
    ds.class_names = cfg.data.ood_vocabulary ? synth::ood_class_names() : synth::id_class_names();
    ds.records.resize(static_cast<size_t>(cfg.data.records));
#pragma omp parallel for
    for (int i = 0; i < cfg.data.records; ++i) {
        const auto script =
            cfg.data.ood_vocabulary
                ? synth::random_ood_script(layout, opt, synth::derive_seed(cfg.seed, 7000 + i))
                : synth::random_script(layout, opt, synth::derive_seed(cfg.seed, 1000 + i));
        auto rec = synth::generate_record(script, layout, synth::derive_seed(cfg.seed, i), opt);
        rec.id = i;
        ds.records[static_cast<size_t>(i)] = std::move(rec);
    }
    return ds;
}

Model<float> build_model(const config::RunConfig& cfg, const graph::NodeLayout& layout) {
    return Model<float>::build(config::build_model_config(cfg), layout, cfg.seed);
}

json eval_report_json(const train::EvalReport& rep) {
    json j;
    j["top1"] = rep.top1;
    j["f1_macro"] = rep.f1_macro;
    j["f1_weighted"] = rep.f1_weighted;
    j["macro_recall"] = rep.macro_recall;
    j["f1_at_10"] = rep.f1_at_10;
    j["f1_at_25"] = rep.f1_at_25;
    j["f1_at_50"] = rep.f1_at_50;
    j["ece"] = rep.ece;
    j["sce"] = rep.sce;
    j["ace"] = rep.ace;
    j["tace"] = rep.tace;
    return j;
}

void append_metric_csv(std::ostream& os, const std::string& run, const std::string& metric,
                       double value) {
    os << run << "," << metric << "," << value << "\n";
}

void write_eval_csv(const std::string& path, const std::string& run,
                    const train::EvalReport& rep) {
    std::ofstream os(path);
    os << "run,metric,value\n";
    append_metric_csv(os, run, "top1", rep.top1);
    append_metric_csv(os, run, "f1_macro", rep.f1_macro);
    append_metric_csv(os, run, "f1_weighted", rep.f1_weighted);
    append_metric_csv(os, run, "macro_recall", rep.macro_recall);
    append_metric_csv(os, run, "f1_at_10", rep.f1_at_10);
    append_metric_csv(os, run, "f1_at_25", rep.f1_at_25);
    append_metric_csv(os, run, "f1_at_50", rep.f1_at_50);
    append_metric_csv(os, run, "ece", rep.ece);
    append_metric_csv(os, run, "sce", rep.sce);
    append_metric_csv(os, run, "ace", rep.ace);
    append_metric_csv(os, run, "tace", rep.tace);
}

int cmd_gen_data(const GlobalArgs& g) {
    auto cfg = load_config(g);
    auto ds = generate(cfg);
    synth::save_dataset(g.out_dir, ds);
    json summary = provenance(cfg);
    summary["records"] = ds.records.size();
    summary["classes"] = ds.class_names;
    int64_t frames = 0;
    for (const auto& r : ds.records) frames += r.data.dim(1);
    summary["total_frames"] = frames;
    write_json((fs::path(g.out_dir) / "summary.json").string(), summary);
    std::cout << "generated " << ds.records.size() << " records (" << frames << " frames) under "
              << g.out_dir << "\n";
    return 0;
}

int cmd_train(const GlobalArgs& g, const std::string& data_dir) {
    auto cfg = load_config(g);
    require_artifact(data_dir + "/manifest.json", "dataset manifest");
    auto ds = synth::load_dataset(data_dir);
    auto model = build_model(cfg, ds.layout);
    auto result = train::train(model, ds, config::build_train_config(cfg));

    std::vector<Tensor<float>> vel;  // final velocities are not part of the contract
    for (const auto& p : model.store.params()) vel.emplace_back(p->value.shape());
    train::save_checkpoint((fs::path(g.out_dir) / "checkpoint").string(), model, vel,
                           result.epochs_run, config::config_hash(cfg));

    {
        std::ofstream os(fs::path(g.out_dir) / "train_log.jsonl");
        for (const auto& l : result.log) {
            json e;
            e["epoch"] = l.epoch;
            e["loss"] = l.loss;
            e["accuracy"] = l.accuracy;
            e["learning_rate"] = l.learning_rate;
            e["seconds"] = l.seconds;
            os << e.dump() << "\n";
        }
    }
    json rep = provenance(cfg);
    rep["epochs_run"] = result.epochs_run;
    rep["diverged"] = result.diverged;
    rep["final_loss"] = result.log.empty() ? 0.0 : result.log.back().loss;
    rep["final_accuracy"] = result.log.empty() ? 0.0 : result.log.back().accuracy;
    write_json((fs::path(g.out_dir) / "train_report.json").string(), rep);
    std::cout << "trained " << result.epochs_run << " epochs; checkpoint under " << g.out_dir
              << "/checkpoint\n";
    return result.diverged ? 1 : 0;
}

int cmd_eval(const GlobalArgs& g, const std::string& data_dir, const std::string& ckpt_dir,
             const std::string& bank_dir, const std::string& head_name) {
    auto cfg = load_config(g);
    require_artifact(data_dir + "/manifest.json", "dataset manifest");
    require_artifact(ckpt_dir + "/index.json", "checkpoint");
    auto ds = synth::load_dataset(data_dir);
    auto model = build_model(cfg, ds.layout);
    train::load_checkpoint(ckpt_dir, model);

    train::Head head = head_name == "gp" ? train::Head::gp : train::Head::softmax;
    gp::FeatureBank bank;
    if (head == train::Head::gp) {
        require_artifact(bank_dir + "/index.json", "feature bank");
        bank = gp::load_bank(bank_dir);
    }
    auto rep = train::evaluate(model, ds, head, head == train::Head::gp ? &bank : nullptr,
                               config::build_bin_spec(cfg));

    json j = provenance(cfg);
    j["head"] = head_name;
    j["metrics"] = eval_report_json(rep);
    auto preds = json::array();
    for (const auto& p : rep.predictions) preds.push_back(p);
    j["predictions"] = preds;
    write_json((fs::path(g.out_dir) / "eval_report.json").string(), j);
    write_eval_csv((fs::path(g.out_dir) / "eval_metrics.csv").string(), config::config_hash(cfg),
                   rep);
    std::cout << "top1 " << rep.top1 << ", f1@10 " << rep.f1_at_10 << ", f1@25 " << rep.f1_at_25
              << ", f1@50 " << rep.f1_at_50 << "\n";
    return 0;
}

int cmd_fit_bank(const GlobalArgs& g, const std::string& data_dir, const std::string& ckpt_dir) {
    auto cfg = load_config(g);
    require_artifact(data_dir + "/manifest.json", "dataset manifest");
    require_artifact(ckpt_dir + "/index.json", "checkpoint");
    auto ds = synth::load_dataset(data_dir);
    auto model = build_model(cfg, ds.layout);
    train::load_checkpoint(ckpt_dir, model);
    auto bank = train::fit_bank(model, ds, cfg.gp.mode == "full", cfg.gp.epsilon,
                                cfg.gp.holdout_fraction, cfg.gp.threshold_percentile);
    gp::save_bank(g.out_dir, bank);

    json j = provenance(cfg);
    j["classes_included"] = bank.included;
    j["threshold"] = bank.threshold;
    j["mode"] = cfg.gp.mode;
    // fitted variance spread, logged for inspection
    double vmin = 1e300, vmax = 0;
    for (const auto& cov : bank.covs)
        for (size_t i = 0; i < cov.size(); ++i) {
            if (!bank.full_cov || i % (bank.dim + 1) == 0) {
                vmin = std::min(vmin, cov[i]);
                vmax = std::max(vmax, cov[i]);
            }
        }
    j["variance_min"] = vmin;
    j["variance_max"] = vmax;
    write_json((fs::path(g.out_dir) / "bank_report.json").string(), j);
    std::cout << "bank fitted over " << bank.included.size() << " classes, threshold "
              << bank.threshold << ", variances in [" << vmin << ", " << vmax << "]\n";
    return 0;
}

int cmd_score(const GlobalArgs& g, const std::string& data_dir, const std::string& ood_dir,
              const std::string& ckpt_dir, const std::string& bank_dir) {
    auto cfg = load_config(g);
    require_artifact(data_dir + "/manifest.json", "dataset manifest");
    require_artifact(ckpt_dir + "/index.json", "checkpoint");
    require_artifact(bank_dir + "/index.json", "feature bank");
    auto ds = synth::load_dataset(data_dir);
    auto model = build_model(cfg, ds.layout);
    train::load_checkpoint(ckpt_dir, model);
    auto bank = gp::load_bank(bank_dir);

    auto frame_scores = [&](const synth::Dataset& set) {
        std::vector<double> all;
        for (const auto& rec : set.records) {
            auto s = train::record_frame_scores(model, rec, bank);
            all.insert(all.end(), s.begin(), s.end());
        }
        return all;
    };

    json j = provenance(cfg);
    const auto id_scores = frame_scores(ds);
    {
        double below = 0;
        for (double s : id_scores) below += s < bank.threshold;
        j["id_frames"] = id_scores.size();
        j["id_flagged_ood_fraction"] = below / static_cast<double>(id_scores.size());
    }

    if (!ood_dir.empty()) {
        require_artifact(ood_dir + "/manifest.json", "OOD dataset manifest");
        auto ood = synth::load_dataset(ood_dir);
        const auto ood_scores = frame_scores(ood);
        const auto [auroc, auprc] = metrics::ranking_metrics(id_scores, ood_scores);
        j["ood"] = {{"auroc", auroc}, {"auprc", auprc}, {"frames", ood_scores.size()}};
        std::cout << "OOD auroc " << auroc << ", auprc " << auprc << "\n";
    }

    // noise curve: AUROC of clean vs corrupted copies of the eval set
    std::ofstream curve(fs::path(g.out_dir) / "noise_curve.csv");
    curve << "run,kind,units,auroc,auprc\n";
    auto curve_rows = json::array();
    for (const auto& kind_name : cfg.score.noise_kinds) {
        synth::NoiseSpec::Kind kind;
        if (kind_name == "impulse") kind = synth::NoiseSpec::Kind::impulse;
        else if (kind_name == "gaussian") kind = synth::NoiseSpec::Kind::gaussian;
        else if (kind_name == "poisson") kind = synth::NoiseSpec::Kind::poisson;
        else if (kind_name == "empty_node") kind = synth::NoiseSpec::Kind::empty_node;
        else throw ConfigError("score: unknown noise kind " + kind_name);
        for (double units : cfg.score.noise_units) {
            std::vector<double> noisy_scores;
            for (const auto& rec : ds.records) {
                synth::NoiseSpec spec{kind, units,
                                      synth::derive_seed(cfg.seed, 0x5c04eULL + static_cast<uint64_t>(rec.id))};
                auto corrupted = synth::inject_noise(rec, spec);
                auto s = train::record_frame_scores(model, corrupted, bank);
                noisy_scores.insert(noisy_scores.end(), s.begin(), s.end());
            }
            const auto [auroc, auprc] = metrics::ranking_metrics(id_scores, noisy_scores);
            curve << config::config_hash(cfg) << "," << kind_name << "," << units << "," << auroc
                  << "," << auprc << "\n";
            curve_rows.push_back(
                {{"kind", kind_name}, {"units", units}, {"auroc", auroc}, {"auprc", auprc}});
        }
    }
    j["noise_curve"] = curve_rows;
    write_json((fs::path(g.out_dir) / "score_report.json").string(), j);
    return 0;
}

int cmd_probe(const GlobalArgs& g, const std::string& ckpt_dir) {
    auto cfg = load_config(g);
    require_artifact(ckpt_dir + "/index.json", "checkpoint");
    auto layout = config::build_layout(cfg);
    auto model = build_model(cfg, layout);
    train::load_checkpoint(ckpt_dir, model);

    auto reports = json::array();
    for (const auto& p : model.store.params()) {
        if (!p->spectral_norm && p->name.find(".res.w") == std::string::npos &&
            p->name.find("fuse.res.w") == std::string::npos)
            continue;
        if (p->value.rank() != 2) continue;
        Tensor<double> w = p->value.cast<double>();
        Tensor<double> b;
        if (auto* bp = model.store.find(p->name.substr(0, p->name.size() - 2) + ".b"); bp)
            b = bp->value.cast<double>();
        const double c = model.cfg.arm == ResidualArm::sn ? model.cfg.sn_c : 0.0;
        Tensor<double> w_eff = w;
        if (model.cfg.arm == ResidualArm::sn) {
            spectral::SNState<double> st;
            w_eff = spectral::apply_sn(w, model.cfg.sn_c, st);
        }
        auto rep = spectral::probe_affine_relu_branch(w_eff, b, c, cfg.probe.pairs, p->name,
                                                      cfg.seed);
        json r;
        r["layer"] = rep.layer;
        r["c"] = rep.c;
        r["ratio_min"] = rep.ratio_min;
        r["ratio_max"] = rep.ratio_max;
        r["pairs"] = rep.pairs;
        r["violations"] = rep.violations;
        reports.push_back(r);
        std::cout << rep.layer << ": ratios [" << rep.ratio_min << ", " << rep.ratio_max
                  << "] over " << rep.pairs << " pairs, " << rep.violations << " violations\n";
    }
    json j = provenance(cfg);
    j["probes"] = reports;
    write_json((fs::path(g.out_dir) / "probe_report.json").string(), j);
    return 0;
}

int cmd_sweep(const GlobalArgs& g, const std::string& train_dir, const std::string& eval_dir,
              const std::string& ood_dir) {
    auto cfg = load_config(g);
    require_artifact(train_dir + "/manifest.json", "train dataset manifest");
    require_artifact(eval_dir + "/manifest.json", "eval dataset manifest");
    require_artifact(ood_dir + "/manifest.json", "OOD dataset manifest");
    auto tr = synth::load_dataset(train_dir);
    auto ev = synth::load_dataset(eval_dir);
    auto ood = synth::load_dataset(ood_dir);
    auto rows = train::coefficient_sweep(cfg.sweep.coefficients, config::build_model_config(cfg),
                                         config::build_train_config(cfg), tr, ev, ood);
    json j = provenance(cfg);
    auto arr = json::array();
    std::ofstream csv(fs::path(g.out_dir) / "sweep.csv");
    csv << "run,c,accuracy,f1_at_10,auroc,auprc\n";
    for (const auto& r : rows) {
        arr.push_back({{"c", r.c},
                       {"accuracy", r.accuracy},
                       {"f1_at_10", r.f1_at_10},
                       {"auroc", r.auroc},
                       {"auprc", r.auprc}});
        csv << config::config_hash(cfg) << "," << r.c << "," << r.accuracy << "," << r.f1_at_10
            << "," << r.auroc << "," << r.auprc << "\n";
    }
    j["rows"] = arr;
    write_json((fs::path(g.out_dir) / "sweep_report.json").string(), j);
    return 0;
}

int cmd_metrics(const GlobalArgs& g, const std::string& pred_path) {
    auto cfg = load_config(g);
    require_artifact(pred_path, "prediction file");
    std::ifstream is(pred_path);
    json input;
    try {
        is >> input;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("metrics: bad prediction JSON: ") + e.what());
    }

    std::vector<int> all_pred, all_gt;
    double f10 = 0, f25 = 0, f50 = 0;
    size_t records = 0;
    int classes = 0;
    std::vector<std::vector<double>> probs;
    for (const auto& rec : input.at("records")) {
        const auto pred = rec.at("pred").get<std::vector<int>>();
        const auto gt = rec.at("gt").get<std::vector<int>>();
        if (pred.size() != gt.size())
            throw ConfigError("metrics: pred/gt length mismatch in record " +
                              std::to_string(records));
        const auto ps = metrics::segments_from_frames(pred);
        const auto gs = metrics::segments_from_frames(gt);
        f10 += metrics::f1_at_k(ps, gs, 10);
        f25 += metrics::f1_at_k(ps, gs, 25);
        f50 += metrics::f1_at_k(ps, gs, 50);
        all_pred.insert(all_pred.end(), pred.begin(), pred.end());
        all_gt.insert(all_gt.end(), gt.begin(), gt.end());
        for (int v : pred) classes = std::max(classes, v + 1);
        for (int v : gt) classes = std::max(classes, v + 1);
        if (rec.contains("probs"))
            for (const auto& row : rec.at("probs"))
                probs.push_back(row.get<std::vector<double>>());
        ++records;
    }
    if (records == 0) throw ConfigError("metrics: no records in input");

    json out = provenance(cfg);
    out["top1"] = metrics::top1_accuracy(all_pred, all_gt);
    out["f1_macro"] = metrics::f1_macro(all_pred, all_gt, classes);
    out["f1_weighted"] = metrics::f1_macro(all_pred, all_gt, classes, true);
    out["macro_recall"] = metrics::macro_recall(all_pred, all_gt, classes);
    out["f1_at_10"] = f10 / static_cast<double>(records);
    out["f1_at_25"] = f25 / static_cast<double>(records);
    out["f1_at_50"] = f50 / static_cast<double>(records);
    if (!probs.empty()) {
        const auto spec = config::build_bin_spec(cfg);
        out["ece"] = metrics::calibration_error(probs, all_gt, spec, metrics::CalibKind::ECE);
        out["sce"] = metrics::calibration_error(probs, all_gt, spec, metrics::CalibKind::SCE);
        out["ace"] = metrics::calibration_error(probs, all_gt, spec, metrics::CalibKind::ACE);
        out["tace"] = metrics::calibration_error(probs, all_gt, spec, metrics::CalibKind::TACE);
    }
    write_json((fs::path(g.out_dir) / "metrics_report.json").string(), out);
    std::ofstream csv(fs::path(g.out_dir) / "metrics.csv");
    csv << "run,metric,value\n";
    for (auto& [key, value] : out.items())
        if (value.is_number()) append_metric_csv(csv, config::config_hash(cfg), key, value);
    std::cout << out.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"uncertainty-quantified temporal-fusion GCN toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalArgs g;
    app.add_option("--config", g.config_path, "run configuration JSON")->envname("UQTF_CONFIG");
    app.add_option("--out", g.out_dir, "output directory")->default_val("out");
    app.add_option("--seed", g.seed, "master seed override")->each([&g](const std::string&) {
        g.seed_set = true;
    });
    app.add_option("--threads", g.threads, "worker threads (default 1: bitwise reproducible)");
    bool show_config_help = false;
    app.add_flag("--help-config", show_config_help, "list every configuration key and exit");

    std::string data_dir, eval_dir, ood_dir, ckpt_dir, bank_dir, pred_path;
    std::string head_name = "softmax";

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    auto* tr = app.add_subcommand("train", "train a model on a dataset");
    tr->add_option("--data", data_dir, "dataset directory")->required();
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--checkpoint", ckpt_dir, "checkpoint directory")->required();
    ev->add_option("--bank", bank_dir, "feature bank directory (gp head)");
    ev->add_option("--head", head_name, "prediction head: softmax | gp");
    auto* fb = app.add_subcommand("fit-bank", "fit the Gaussian feature bank");
    fb->add_option("--data", data_dir, "dataset directory")->required();
    fb->add_option("--checkpoint", ckpt_dir, "checkpoint directory")->required();
    auto* sc = app.add_subcommand("score", "OOD scoring and noise curves");
    sc->add_option("--data", data_dir, "in-distribution dataset")->required();
    sc->add_option("--ood", ood_dir, "out-of-distribution dataset");
    sc->add_option("--checkpoint", ckpt_dir, "checkpoint directory")->required();
    sc->add_option("--bank", bank_dir, "feature bank directory")->required();
    auto* pr = app.add_subcommand("probe", "empirical Lipschitz probes of residual branches");
    pr->add_option("--checkpoint", ckpt_dir, "checkpoint directory")->required();
    auto* sw = app.add_subcommand("sweep", "spectral-norm coefficient sweep");
    sw->add_option("--data", data_dir, "train dataset")->required();
    sw->add_option("--eval", eval_dir, "eval dataset")->required();
    sw->add_option("--ood", ood_dir, "OOD dataset")->required();
    auto* mt = app.add_subcommand("metrics", "compute metrics from prediction/GT JSON");
    mt->add_option("--pred", pred_path, "prediction JSON file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    if (show_config_help) {
        std::cout << config::help_text();
        return 0;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(g);
        if (tr->parsed()) return cmd_train(g, data_dir);
        if (ev->parsed()) return cmd_eval(g, data_dir, ckpt_dir, bank_dir, head_name);
        if (fb->parsed()) return cmd_fit_bank(g, data_dir, ckpt_dir);
        if (sc->parsed()) return cmd_score(g, data_dir, ood_dir, ckpt_dir, bank_dir);
        if (pr->parsed()) return cmd_probe(g, ckpt_dir);
        if (sw->parsed()) return cmd_sweep(g, data_dir, eval_dir, ood_dir);
        if (mt->parsed()) return cmd_metrics(g, pred_path);
    } catch (const ConfigError& e) {
        log::error(e.what());
        return 2;
    } catch (const ContractError& e) {
        log::error(e.what());
        return 2;
    } catch (const Error& e) {
        log::error(e.what());
        return 1;
    } catch (const std::exception& e) {
        log::error(e.what());
        return 1;
    }
    return 0;
}

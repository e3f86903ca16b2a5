#include "uqtf/gp_head.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "uqtf/logging.hpp"
#include "uqtf/tensor_io.hpp"

namespace uqtf::gp {

namespace fs = std::filesystem;

bool FeatureBank::has_class(int cls) const {
    return std::find(included.begin(), included.end(), cls) != included.end();
}

FeatureCollector::FeatureCollector(int n_classes, int64_t dim)
    : n_classes_(n_classes), dim_(dim), buckets_(static_cast<size_t>(n_classes)) {
    if (n_classes < 1 || dim < 1) throw ContractError("FeatureCollector: bad dimensions");
}

void FeatureCollector::add(int label, const double* feature) {
    if (label < 0 || label >= n_classes_)
        throw ContractError("FeatureCollector: label out of range");
    buckets_[static_cast<size_t>(label)].emplace_back(feature, feature + dim_);
    ++total_;
}

const std::vector<std::vector<double>>& FeatureCollector::bucket(int cls) const {
    return buckets_.at(static_cast<size_t>(cls));
}

int64_t FeatureCollector::bucket_size(int cls) const {
    return static_cast<int64_t>(buckets_.at(static_cast<size_t>(cls)).size());
}

namespace {
void factor_cholesky(FeatureBank& bank) {
    if (!bank.full_cov) return;
    const int64_t d = bank.dim;
    bank.chol.clear();
    bank.logdet.clear();
    for (const auto& cov : bank.covs) {
        std::vector<double> l(static_cast<size_t>(d * d), 0.0);
        double logdet = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            for (int64_t j = 0; j <= i; ++j) {
                double acc = cov[static_cast<size_t>(i * d + j)];
                for (int64_t k = 0; k < j; ++k)
                    acc -= l[static_cast<size_t>(i * d + k)] * l[static_cast<size_t>(j * d + k)];
                if (i == j) {
                    if (acc <= 0) throw NumericError("feature bank: covariance not positive-definite");
                    l[static_cast<size_t>(i * d + i)] = std::sqrt(acc);
                    logdet += 2.0 * std::log(l[static_cast<size_t>(i * d + i)]);
                } else {
                    l[static_cast<size_t>(i * d + j)] = acc / l[static_cast<size_t>(j * d + j)];
                }
            }
        }
        bank.chol.push_back(std::move(l));
        bank.logdet.push_back(logdet);
    }
}
}  // namespace

FeatureBank FeatureCollector::fit(bool full_cov, double epsilon) const {
    FeatureBank bank;
    bank.dim = dim_;
    bank.n_classes = n_classes_;
    bank.full_cov = full_cov;
    bank.epsilon = epsilon;

    for (int c = 0; c < n_classes_; ++c) {
        const auto& bucket = buckets_[static_cast<size_t>(c)];
        const int64_t m = static_cast<int64_t>(bucket.size());
        if (m < 2) {
            log::info("feature bank: class " + std::to_string(c) + " has " + std::to_string(m) +
                      " samples, excluded from the bank");
            continue;
        }
        std::vector<double> mean(static_cast<size_t>(dim_), 0.0);
        for (const auto& f : bucket)
            for (int64_t j = 0; j < dim_; ++j) mean[static_cast<size_t>(j)] += f[static_cast<size_t>(j)];
        for (int64_t j = 0; j < dim_; ++j) mean[static_cast<size_t>(j)] /= static_cast<double>(m);

        std::vector<double> cov;
        if (full_cov) {
            cov.assign(static_cast<size_t>(dim_ * dim_), 0.0);
            for (const auto& f : bucket)
                for (int64_t i = 0; i < dim_; ++i) {
                    const double di = f[static_cast<size_t>(i)] - mean[static_cast<size_t>(i)];
                    for (int64_t j = 0; j <= i; ++j)
                        cov[static_cast<size_t>(i * dim_ + j)] +=
                            di * (f[static_cast<size_t>(j)] - mean[static_cast<size_t>(j)]);
                }
            for (int64_t i = 0; i < dim_; ++i)
                for (int64_t j = 0; j <= i; ++j) {
                    double v = cov[static_cast<size_t>(i * dim_ + j)] / static_cast<double>(m);
                    if (i == j) v += epsilon;
                    cov[static_cast<size_t>(i * dim_ + j)] = v;
                    cov[static_cast<size_t>(j * dim_ + i)] = v;
                }
        } else {
            cov.assign(static_cast<size_t>(dim_), 0.0);
            for (const auto& f : bucket)
                for (int64_t j = 0; j < dim_; ++j) {
                    const double d = f[static_cast<size_t>(j)] - mean[static_cast<size_t>(j)];
                    cov[static_cast<size_t>(j)] += d * d;
                }
            for (int64_t j = 0; j < dim_; ++j)
                cov[static_cast<size_t>(j)] = cov[static_cast<size_t>(j)] / static_cast<double>(m) + epsilon;
        }
        bank.included.push_back(c);
        bank.means.push_back(std::move(mean));
        bank.covs.push_back(std::move(cov));
        bank.counts.push_back(m);
    }
    if (bank.included.empty()) throw ContractError("feature bank: no class has enough samples");
    factor_cholesky(bank);
    return bank;
}

std::vector<double> gp_log_likelihood(const std::vector<double>& feature,
                                      const FeatureBank& bank) {
    if (static_cast<int64_t>(feature.size()) != bank.dim)
        throw ContractError("gp_log_likelihood: feature width mismatch");
    for (double v : feature)
        if (!std::isfinite(v)) throw NumericError("gp_log_likelihood: non-finite feature");

    constexpr double kLog2Pi = 1.8378770664093454836;
    std::vector<double> scores(static_cast<size_t>(bank.n_classes),
                               -std::numeric_limits<double>::infinity());
    const int64_t d = bank.dim;
    for (size_t k = 0; k < bank.included.size(); ++k) {
        const auto& mean = bank.means[k];
        double score;
        if (bank.full_cov) {
            // solve L y = (f - mu), score = -1/2 (d log2pi + logdet + |y|^2)
            const auto& l = bank.chol[k];
            std::vector<double> y(static_cast<size_t>(d));
            for (int64_t i = 0; i < d; ++i) {
                double acc = feature[static_cast<size_t>(i)] - mean[static_cast<size_t>(i)];
                for (int64_t j = 0; j < i; ++j)
                    acc -= l[static_cast<size_t>(i * d + j)] * y[static_cast<size_t>(j)];
                y[static_cast<size_t>(i)] = acc / l[static_cast<size_t>(i * d + i)];
            }
            double quad = 0;
            for (int64_t i = 0; i < d; ++i) quad += y[static_cast<size_t>(i)] * y[static_cast<size_t>(i)];
            score = -0.5 * (static_cast<double>(d) * kLog2Pi + bank.logdet[k] + quad);
        } else {
            score = 0;
            const auto& var = bank.covs[k];
            for (int64_t j = 0; j < d; ++j) {
                const double dv = feature[static_cast<size_t>(j)] - mean[static_cast<size_t>(j)];
                score += -0.5 * std::log(2.0 * M_PI * var[static_cast<size_t>(j)]) -
                         dv * dv / (2.0 * var[static_cast<size_t>(j)]);
            }
        }
        scores[static_cast<size_t>(bank.included[k])] = score;
    }
    return scores;
}

double max_score(const std::vector<double>& scores) {
    double best = -std::numeric_limits<double>::infinity();
    for (double s : scores) best = std::max(best, s);
    return best;
}

UQPrediction predict_with_threshold(const std::vector<double>& scores, double threshold) {
    if (scores.empty()) throw ContractError("predict_with_threshold: empty scores");
    UQPrediction pred;
    pred.scores = scores;
    int arg = 0;
    for (size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[static_cast<size_t>(arg)]) arg = static_cast<int>(i);
    if (scores[static_cast<size_t>(arg)] >= threshold) {
        pred.label = arg;
        pred.ood = false;
    } else {
        pred.label = kOodLabel;
        pred.ood = true;
    }
    // calibration probabilities: softmax over the scores, used only by the
    // calibration metrics, never for the OOD decision
    const double mx = scores[static_cast<size_t>(arg)];
    pred.calibration_probs.resize(scores.size());
    double z = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        const double e = std::isfinite(scores[i]) ? std::exp(scores[i] - mx) : 0.0;
        pred.calibration_probs[i] = e;
        z += e;
    }
    for (double& p : pred.calibration_probs) p /= z;
    return pred;
}

double threshold_from_scores(std::vector<double> max_scores, double percentile) {
    if (max_scores.empty()) throw ContractError("threshold_from_scores: no scores");
    std::sort(max_scores.begin(), max_scores.end());
    const double pos = percentile / 100.0 * static_cast<double>(max_scores.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, max_scores.size() - 1);
    const double w = pos - static_cast<double>(lo);
    return (1.0 - w) * max_scores[lo] + w * max_scores[hi];
}

void save_bank(const std::string& dir, const FeatureBank& bank) {
    fs::create_directories(dir);
    const int64_t k = static_cast<int64_t>(bank.included.size());
    Tensor<double> means({k, bank.dim});
    for (int64_t i = 0; i < k; ++i)
        for (int64_t j = 0; j < bank.dim; ++j)
            means.at2(i, j) = bank.means[static_cast<size_t>(i)][static_cast<size_t>(j)];
    io::save_tensor((fs::path(dir) / "means.uqtf").string(), means);

    const int64_t cov_len = bank.full_cov ? bank.dim * bank.dim : bank.dim;
    Tensor<double> covs({k, cov_len});
    for (int64_t i = 0; i < k; ++i)
        for (int64_t j = 0; j < cov_len; ++j)
            covs.at2(i, j) = bank.covs[static_cast<size_t>(i)][static_cast<size_t>(j)];
    io::save_tensor((fs::path(dir) / "covs.uqtf").string(), covs);

    nlohmann::json index;
    index["classes"] = bank.included;
    index["class_count"] = bank.n_classes;
    index["counts"] = bank.counts;
    index["mode"] = bank.full_cov ? "full" : "diag";
    index["epsilon"] = bank.epsilon;
    index["threshold"] = bank.threshold;
    index["dim"] = bank.dim;
    std::ofstream os(fs::path(dir) / "index.json");
    if (!os) throw IoError("cannot write bank index under " + dir);
    os << index.dump(2);
}

FeatureBank load_bank(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "index.json");
    if (!is) throw IoError("feature bank not found: " + dir);
    nlohmann::json index;
    try {
        is >> index;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("bad bank index: ") + e.what());
    }
    FeatureBank bank;
    try {
        bank.included = index.at("classes").get<std::vector<int>>();
        bank.n_classes = index.at("class_count").get<int>();
        bank.counts = index.at("counts").get<std::vector<int64_t>>();
        bank.full_cov = index.at("mode").get<std::string>() == "full";
        bank.epsilon = index.at("epsilon").get<double>();
        bank.threshold = index.at("threshold").get<double>();
        bank.dim = index.at("dim").get<int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("bad bank index: ") + e.what());
    }
    auto means = io::load_tensor<double>((fs::path(dir) / "means.uqtf").string());
    auto covs = io::load_tensor<double>((fs::path(dir) / "covs.uqtf").string());
    const int64_t k = means.dim(0);
    for (int64_t i = 0; i < k; ++i) {
        bank.means.emplace_back(means.data() + i * bank.dim, means.data() + (i + 1) * bank.dim);
        bank.covs.emplace_back(covs.data() + i * covs.dim(1), covs.data() + (i + 1) * covs.dim(1));
    }
    factor_cholesky(bank);
    return bank;
}

}  // namespace uqtf::gp

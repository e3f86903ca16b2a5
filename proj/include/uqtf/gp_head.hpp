#pragma once

// Gaussian feature bank over penultimate features: per-class mean and
// covariance fitted from the training set, log-likelihood scoring of unknown
// features, and thresholded prediction with an OOD flag.

#include <limits>
#include <string>
#include <vector>

#include "uqtf/tensor.hpp"

namespace uqtf::gp {

constexpr int kOodLabel = -1;

struct FeatureBank {
    int64_t dim = 0;
    int n_classes = 0;
    bool full_cov = false;
    double epsilon = 1e-4;
    double threshold = -std::numeric_limits<double>::infinity();
    std::vector<int> included;               // class ids with a fitted Gaussian
    std::vector<std::vector<double>> means;  // per included class, length dim
    std::vector<std::vector<double>> covs;   // diag: dim; full: row-major dim*dim
    std::vector<int64_t> counts;             // samples per included class

    // cached Cholesky factors and log-determinants for the full mode
    std::vector<std::vector<double>> chol;
    std::vector<double> logdet;

    bool has_class(int cls) const;
};

// Groups per-frame feature vectors by ground-truth label.
class FeatureCollector {
  public:
    FeatureCollector(int n_classes, int64_t dim);
    void add(int label, const double* feature);
    int64_t total() const { return total_; }
    const std::vector<std::vector<double>>& bucket(int cls) const;
    int64_t bucket_size(int cls) const;
    int n_classes() const { return n_classes_; }
    int64_t dim() const { return dim_; }

    // Classes with fewer than two samples are excluded (logged as a warning).
    FeatureBank fit(bool full_cov = false, double epsilon = 1e-4) const;

  private:
    int n_classes_;
    int64_t dim_;
    int64_t total_ = 0;
    std::vector<std::vector<std::vector<double>>> buckets_;
};

// Per-class log-likelihood scores of one feature vector; excluded classes
// score -inf. Diagonal mode sums per-channel Gaussian log-probabilities;
// full mode evaluates the multivariate normal log-density.
std::vector<double> gp_log_likelihood(const std::vector<double>& feature,
                                      const FeatureBank& bank);

struct UQPrediction {
    int label = kOodLabel;  // kOodLabel when below threshold
    bool ood = false;
    std::vector<double> scores;             // per-class log-probabilities
    std::vector<double> calibration_probs;  // softmax(scores), calibration only
};

UQPrediction predict_with_threshold(const std::vector<double>& scores, double threshold);

double max_score(const std::vector<double>& scores);

// Threshold selection: the given percentile (default 1%) of per-frame max
// scores on a held-out in-distribution split.
double threshold_from_scores(std::vector<double> max_scores, double percentile = 1.0);

// Bank persistence: UQTF tensors plus a JSON index in `dir`.
void save_bank(const std::string& dir, const FeatureBank& bank);
FeatureBank load_bank(const std::string& dir);

}  // namespace uqtf::gp

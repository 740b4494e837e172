#ifndef CFX_PROPENSITY_HPP
#define CFX_PROPENSITY_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "cfx/dataset.hpp"
#include "cfx/exec.hpp"
#include "cfx/linalg.hpp"

namespace cfx {

// One-vs-rest logistic model P(T == target_level | x̂) on calibrated
// confounders. Immutable once fitted; safe to share across threads.
struct PropensityModel {
    std::string treatment_var;
    int target_level = 0;
    Vec weights;             // one per confounder
    double intercept = 0.0;
    bool ridged = false;     // refit with a small L2 penalty after divergence
};

double propensity_score(const PropensityModel& model, const Vec& xhat);

// Linear predictor (equals the log-odds of the score).
double propensity_logit(const PropensityModel& model, const Vec& xhat);

// Full-batch gradient descent on the mean log-loss until the gradient
// max-norm drops below 1e-6 or `iters` runs out. Contributions are summed in
// record-id order, so the fit is invariant to record ordering. Non-finite
// loss triggers one refit with L2 penalty 1e-4 (model.ridged reports it).
PropensityModel fit_propensity(const Dataset& train, const std::string& treatment_var,
                               int target_level, int iters = 2000, double lr = 2.0);

struct MatchPolicy {
    // Maximum |logit-score| distance to a donor. Non-positive means the
    // default: 0.1 times the standard deviation of the logit scores.
    double caliper = 0.0;
    enum class Fallback { nearest_euclidean, reject };
    Fallback fallback = Fallback::nearest_euclidean;
    int propensity_iters = 2000;
    double propensity_lr = 2.0;
};

// Preliminary counterfactual supervision for one record: the treatment
// vector with exactly one variable flipped, and the matched donor's outcome.
struct CfLabel {
    std::vector<int> t_star;
    int y_star = 0;
    std::int64_t matched_id = 0;
    std::size_t flip_treatment = 0;  // position in the schema treatment order
    int flip_level = 0;
};

struct LabeledDataset {
    Dataset base;
    std::vector<CfLabel> labels;             // aligned with base.records
    std::vector<std::int64_t> rejected_ids;  // dropped under Fallback::reject
};

// For each record: draw one treatment variable and one alternative level from
// the record's own seeded stream, then match the nearest donor at that level
// by |logit propensity| within the caliper (ties to the smallest record id).
// Records are processed independently, so the result does not depend on the
// execution policy.
LabeledDataset assign_preliminary_labels(const Dataset& ds, const MatchPolicy& policy,
                                         std::uint64_t seed, Exec exec = Exec::serial);

// Ingestion columns plus t_star ("<variable>=<level>", the flipped variable
// only), y_star, and matched_id.
void write_labeled_csv(const LabeledDataset& lds, const std::string& path,
                       const std::string& meta_comment);
LabeledDataset load_labeled_csv(const std::string& path, const Schema& schema);

struct LabeledSplits {
    LabeledDataset train, val, test;
};

// Same permutation machinery as split_dataset; labels travel with their
// records and calibration comes from the training split.
LabeledSplits split_labeled(const LabeledDataset& lds, const SplitRatios& ratios,
                            std::uint64_t seed);

}  // namespace cfx

#endif

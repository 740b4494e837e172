#ifndef CFX_SYNTH_HPP
#define CFX_SYNTH_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "cfx/dataset.hpp"
#include "cfx/effects.hpp"
#include "cfx/exec.hpp"
#include "cfx/propensity.hpp"
#include "cfx/runmeta.hpp"

namespace cfx {

// Generator for one continuous confounder: a transformed normal draw,
// clipped to the observed range. ref_mean/ref_std standardize the value
// before it enters any linear predictor.
struct ConfounderGen {
    enum class Family { log_normal, logit_normal };
    Family family = Family::log_normal;
    double mu = 0.0;       // parameters of the underlying normal
    double sigma = 1.0;
    double clip_lo = 0.0;
    double clip_hi = 1.0;
    double ref_mean = 0.0;
    double ref_std = 1.0;
};

// Cumulative-logit assignment model for one treatment:
//   P(T <= l | x) = sigmoid(cuts[l] - gamma · x̃)
struct TreatmentGen {
    Vec gamma;  // per confounder, standardized scale
    Vec cuts;   // levels-1 increasing cutpoints
};

// The full structural model. The outcome is a cumulative logit over a linear
// predictor in the treatment codes and standardized confounders:
//   P(Y <= k | t, x) = sigmoid((outcome_cuts[k] - eta) / noise_scale),
//   eta = outcome_treat_coef · t + outcome_conf_coef · x̃
struct SynthConfig {
    std::size_t n = 5000;
    std::uint64_t seed = 42;
    double noise_scale = 1.0;
    std::vector<ConfounderGen> confounders;  // default-schema confounder order
    std::vector<TreatmentGen> treatments;    // default-schema treatment order
    Vec outcome_treat_coef;                  // per treatment, linear in the code
    Vec outcome_conf_coef;                   // per confounder
    Vec outcome_cuts;                        // K-1 increasing cutpoints
};

// Defaults target the marginal structure of the observed crash data; one
// treatment ("Cyclist involvement") carries an exactly zero outcome
// coefficient so null effects can be tested.
SynthConfig default_synth_config(std::size_t n, std::uint64_t seed);

// Everything needed to recompute a record's exact outcome distribution under
// any treatment vector, plus the realized noise so the record's actual
// counterfactual outcome is also known.
struct GroundTruthRecord {
    double eta_conf = 0.0;  // confounder part of the linear predictor
    double epsilon = 0.0;   // realized logistic noise
};

struct GroundTruth {
    Vec treat_coef;
    Vec cutpoints;
    double noise_scale = 1.0;
    std::vector<GroundTruthRecord> records;  // indexed by record_id
};

struct SynthResult {
    Dataset data;
    GroundTruth truth;
};

SynthResult generate_synthetic(const SynthConfig& config, Exec exec = Exec::serial);

// Closed-form class probabilities for record `record_id` under an arbitrary
// treatment vector.
Vec oracle_class_probs(const GroundTruth& truth, std::int64_t record_id,
                       const std::vector<int>& treatments);

// The outcome the record would have realized under `treatments`, holding its
// noise draw fixed.
int oracle_outcome(const GroundTruth& truth, std::int64_t record_id,
                   const std::vector<int>& treatments);

// Exact effect estimates under the known model, produced by the same
// estimator machinery the trained model goes through.
EffectEstimate oracle_effects(const GroundTruth& truth, const Dataset& ds,
                              const Scenario& scenario);

void write_truth_csv(const GroundTruth& truth, const std::string& path, const RunMeta& meta);
GroundTruth load_truth_csv(const std::string& path);

struct BaselinePrediction {
    std::vector<int> factual;
    std::vector<int> counterfactual;
};

// Nearest-neighbor reference predictor. Factual: outcome of the closest
// training record in calibrated (x̂, t̂) space. Counterfactual: outcome of the
// closest training record whose treatments already hold the changed
// variables at their target levels. Ties go to the smallest record id.
BaselinePrediction matching_baseline(const LabeledDataset& train, const Dataset& test,
                                     const Scenario& scenario, Exec exec = Exec::serial);

// Per-record targets (position in the treatment order, level), as when each
// test record carries its own preliminary counterfactual.
BaselinePrediction matching_baseline_targets(
    const LabeledDataset& train, const Dataset& test,
    const std::vector<std::vector<std::pair<std::size_t, int>>>& changes,
    Exec exec = Exec::serial);

struct Metrics {
    double mse = 0.0;
    double rmse = 0.0;
    double mae = 0.0;
    std::string scenario;  // "factual" or "counterfactual"
};

Metrics evaluate(const std::vector<int>& predicted, const std::vector<int>& truth,
                 const std::string& scenario_label);

}  // namespace cfx

#endif

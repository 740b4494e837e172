#ifndef CFX_TRAINING_HPP
#define CFX_TRAINING_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cfx/exec.hpp"
#include "cfx/network.hpp"
#include "cfx/propensity.hpp"

namespace cfx {

struct LossWeights {
    double lambda1 = 0.65;    // factual cross-entropy weight
    double lambda2 = 0.35;    // counterfactual cross-entropy weight
    double lambda_reg = 0.01; // L2 weight on the head weight matrices
};

struct LossBreakdown {
    double factual = 0.0;         // batch mean cross-entropy, factual head
    double counterfactual = 0.0;  // batch mean cross-entropy, counterfactual head
    double reg = 0.0;             // Σθ² over head weight matrices
    double total = 0.0;           // lambda1*factual + lambda2*counterfactual + lambda_reg*reg
};

// -log(p[k]); probabilities floored at 1e-12 before the log.
double cross_entropy(int k, const Vec& p);

double l2_head_weights(const ParamSet& params);

LossBreakdown batch_loss(const std::vector<PredictionPair>& preds, const std::vector<int>& y,
                         const std::vector<int>& y_star, const ParamSet& params,
                         const LossWeights& w);

// Exact reverse-mode gradients of batch_loss for the forward passes whose
// caches are given, dropout masks included as applied.
ParamSet backward(const ModelConfig& config, const ParamSet& params,
                  const std::vector<ForwardCache>& caches, const std::vector<int>& y,
                  const std::vector<int>& y_star, const LossWeights& w);

struct AdamState {
    ParamSet m;
    ParamSet v;
    long long t = 0;
    double alpha = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

AdamState make_adam_state(const ModelConfig& config, double alpha = 0.001);
void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state);

struct TrainConfig {
    int batch_size = 64;
    int epochs = 200;
    int patience = 20;     // epochs without validation improvement before stopping
    double lr = 0.001;
    double lr_decay = 1.0; // per-epoch multiplier on the Adam step size (1 = constant)
    std::uint64_t seed = 0;
    Exec exec = Exec::serial;
};

// Calibrated training inputs for one record, precomputed once.
struct TrainSample {
    Vec xhat;
    Vec that;
    Vec tstar_hat;
    int y = 0;
    int y_star = 0;
    std::int64_t record_id = 0;
};

std::vector<TrainSample> prepare_samples(const LabeledDataset& lds,
                                         const std::vector<std::optional<CalibrationSpec>>& calibration);

// Forward + backward over samples[indices]. Per-sample work runs under the
// execution policy; gradients and loss sums are reduced block-by-block in a
// fixed order, so the result is bitwise identical for any thread count.
struct BatchEval {
    LossBreakdown loss;
    ParamSet grads;
};
BatchEval batch_forward_backward(const ModelConfig& config, const ParamSet& params,
                                 const std::vector<TrainSample>& samples,
                                 const std::vector<std::size_t>& indices,
                                 const std::vector<Vec>& latents,
                                 const std::vector<std::uint64_t>& dropout_seeds,
                                 const LossWeights& w, Exec exec);

// Eval-mode loss of a whole sample set under fixed latents (no dropout).
LossBreakdown dataset_loss(const ModelConfig& config, const ParamSet& params,
                           const std::vector<TrainSample>& samples, const std::vector<Vec>& latents,
                           const LossWeights& w, Exec exec);

struct EpochLog {
    int epoch = 0;  // 1-based
    double factual = 0.0, counterfactual = 0.0, reg = 0.0, total = 0.0;
    double val_total = 0.0;
    double best_so_far = 0.0;
};

struct TrainResult {
    TrainedModel model;  // best-validation parameters
    std::vector<EpochLog> log;
    std::size_t steps = 0;
    int best_epoch = 0;  // 1-based
    double best_val = 0.0;
};

// Mini-batch training with seeded shuffling, a fresh latent draw per sample
// per epoch, fixed per-record validation latents, and early stopping on the
// validation total loss.
TrainResult train(const LabeledDataset& train_set, const LabeledDataset& val_set,
                  const ModelConfig& mconfig, const TrainConfig& tconfig, const LossWeights& w);

void write_train_log_csv(const std::vector<EpochLog>& log, const std::string& path,
                         const std::string& meta_comment);

// Test-harness hook: multiplies one analytic gradient entry before comparing.
struct GradTamper {
    std::string param;
    std::size_t index = 0;
    double factor = 1.1;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t parameters = 0;
};

// Central finite differences (h = 1e-5) against backward() on a small random
// batch; dropout masks are frozen by reusing the same dropout seeds. The
// relative error is |analytic - numeric| / (|analytic| + 1e-8).
GradCheckReport gradient_check(const ModelConfig& config, std::uint64_t seed,
                               const LossWeights& w = LossWeights{},
                               const GradTamper* tamper = nullptr);

}  // namespace cfx

#endif

#ifndef CFX_NETWORK_HPP
#define CFX_NETWORK_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cfx/dataset.hpp"
#include "cfx/linalg.hpp"
#include "cfx/schema.hpp"

namespace cfx {

// Architecture of the two-headed severity network:
//   shared ReLU trunk over [confounders ⧺ latent noise], then one hidden
//   ReLU layer per head over [trunk output ⧺ treatment vector], then a
//   linear layer to `outputs` logits finished by softmax.
struct ModelConfig {
    int shared_layers = 4;   // L
    int neurons = 128;       // width of each shared layer
    int head_hidden = 256;   // hidden width of each head
    int outputs = 4;         // severity classes K
    double dropout = 0.3;    // inverted dropout rate, train mode only
    int latent_dim = 10;     // standard-normal noise dimension U_d
    int confounders = 9;     // input widths, taken from the schema
    int treatments = 8;

    int input_width() const { return confounders + latent_dim; }
    void validate() const;  // throws DataError
};

struct HeadParams {
    Matrix Wh;  // (head_hidden) x (neurons + treatments)
    Vec bh;
    Matrix Wo;  // (outputs) x (head_hidden)
    Vec bo;
};

struct ParamSet {
    std::vector<Matrix> shared_W;
    std::vector<Vec> shared_b;
    HeadParams factual;
    HeadParams counterfactual;

    // Visits every tensor in a fixed order. `is_head_weight` marks the four
    // head weight matrices, the only tensors the L2 penalty touches.
    void for_each_tensor(const std::function<void(const std::string& name, std::vector<double>& data,
                                                  bool is_head_weight)>& fn);
    void for_each_tensor(const std::function<void(const std::string& name,
                                                  const std::vector<double>& data,
                                                  bool is_head_weight)>& fn) const;

    std::size_t parameter_count() const;
    bool all_finite() const;
};

ParamSet zeros_like(const ModelConfig& config);
void add_into(ParamSet& dst, const ParamSet& src);  // dst += src, fixed order

// He initialization: weights ~ N(0, 2/fan_in), biases zero, seeded.
ParamSet init_params(const ModelConfig& config, std::uint64_t seed);

// `latent_dim` standard-normal draws from the (seed, index) stream.
Vec sample_latent(const ModelConfig& config, std::uint64_t seed, std::uint64_t index);

struct ForwardMode {
    bool train = false;
    std::uint64_t dropout_seed = 0;

    static ForwardMode eval() { return ForwardMode{}; }
    static ForwardMode training(std::uint64_t dropout_seed) { return ForwardMode{true, dropout_seed}; }
};

struct PredictionPair {
    Vec factual;         // probabilities over severity levels
    Vec counterfactual;
};

struct HeadCache {
    Vec concat_in;  // [trunk ⧺ treatment]
    Vec hid_pre;
    Vec hid_act;    // after ReLU and (train mode) dropout
    Vec mask;       // dropout multipliers, empty in eval mode
    Vec logits;
    Vec probs;
};

// Everything backward needs, exactly as the forward pass computed it.
struct ForwardCache {
    Vec input;                    // [x̂ ⧺ u]
    std::vector<Vec> shared_pre;  // per layer, before ReLU
    std::vector<Vec> shared_act;  // after ReLU and (train mode) dropout
    std::vector<Vec> shared_mask;
    HeadCache fact;
    HeadCache cf;
};

void softmax(const Vec& logits, Vec& probs);

PredictionPair forward(const ModelConfig& config, const ParamSet& params,
                       const Vec& xhat, const Vec& that, const Vec& tstar_hat,
                       const Vec& latent, const ForwardMode& mode,
                       ForwardCache* cache = nullptr);

// Trained bundle: everything inference needs, including the training-time
// calibration that must be re-applied unchanged to query data.
struct TrainedModel {
    ModelConfig config;
    ParamSet params;
    Schema schema;
    std::vector<std::optional<CalibrationSpec>> calibration;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
};

// Eval-mode prediction averaged over `mc_samples` latent draws from the
// (seed, 0..M-1) streams; the averaged vectors are renormalized. `t_star`
// holds the counterfactual treatment codes.
PredictionPair predict(const TrainedModel& model, const CrashRecord& record,
                       const std::vector<int>& t_star, int mc_samples, std::uint64_t seed);

// Same, with the latent draws supplied by the caller (one forward per draw).
PredictionPair predict_with_latents(const ModelConfig& config, const ParamSet& params,
                                    const Vec& xhat, const Vec& that, const Vec& tstar_hat,
                                    const std::vector<Vec>& latents);

}  // namespace cfx

#endif

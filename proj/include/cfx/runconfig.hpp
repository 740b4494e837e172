#ifndef CFX_RUNCONFIG_HPP
#define CFX_RUNCONFIG_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cfx/network.hpp"
#include "cfx/propensity.hpp"
#include "cfx/runmeta.hpp"
#include "cfx/synth.hpp"
#include "cfx/training.hpp"

namespace cfx {

// Flat key=value run configuration. Every key has a default; unknown keys
// are rejected. Precedence: flags > config file > CFX_SEED (seed only) >
// defaults.
struct RunConfig {
    std::uint64_t seed = 42;
    int threads = 0;        // 0 = all available; 1 = serial execution
    int mc_samples = 50;

    int layers = 4;
    int neurons = 128;
    int head_hidden = 256;
    int outputs = 4;
    double dropout = 0.3;
    int latent_dim = 10;

    int batch_size = 64;
    int epochs = 200;
    int patience = 20;
    double lr = 0.001;
    double lr_decay = 1.0;

    double lambda1 = 0.65;
    double lambda2 = 0.35;
    double lambda_reg = 0.01;

    std::string caliper = "auto";  // "auto" or a positive real
    std::string fallback = "nearest-euclidean";
    int propensity_iters = 2000;
    double propensity_lr = 2.0;

    std::int64_t synth_n = 5000;
    double noise_scale = 1.0;

    double train_frac = 0.8;
    double val_frac = 0.1;
    double test_frac = 0.1;

    void set(const std::string& key, const std::string& value);  // UsageError on bad input
    std::vector<std::pair<std::string, std::string>> items() const;  // sorted canonical echo
    std::uint64_t hash() const;

    ModelConfig model_config() const;
    TrainConfig train_config() const;
    LossWeights loss_weights() const;
    MatchPolicy match_policy() const;
    SynthConfig synth_config() const;
    SplitRatios split_ratios() const;
    Exec exec() const { return threads == 1 ? Exec::serial : Exec::parallel; }
};

void load_config_file(RunConfig& config, const std::string& path);

RunMeta make_meta(const RunConfig& config);

}  // namespace cfx

#endif

#include "cfx/runconfig.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>

#include "cfx/error.hpp"

namespace cfx {

namespace {

double to_double(const std::string& key, const std::string& value) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || ptr != value.data() + value.size())
        throw UsageError("config key '" + key + "': '" + value + "' is not a number");
    return v;
}

std::int64_t to_int(const std::string& key, const std::string& value) {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || ptr != value.data() + value.size())
        throw UsageError("config key '" + key + "': '" + value + "' is not an integer");
    return v;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t");
    std::size_t b = s.find_last_not_of(" \t");
    if (a == std::string::npos) return {};
    return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    if (key == "seed") seed = static_cast<std::uint64_t>(to_int(key, value));
    else if (key == "threads") threads = static_cast<int>(to_int(key, value));
    else if (key == "mc_samples") mc_samples = static_cast<int>(to_int(key, value));
    else if (key == "layers") layers = static_cast<int>(to_int(key, value));
    else if (key == "neurons") neurons = static_cast<int>(to_int(key, value));
    else if (key == "head_hidden") head_hidden = static_cast<int>(to_int(key, value));
    else if (key == "outputs") outputs = static_cast<int>(to_int(key, value));
    else if (key == "dropout") dropout = to_double(key, value);
    else if (key == "latent_dim") latent_dim = static_cast<int>(to_int(key, value));
    else if (key == "batch_size") batch_size = static_cast<int>(to_int(key, value));
    else if (key == "epochs") epochs = static_cast<int>(to_int(key, value));
    else if (key == "patience") patience = static_cast<int>(to_int(key, value));
    else if (key == "lr") lr = to_double(key, value);
    else if (key == "lr_decay") lr_decay = to_double(key, value);
    else if (key == "lambda1") lambda1 = to_double(key, value);
    else if (key == "lambda2") lambda2 = to_double(key, value);
    else if (key == "lambda_reg") lambda_reg = to_double(key, value);
    else if (key == "caliper") {
        if (value != "auto" && !(to_double(key, value) > 0.0))
            throw UsageError("caliper must be 'auto' or a positive number");
        caliper = value;
    } else if (key == "fallback") {
        if (value != "nearest-euclidean" && value != "reject")
            throw UsageError("fallback must be 'nearest-euclidean' or 'reject'");
        fallback = value;
    } else if (key == "propensity_iters") propensity_iters = static_cast<int>(to_int(key, value));
    else if (key == "propensity_lr") propensity_lr = to_double(key, value);
    else if (key == "synth_n") synth_n = to_int(key, value);
    else if (key == "noise_scale") noise_scale = to_double(key, value);
    else if (key == "train_frac") train_frac = to_double(key, value);
    else if (key == "val_frac") val_frac = to_double(key, value);
    else if (key == "test_frac") test_frac = to_double(key, value);
    else throw UsageError("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> RunConfig::items() const {
    std::vector<std::pair<std::string, std::string>> out = {
        {"batch_size", std::to_string(batch_size)},
        {"caliper", caliper},
        {"dropout", format_double(dropout)},
        {"epochs", std::to_string(epochs)},
        {"fallback", fallback},
        {"head_hidden", std::to_string(head_hidden)},
        {"lambda1", format_double(lambda1)},
        {"lambda2", format_double(lambda2)},
        {"lambda_reg", format_double(lambda_reg)},
        {"latent_dim", std::to_string(latent_dim)},
        {"layers", std::to_string(layers)},
        {"lr", format_double(lr)},
        {"lr_decay", format_double(lr_decay)},
        {"mc_samples", std::to_string(mc_samples)},
        {"neurons", std::to_string(neurons)},
        {"noise_scale", format_double(noise_scale)},
        {"outputs", std::to_string(outputs)},
        {"patience", std::to_string(patience)},
        {"propensity_iters", std::to_string(propensity_iters)},
        {"propensity_lr", format_double(propensity_lr)},
        {"seed", std::to_string(seed)},
        {"synth_n", std::to_string(synth_n)},
        {"test_frac", format_double(test_frac)},
        {"threads", std::to_string(threads)},
        {"train_frac", format_double(train_frac)},
        {"val_frac", format_double(val_frac)},
    };
    return out;
}

std::uint64_t RunConfig::hash() const {
    // FNV-1a over the canonical "key=value\n" echo.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& [k, v] : items()) {
        feed(k);
        feed("=");
        feed(v);
        feed("\n");
    }
    return h;
}

ModelConfig RunConfig::model_config() const {
    ModelConfig c;
    c.shared_layers = layers;
    c.neurons = neurons;
    c.head_hidden = head_hidden;
    c.outputs = outputs;
    c.dropout = dropout;
    c.latent_dim = latent_dim;
    return c;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig c;
    c.batch_size = batch_size;
    c.epochs = epochs;
    c.patience = patience;
    c.lr = lr;
    c.lr_decay = lr_decay;
    c.seed = seed;
    c.exec = exec();
    return c;
}

LossWeights RunConfig::loss_weights() const {
    LossWeights w;
    w.lambda1 = lambda1;
    w.lambda2 = lambda2;
    w.lambda_reg = lambda_reg;
    if (w.lambda1 < 0.0 || w.lambda2 < 0.0 || w.lambda_reg < 0.0)
        throw UsageError("loss weights must be non-negative");
    return w;
}

MatchPolicy RunConfig::match_policy() const {
    MatchPolicy p;
    p.caliper = caliper == "auto" ? 0.0 : to_double("caliper", caliper);
    p.fallback = fallback == "reject" ? MatchPolicy::Fallback::reject
                                      : MatchPolicy::Fallback::nearest_euclidean;
    p.propensity_iters = propensity_iters;
    p.propensity_lr = propensity_lr;
    return p;
}

SynthConfig RunConfig::synth_config() const {
    if (synth_n < 1) throw UsageError("synth_n must be >= 1");
    SynthConfig c = default_synth_config(static_cast<std::size_t>(synth_n), seed);
    c.noise_scale = noise_scale;
    return c;
}

SplitRatios RunConfig::split_ratios() const {
    return SplitRatios{train_frac, val_frac, test_frac};
}

void load_config_file(RunConfig& config, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::size_t hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError(path + ":" + std::to_string(line_no) + ": expected 'key = value'");
        config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

RunMeta make_meta(const RunConfig& config) {
    RunMeta meta;
    meta.seed = config.seed;
    meta.config = config.items();
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(config.hash()));
    meta.config_hash = buf;
    return meta;
}

}  // namespace cfx

#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "cfx/checkpoint.hpp"
#include "cfx/error.hpp"
#include "cfx/network.hpp"
#include "cfx/rng.hpp"

using namespace cfx;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.shared_layers = 1;
    c.neurons = 2;
    c.head_hidden = 2;
    c.outputs = 2;
    c.dropout = 0.0;
    c.latent_dim = 0;
    c.confounders = 2;
    c.treatments = 1;
    return c;
}

bool same_params(const ParamSet& a, const ParamSet& b) {
    bool eq = true;
    a.for_each_tensor([&](const std::string& name, const std::vector<double>& da, bool) {
        b.for_each_tensor([&](const std::string& nb, const std::vector<double>& db, bool) {
            if (name != nb) return;
            if (da != db) eq = false;
        });
    });
    return eq;
}

// A calibration table straight off the schema's nominal bounds.
std::vector<std::optional<CalibrationSpec>> nominal_calibration(const Schema& schema) {
    std::vector<std::optional<CalibrationSpec>> out(schema.size());
    for (std::size_t i = 0; i < schema.size(); ++i) {
        const Variable& var = schema[i];
        if (var.role == Role::outcome) continue;
        CalibrationSpec spec;
        if (var.kind == Kind::continuous) {
            spec.kind = Kind::continuous;
            spec.min = var.bound_min;
            spec.max = var.bound_max;
        } else {
            spec.kind = Kind::ordinal;
            spec.levels = var.levels;
        }
        out[i] = spec;
    }
    return out;
}

}  // namespace

TEST_CASE("init_params is seeded and He-scaled with zero biases") {
    ModelConfig c;
    c.confounders = 9;
    c.treatments = 8;
    ParamSet a = init_params(c, 11);
    ParamSet b = init_params(c, 11);
    CHECK(same_params(a, b));
    ParamSet other = init_params(c, 12);
    CHECK_FALSE(same_params(a, other));

    // Layer 2 has fan_in 128: empirical variance within 20% of 2/128.
    const Matrix& W2 = a.shared_W[1];
    REQUIRE(W2.cols == 128);
    double mean = 0.0, sq = 0.0;
    for (double v : W2.a) {
        mean += v;
        sq += v * v;
    }
    mean /= static_cast<double>(W2.a.size());
    double var = sq / static_cast<double>(W2.a.size()) - mean * mean;
    CHECK(var == doctest::Approx(2.0 / 128.0).epsilon(0.2));

    for (const Vec& bias : a.shared_b)
        for (double v : bias) CHECK(v == 0.0);
    for (double v : a.factual.bh) CHECK(v == 0.0);
    for (double v : a.counterfactual.bo) CHECK(v == 0.0);
}

TEST_CASE("sample_latent streams") {
    ModelConfig c;
    c.latent_dim = 0;
    CHECK(sample_latent(c, 1, 0).empty());

    c.latent_dim = 10;
    Vec u1 = sample_latent(c, 1, 5);
    Vec u2 = sample_latent(c, 1, 5);
    CHECK(u1 == u2);
    CHECK(sample_latent(c, 1, 6) != u1);
    CHECK(sample_latent(c, 2, 5) != u1);

    // Law of large numbers per coordinate.
    c.latent_dim = 3;
    const int n = 10000;
    Vec mean(3, 0.0), sq(3, 0.0);
    for (int i = 0; i < n; ++i) {
        Vec u = sample_latent(c, 7, static_cast<std::uint64_t>(i));
        for (std::size_t k = 0; k < 3; ++k) {
            mean[k] += u[k];
            sq[k] += u[k] * u[k];
        }
    }
    for (std::size_t k = 0; k < 3; ++k) {
        double m = mean[k] / n;
        double v = sq[k] / n - m * m;
        CHECK(std::abs(m) < 0.05);
        CHECK(std::abs(v - 1.0) < 0.05);
    }
}

TEST_CASE("all-zero parameters produce uniform heads") {
    ModelConfig c;
    c.confounders = 9;
    c.treatments = 8;
    ParamSet zero = zeros_like(c);
    Vec xhat(9, 0.3), that(8, 0.5), tstar(8, 0.7), u(10, 1.3);
    PredictionPair p = forward(c, zero, xhat, that, tstar, u, ForwardMode::eval());
    for (double v : p.factual) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
    for (double v : p.counterfactual) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("hand-computed forward pass on a two-unit network") {
    ModelConfig c = tiny_config();
    ParamSet p = zeros_like(c);
    p.shared_W[0].a = {0.5, -0.25, 1.0, 0.75};
    p.shared_b[0] = {0.1, -0.2};
    p.factual.Wh.a = {0.2, -0.4, 0.6, -0.3, 0.5, 0.1};
    p.factual.bh = {0.05, -0.05};
    p.factual.Wo.a = {1.0, -1.0, 0.5, 0.25};
    p.factual.bo = {0.0, 0.1};
    p.counterfactual.Wh.a = {0.1, 0.2, -0.3, 0.4, -0.1, 0.2};
    p.counterfactual.bh = {0.0, 0.0};
    p.counterfactual.Wo.a = {0.3, -0.2, -0.5, 0.6};
    p.counterfactual.bo = {0.2, -0.1};

    Vec xhat = {0.4, 0.8};
    Vec that = {0.5};
    Vec tstar = {1.0};
    Vec u;
    PredictionPair out = forward(c, p, xhat, that, tstar, u, ForwardMode::eval());

    // Trunk: pre = W x + b = [0.1, 0.8], ReLU keeps both.
    const double h1 = 0.5 * 0.4 + (-0.25) * 0.8 + 0.1;
    const double h2 = 1.0 * 0.4 + 0.75 * 0.8 + (-0.2);
    // Factual head on [h1, h2, 0.5].
    const double f1 = std::max(0.0, 0.2 * h1 - 0.4 * h2 + 0.6 * 0.5 + 0.05);
    const double f2 = std::max(0.0, -0.3 * h1 + 0.5 * h2 + 0.1 * 0.5 - 0.05);
    const double lf1 = 1.0 * f1 - 1.0 * f2 + 0.0;
    const double lf2 = 0.5 * f1 + 0.25 * f2 + 0.1;
    const double m_f = std::max(lf1, lf2);
    const double ef1 = std::exp(lf1 - m_f);
    const double ef2 = std::exp(lf2 - m_f);
    CHECK(out.factual[0] == doctest::Approx(ef1 / (ef1 + ef2)).epsilon(1e-12));
    CHECK(out.factual[1] == doctest::Approx(ef2 / (ef1 + ef2)).epsilon(1e-12));

    // Counterfactual head on [h1, h2, 1.0]; its first hidden unit is cut by ReLU.
    const double g1 = std::max(0.0, 0.1 * h1 + 0.2 * h2 - 0.3 * 1.0);
    const double g2 = std::max(0.0, 0.4 * h1 - 0.1 * h2 + 0.2 * 1.0);
    CHECK(g1 == 0.0);
    const double lc1 = 0.3 * g1 - 0.2 * g2 + 0.2;
    const double lc2 = -0.5 * g1 + 0.6 * g2 - 0.1;
    const double m_c = std::max(lc1, lc2);
    const double ec1 = std::exp(lc1 - m_c);
    const double ec2 = std::exp(lc2 - m_c);
    CHECK(out.counterfactual[0] == doctest::Approx(ec1 / (ec1 + ec2)).epsilon(1e-12));
    CHECK(out.counterfactual[1] == doctest::Approx(ec2 / (ec1 + ec2)).epsilon(1e-12));
}

TEST_CASE("eval forward is bitwise deterministic") {
    ModelConfig c;
    c.confounders = 4;
    c.treatments = 3;
    c.latent_dim = 2;
    c.shared_layers = 2;
    c.neurons = 8;
    c.head_hidden = 8;
    ParamSet p = init_params(c, 3);
    Vec xhat = {0.1, 0.9, 0.4, 0.6}, that = {0.0, 0.5, 1.0}, tstar = {1.0, 0.5, 0.0};
    Vec u = sample_latent(c, 5, 0);
    PredictionPair a = forward(c, p, xhat, that, tstar, u, ForwardMode::eval());
    PredictionPair b = forward(c, p, xhat, that, tstar, u, ForwardMode::eval());
    CHECK(a.factual == b.factual);
    CHECK(a.counterfactual == b.counterfactual);
}

TEST_CASE("softmax hygiene and shift invariance") {
    std::mt19937_64 eng = rng::substream(13, rng::tag::fuzz);
    std::normal_distribution<double> noise(0.0, 5.0);
    for (int trial = 0; trial < 500; ++trial) {
        Vec logits(4);
        for (double& v : logits) v = noise(eng);
        Vec probs, shifted;
        softmax(logits, probs);
        double sum = 0.0;
        for (double v : probs) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-9);

        Vec logits2 = logits;
        for (double& v : logits2) v += 123.456;
        softmax(logits2, shifted);
        for (std::size_t k = 0; k < probs.size(); ++k)
            CHECK(std::abs(probs[k] - shifted[k]) <= 1e-9);
    }
}

TEST_CASE("train mode with zero dropout equals eval mode bitwise") {
    ModelConfig c;
    c.confounders = 5;
    c.treatments = 2;
    c.latent_dim = 3;
    c.shared_layers = 2;
    c.neurons = 6;
    c.head_hidden = 4;
    c.dropout = 0.0;
    ParamSet p = init_params(c, 21);
    Vec xhat = {0.2, 0.4, 0.6, 0.8, 1.0}, that = {1.0, 0.0}, tstar = {0.0, 1.0};
    Vec u = sample_latent(c, 9, 3);
    PredictionPair ev = forward(c, p, xhat, that, tstar, u, ForwardMode::eval());
    PredictionPair tr = forward(c, p, xhat, that, tstar, u, ForwardMode::training(77));
    CHECK(ev.factual == tr.factual);
    CHECK(ev.counterfactual == tr.counterfactual);
}

TEST_CASE("inverted dropout is unbiased for first-layer activations") {
    ModelConfig c;
    c.shared_layers = 1;
    c.neurons = 4;
    c.head_hidden = 2;
    c.outputs = 2;
    c.dropout = 0.3;
    c.latent_dim = 0;
    c.confounders = 3;
    c.treatments = 1;
    ParamSet p = zeros_like(c);
    for (double& v : p.shared_W[0].a) v = 0.5;
    p.shared_b[0] = {0.2, 0.4, 0.6, 0.8};
    for (double& v : p.factual.Wh.a) v = 0.1;
    for (double& v : p.counterfactual.Wh.a) v = 0.1;

    Vec xhat = {0.3, 0.6, 0.9}, that = {0.5}, tstar = {0.5}, u;
    ForwardCache eval_cache;
    forward(c, p, xhat, that, tstar, u, ForwardMode::eval(), &eval_cache);

    Vec mean(4, 0.0);
    const int n = 10000;
    ForwardCache cache;
    for (int s = 0; s < n; ++s) {
        forward(c, p, xhat, that, tstar, u, ForwardMode::training(static_cast<std::uint64_t>(s)),
                &cache);
        for (std::size_t k = 0; k < 4; ++k) mean[k] += cache.shared_act[0][k];
    }
    for (std::size_t k = 0; k < 4; ++k) {
        mean[k] /= n;
        CHECK(mean[k] == doctest::Approx(eval_cache.shared_act[0][k]).epsilon(0.02));
    }
}

TEST_CASE("per-record outputs do not depend on evaluation order") {
    ModelConfig c;
    c.confounders = 3;
    c.treatments = 2;
    c.latent_dim = 2;
    c.shared_layers = 2;
    c.neurons = 5;
    c.head_hidden = 4;
    ParamSet p = init_params(c, 31);

    std::mt19937_64 eng = rng::substream(17, rng::tag::fuzz);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<Vec> xs(10), ts(10), us(10);
    for (std::size_t i = 0; i < 10; ++i) {
        xs[i] = {unif(eng), unif(eng), unif(eng)};
        ts[i] = {unif(eng), unif(eng)};
        us[i] = sample_latent(c, 23, i);
    }
    std::vector<PredictionPair> fwd(10), rev(10);
    for (std::size_t i = 0; i < 10; ++i)
        fwd[i] = forward(c, p, xs[i], ts[i], ts[i], us[i], ForwardMode::eval());
    for (std::size_t i = 10; i-- > 0;)
        rev[i] = forward(c, p, xs[i], ts[i], ts[i], us[i], ForwardMode::eval());
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(fwd[i].factual == rev[i].factual);
        CHECK(fwd[i].counterfactual == rev[i].counterfactual);
    }
}

TEST_CASE("predict: latent-free models ignore the sample count") {
    ModelConfig c;
    c.latent_dim = 0;
    c.shared_layers = 2;
    c.neurons = 6;
    c.head_hidden = 4;
    c.confounders = 9;
    c.treatments = 8;
    TrainedModel model;
    model.config = c;
    model.params = init_params(c, 41);
    model.schema = default_schema();
    model.calibration = nominal_calibration(model.schema);

    CrashRecord rec;
    rec.record_id = 0;
    rec.outcome = 1;
    rec.treatments = {3, 1, 2, 0, 0, 1, 0, 0};
    rec.confounders = {2500.0, 60000.0, 40.0, 55.0, 15.0, 12.0, 6.0, 250.0, 35.0};

    PredictionPair p1 = predict(model, rec, rec.treatments, 1, 7);
    PredictionPair p50 = predict(model, rec, rec.treatments, 50, 7);
    CHECK(p1.factual == p50.factual);
    CHECK(p1.counterfactual == p50.counterfactual);

    PredictionPair again = predict(model, rec, rec.treatments, 50, 7);
    CHECK(again.factual == p50.factual);

    CHECK_THROWS_AS(predict(model, rec, rec.treatments, 0, 7), DataError);
}

TEST_CASE("checkpoint save/load round-trips bitwise") {
    ModelConfig c;
    c.confounders = 9;
    c.treatments = 8;
    c.shared_layers = 2;
    c.neurons = 12;
    c.head_hidden = 10;
    TrainedModel model;
    model.config = c;
    model.params = init_params(c, 55);
    model.schema = default_schema();
    model.calibration = nominal_calibration(model.schema);
    model.seed = 910;
    model.config_hash = 0xdeadbeefcafef00dULL;

    const std::string path = "cfx_test_model.bin";
    save_checkpoint(model, path);
    TrainedModel loaded = load_checkpoint(path);

    CHECK(loaded.seed == model.seed);
    CHECK(loaded.config_hash == model.config_hash);
    CHECK(loaded.config.neurons == c.neurons);
    CHECK(loaded.config.dropout == c.dropout);
    CHECK(loaded.schema.size() == model.schema.size());
    for (std::size_t i = 0; i < model.schema.size(); ++i) {
        CHECK(loaded.schema[i].name == model.schema[i].name);
        CHECK(loaded.calibration[i].has_value() == model.calibration[i].has_value());
        if (model.calibration[i]) {
            CHECK(loaded.calibration[i]->min == model.calibration[i]->min);
            CHECK(loaded.calibration[i]->max == model.calibration[i]->max);
        }
    }
    CHECK(same_params(loaded.params, model.params));

    // Saving the loaded model again must reproduce the file byte for byte.
    const std::string path2 = "cfx_test_model2.bin";
    save_checkpoint(loaded, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    CHECK(!b1.empty());
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "cfx/error.hpp"
#include "cfx/rng.hpp"
#include "cfx/synth.hpp"
#include "cfx/training.hpp"

#include "support.hpp"

using namespace cfx;
using cfx::testsupport::boosted_synth_config;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.shared_layers = 2;
    c.neurons = 6;
    c.head_hidden = 5;
    c.outputs = 4;
    c.dropout = 0.0;
    c.latent_dim = 2;
    c.confounders = 4;
    c.treatments = 3;
    return c;
}

bool same_params(const ParamSet& a, const ParamSet& b) {
    bool eq = true;
    a.for_each_tensor([&](const std::string& name, const std::vector<double>& da, bool) {
        b.for_each_tensor([&](const std::string& nb, const std::vector<double>& db, bool) {
            if (name == nb && da != db) eq = false;
        });
    });
    return eq;
}

// Small labeled synthetic set for the end-to-end trainer tests.
LabeledSplits labeled_splits(std::size_t n, std::uint64_t seed) {
    SynthResult synth =
        generate_synthetic(testsupport::boosted_synth_config(n, seed), Exec::serial);
    MatchPolicy policy;
    policy.propensity_iters = 300;
    LabeledDataset labeled = assign_preliminary_labels(synth.data, policy, seed, Exec::serial);
    return split_labeled(labeled, SplitRatios{0.8, 0.1, 0.1}, seed);
}

}  // namespace

TEST_CASE("cross_entropy worked values") {
    CHECK(cross_entropy(2, {0.1, 0.2, 0.6, 0.1}) == doctest::Approx(0.510826).epsilon(1e-5));
    CHECK(cross_entropy(0, {1.0, 0.0, 0.0, 0.0}) == 0.0);
    CHECK(cross_entropy(3, {0.25, 0.25, 0.25, 0.25}) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK_THROWS_AS(cross_entropy(4, {0.25, 0.25, 0.25, 0.25}), DataError);
    CHECK_THROWS_AS(cross_entropy(-1, {0.5, 0.5}), DataError);
    // The floor keeps saturated probabilities finite.
    CHECK(cross_entropy(0, {0.0, 1.0}) == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("batch_loss composition and identity") {
    ModelConfig c = small_config();
    ParamSet zero = zeros_like(c);
    LossWeights w;

    SUBCASE("uniform heads and zero parameters give ln 4") {
        PredictionPair uniform{{0.25, 0.25, 0.25, 0.25}, {0.25, 0.25, 0.25, 0.25}};
        LossBreakdown l = batch_loss({uniform}, {2}, {1}, zero, w);
        CHECK(l.factual == doctest::Approx(std::log(4.0)).epsilon(1e-12));
        CHECK(l.counterfactual == doctest::Approx(std::log(4.0)).epsilon(1e-12));
        CHECK(l.reg == 0.0);
        CHECK(std::abs(l.total - std::log(4.0)) <= 1e-12);  // (0.65 + 0.35) ln 4
    }

    SUBCASE("zero regularization weight contributes nothing") {
        LossWeights w0 = w;
        w0.lambda_reg = 0.0;
        PredictionPair p{{0.7, 0.1, 0.1, 0.1}, {0.4, 0.3, 0.2, 0.1}};
        LossBreakdown l = batch_loss({p}, {0}, {0}, zero, w0);
        CHECK(l.reg == 0.0);
        CHECK(l.total == w0.lambda1 * l.factual + w0.lambda2 * l.counterfactual);
    }

    SUBCASE("random batch matches a straight-line recomputation") {
        std::mt19937_64 eng = rng::substream(5, rng::tag::fuzz);
        std::uniform_real_distribution<double> unif(0.01, 1.0);
        ParamSet params = init_params(c, 19);
        std::vector<PredictionPair> preds;
        std::vector<int> y, ystar;
        for (int i = 0; i < 5; ++i) {
            PredictionPair p;
            p.factual.resize(4);
            p.counterfactual.resize(4);
            double sf = 0.0, sc = 0.0;
            for (int k = 0; k < 4; ++k) {
                p.factual[static_cast<std::size_t>(k)] = unif(eng);
                p.counterfactual[static_cast<std::size_t>(k)] = unif(eng);
                sf += p.factual[static_cast<std::size_t>(k)];
                sc += p.counterfactual[static_cast<std::size_t>(k)];
            }
            for (int k = 0; k < 4; ++k) {
                p.factual[static_cast<std::size_t>(k)] /= sf;
                p.counterfactual[static_cast<std::size_t>(k)] /= sc;
            }
            preds.push_back(p);
            y.push_back(static_cast<int>(eng() % 4));
            ystar.push_back(static_cast<int>(eng() % 4));
        }
        LossBreakdown l = batch_loss(preds, y, ystar, params, w);

        // Independent recomputation, straight from the definitions.
        double f = 0.0, cf = 0.0;
        for (int i = 0; i < 5; ++i) {
            f += -std::log(preds[static_cast<std::size_t>(i)].factual[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])]);
            cf += -std::log(preds[static_cast<std::size_t>(i)].counterfactual[static_cast<std::size_t>(ystar[static_cast<std::size_t>(i)])]);
        }
        f /= 5.0;
        cf /= 5.0;
        double reg = 0.0;
        for (const Matrix* W : {&params.factual.Wh, &params.factual.Wo,
                                &params.counterfactual.Wh, &params.counterfactual.Wo})
            for (double v : W->a) reg += v * v;
        double total = 0.65 * f + 0.35 * cf + 0.01 * reg;
        CHECK(std::abs(l.factual - f) <= 1e-12);
        CHECK(std::abs(l.counterfactual - cf) <= 1e-12);
        CHECK(std::abs(l.reg - reg) <= 1e-12);
        CHECK(std::abs(l.total - total) <= 1e-12);
    }

    SUBCASE("doubling every weight doubles the total") {
        ParamSet params = init_params(c, 23);
        PredictionPair p{{0.5, 0.2, 0.2, 0.1}, {0.3, 0.3, 0.3, 0.1}};
        LossWeights twice{1.3, 0.7, 0.02};
        LossBreakdown l1 = batch_loss({p}, {1}, {2}, params, w);
        LossBreakdown l2 = batch_loss({p}, {1}, {2}, params, twice);
        CHECK(std::abs(l2.total - 2.0 * l1.total) <= 1e-12);
    }

    SUBCASE("losses are non-negative") {
        ParamSet params = init_params(c, 29);
        PredictionPair p{{0.97, 0.01, 0.01, 0.01}, {0.01, 0.97, 0.01, 0.01}};
        LossBreakdown l = batch_loss({p}, {0}, {1}, params, w);
        CHECK(l.factual >= 0.0);
        CHECK(l.counterfactual >= 0.0);
        CHECK(l.reg >= 0.0);
        CHECK(l.total >= 0.0);
    }

    SUBCASE("errors") {
        CHECK_THROWS_AS(batch_loss({}, {}, {}, zero, w), DataError);
        PredictionPair p{{0.5, 0.5, 0.0, 0.0}, {0.5, 0.5, 0.0, 0.0}};
        CHECK_THROWS_AS(batch_loss({p}, {0, 1}, {0}, zero, w), DataError);
    }
}

TEST_CASE("gradient_check: analytic gradients match finite differences") {
    SUBCASE("no dropout") {
        ModelConfig c = small_config();
        GradCheckReport report = gradient_check(c, 101);
        CHECK(report.parameters > 100);
        CHECK(report.max_rel_err <= 1e-4);
    }
    SUBCASE("with dropout, masks frozen") {
        ModelConfig c = small_config();
        c.dropout = 0.3;
        GradCheckReport report = gradient_check(c, 707);
        CHECK(report.max_rel_err <= 1e-4);
    }
    SUBCASE("a tampered gradient is caught and named") {
        ModelConfig c = small_config();
        GradTamper tamper;
        tamper.param = "factual.Wo";
        tamper.index = 3;
        tamper.factor = 1.1;
        GradCheckReport report = gradient_check(c, 101, LossWeights{}, &tamper);
        CHECK(report.max_rel_err > 1e-4);
        CHECK(report.worst_param == "factual.Wo[3]");
    }
}

TEST_CASE("backward: unused counterfactual head gets exactly zero data gradient") {
    ModelConfig c = small_config();
    ParamSet params = init_params(c, 3);
    LossWeights w;
    w.lambda2 = 0.0;
    w.lambda_reg = 0.0;

    std::vector<ForwardCache> caches(3);
    std::vector<int> y = {0, 2, 3}, ystar = {1, 1, 0};
    std::mt19937_64 eng = rng::substream(33, rng::tag::fuzz);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t i = 0; i < 3; ++i) {
        Vec xhat = {unif(eng), unif(eng), unif(eng), unif(eng)};
        Vec that = {unif(eng), unif(eng), unif(eng)};
        Vec tstar = {unif(eng), unif(eng), unif(eng)};
        Vec u = sample_latent(c, 77, i);
        forward(c, params, xhat, that, tstar, u, ForwardMode::eval(), &caches[i]);
    }
    ParamSet grads = backward(c, params, caches, y, ystar, w);
    for (double v : grads.counterfactual.Wh.a) CHECK(v == 0.0);
    for (double v : grads.counterfactual.Wo.a) CHECK(v == 0.0);
    for (double v : grads.counterfactual.bh) CHECK(v == 0.0);
    for (double v : grads.counterfactual.bo) CHECK(v == 0.0);
    // The factual side is live.
    double sum = 0.0;
    for (double v : grads.factual.Wo.a) sum += std::abs(v);
    CHECK(sum > 0.0);
}

TEST_CASE("backward: saturated softmax gives vanishing output-layer gradients") {
    ModelConfig c = small_config();
    c.latent_dim = 0;
    ParamSet params = zeros_like(c);
    // Drive logit 1 far above the others through the bias alone.
    params.factual.bo = {-30.0, 30.0, -30.0, -30.0};
    params.counterfactual.bo = {-30.0, 30.0, -30.0, -30.0};
    LossWeights w;
    w.lambda_reg = 0.0;

    std::vector<ForwardCache> caches(1);
    Vec xhat = {0.5, 0.5, 0.5, 0.5}, that = {0.5, 0.5, 0.5}, u;
    PredictionPair p = forward(c, params, xhat, that, that, u, ForwardMode::eval(), &caches[0]);
    CHECK(p.factual[1] > 1.0 - 1e-12);
    ParamSet grads = backward(c, params, caches, {1}, {1}, w);
    for (double v : grads.factual.Wo.a) CHECK(std::abs(v) <= 1e-10);
    for (double v : grads.factual.bo) CHECK(std::abs(v) <= 1e-10);
}

TEST_CASE("batch kernel agrees with the plain backward path") {
    ModelConfig c = small_config();
    c.dropout = 0.3;
    ParamSet params = init_params(c, 9);
    LossWeights w;

    SynthResult synth =
        generate_synthetic(testsupport::boosted_synth_config(60, 4), Exec::serial);
    MatchPolicy policy;
    policy.propensity_iters = 200;
    LabeledDataset labeled = assign_preliminary_labels(synth.data, policy, 4, Exec::serial);
    std::vector<TrainSample> samples = prepare_samples(labeled, labeled.base.calibration);
    ModelConfig cc = c;
    cc.confounders = 9;
    cc.treatments = 8;
    ParamSet params2 = init_params(cc, 9);

    const std::size_t b = 37;  // spans multiple reduction blocks
    std::vector<std::size_t> indices(b);
    std::vector<Vec> latents(b);
    std::vector<std::uint64_t> drop_seeds(b);
    std::vector<ForwardCache> caches(b);
    std::vector<int> y(b), ystar(b);
    for (std::size_t i = 0; i < b; ++i) {
        indices[i] = i % samples.size();
        latents[i] = sample_latent(cc, 6, i);
        drop_seeds[i] = rng::combine(88, i);
        const TrainSample& s = samples[indices[i]];
        forward(cc, params2, s.xhat, s.that, s.tstar_hat, latents[i],
                ForwardMode::training(drop_seeds[i]), &caches[i]);
        y[i] = s.y;
        ystar[i] = s.y_star;
    }
    ParamSet plain = backward(cc, params2, caches, y, ystar, w);
    BatchEval kernel = batch_forward_backward(cc, params2, samples, indices, latents, drop_seeds,
                                              w, Exec::serial);

    bool close = true;
    plain.for_each_tensor([&](const std::string& name, const std::vector<double>& da, bool) {
        kernel.grads.for_each_tensor([&](const std::string& nb, const std::vector<double>& db,
                                         bool) {
            if (name != nb) return;
            for (std::size_t i = 0; i < da.size(); ++i)
                if (std::abs(da[i] - db[i]) > 1e-12 * (1.0 + std::abs(da[i]))) close = false;
        });
    });
    CHECK(close);
}

TEST_CASE("adam_step hand-worked first update") {
    ModelConfig c = small_config();
    ParamSet params = zeros_like(c);
    params.shared_W[0](0, 0) = 1.0;
    ParamSet grads = zeros_like(c);
    grads.shared_W[0](0, 0) = 2.0;  // d/dθ of θ² at θ = 1
    AdamState st = make_adam_state(c, 0.001);

    adam_step(params, grads, st);
    // m̂ = 2, v̂ = 4, step = α·2/(√4 + ε)
    const double expected = 1.0 - 0.001 * 2.0 / (2.0 + 1e-8);
    CHECK(params.shared_W[0](0, 0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(st.t == 1);
}

TEST_CASE("adam_step with zero gradients leaves parameters untouched") {
    ModelConfig c = small_config();
    ParamSet params = init_params(c, 2);
    ParamSet before = params;
    ParamSet zero_grads = zeros_like(c);
    AdamState st = make_adam_state(c);
    for (int i = 0; i < 25; ++i) adam_step(params, zero_grads, st);
    CHECK(same_params(params, before));
}

TEST_CASE("adam converges on a scalar quadratic") {
    ModelConfig c = small_config();
    ParamSet params = zeros_like(c);
    params.shared_W[0](0, 0) = 1.0;
    AdamState st = make_adam_state(c, 0.001);
    ParamSet grads = zeros_like(c);
    for (int i = 0; i < 5000; ++i) {
        grads.shared_W[0](0, 0) = 2.0 * params.shared_W[0](0, 0);
        adam_step(params, grads, st);
    }
    CHECK(std::abs(params.shared_W[0](0, 0)) < 1e-3);
}

TEST_CASE("train: one full batch gives exactly one step") {
    LabeledSplits splits = labeled_splits(60, 12);
    ModelConfig mc = small_config();
    TrainConfig tc;
    tc.batch_size = 1000;  // larger than the training split
    tc.epochs = 1;
    tc.seed = 12;
    TrainResult r = train(splits.train, splits.val, mc, tc, LossWeights{});
    CHECK(r.steps == 1);
    CHECK(r.log.size() == 1);
}

TEST_CASE("train is bitwise reproducible") {
    LabeledSplits splits = labeled_splits(80, 21);
    ModelConfig mc = small_config();
    mc.dropout = 0.3;
    TrainConfig tc;
    tc.batch_size = 16;
    tc.epochs = 4;
    tc.seed = 21;
    TrainResult a = train(splits.train, splits.val, mc, tc, LossWeights{});
    TrainResult b = train(splits.train, splits.val, mc, tc, LossWeights{});
    CHECK(same_params(a.model.params, b.model.params));
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].total == b.log[i].total);
        CHECK(a.log[i].val_total == b.log[i].val_total);
    }
}

TEST_CASE("train reduces the factual loss on synthetic data") {
    LabeledSplits splits = labeled_splits(300, 31);
    ModelConfig mc;
    mc.shared_layers = 2;
    mc.neurons = 16;
    mc.head_hidden = 16;
    mc.dropout = 0.1;
    mc.latent_dim = 2;
    TrainConfig tc;
    tc.batch_size = 32;
    tc.epochs = 15;
    tc.patience = 15;
    tc.seed = 31;
    TrainResult r = train(splits.train, splits.val, mc, tc, LossWeights{});
    CHECK(r.log.back().factual < r.log.front().factual);
}

TEST_CASE("early stopping returns the best-validation parameters") {
    LabeledSplits splits = labeled_splits(120, 41);
    ModelConfig mc = small_config();
    TrainConfig tc;
    tc.batch_size = 16;
    tc.epochs = 12;
    tc.patience = 3;
    tc.seed = 41;
    TrainResult r = train(splits.train, splits.val, mc, tc, LossWeights{});

    double best = r.log.front().val_total;
    for (const EpochLog& row : r.log) {
        best = std::min(best, row.val_total);
        CHECK(row.best_so_far == doctest::Approx(best).epsilon(1e-15));
    }
    CHECK(r.best_val == doctest::Approx(best).epsilon(1e-15));

    // Recompute the validation loss of the returned parameters.
    std::vector<TrainSample> va = prepare_samples(splits.val, splits.train.base.calibration);
    std::vector<Vec> latents(va.size());
    for (std::size_t i = 0; i < va.size(); ++i)
        latents[i] = sample_latent(r.model.config, rng::combine(tc.seed, rng::tag::latent_val),
                                   static_cast<std::uint64_t>(va[i].record_id));
    LossBreakdown val = dataset_loss(r.model.config, r.model.params, va, latents, LossWeights{},
                                     Exec::serial);
    CHECK(val.total == doctest::Approx(r.best_val).epsilon(1e-12));
}

TEST_CASE("with zero counterfactual weight the counterfactual head never moves") {
    LabeledSplits splits = labeled_splits(80, 51);
    ModelConfig mc = small_config();
    mc.latent_dim = 0;
    TrainConfig tc;
    tc.batch_size = 16;
    tc.epochs = 3;
    tc.seed = 51;
    LossWeights w;
    w.lambda2 = 0.0;
    w.lambda_reg = 0.0;
    TrainResult r = train(splits.train, splits.val, mc, tc, w);

    ModelConfig fitted = r.model.config;  // widths resolved from the schema
    ParamSet initial = init_params(fitted, tc.seed);
    CHECK(r.model.params.counterfactual.Wh.a == initial.counterfactual.Wh.a);
    CHECK(r.model.params.counterfactual.Wo.a == initial.counterfactual.Wo.a);
    CHECK(r.model.params.counterfactual.bh == initial.counterfactual.bh);
    CHECK(r.model.params.counterfactual.bo == initial.counterfactual.bo);
    CHECK(r.model.params.factual.Wo.a != initial.factual.Wo.a);
}

TEST_CASE("train aborts with epoch context on numerical blowup") {
    LabeledSplits splits = labeled_splits(60, 61);
    ModelConfig mc = small_config();
    TrainConfig tc;
    tc.batch_size = 16;
    tc.epochs = 5;
    tc.seed = 61;
    tc.lr = 1e100;  // guaranteed overflow
    CHECK_THROWS_WITH_AS(train(splits.train, splits.val, mc, tc, LossWeights{}),
                         doctest::Contains("epoch"), NumericError);
}

TEST_CASE("training log csv") {
    std::vector<EpochLog> log = {{1, 1.0, 2.0, 3.0, 4.0, 5.0, 5.0},
                                 {2, 0.5, 1.5, 2.5, 3.5, 4.5, 4.5}};
    const std::string path = "cfx_test_log.csv";
    write_train_log_csv(log, path, "meta");
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "# meta");
    std::getline(in, line);
    CHECK(line ==
          "epoch,train_factual,train_counterfactual,train_reg,train_total,val_total,best_so_far");
    std::getline(in, line);
    CHECK(line == "1,1,2,3,4,5,5");
    std::remove(path.c_str());
}

TEST_CASE("configuration defaults are pinned") {
    ModelConfig mc;
    CHECK(mc.shared_layers == 4);
    CHECK(mc.neurons == 128);
    CHECK(mc.head_hidden == 256);
    CHECK(mc.outputs == 4);
    CHECK(mc.dropout == 0.3);
    CHECK(mc.latent_dim == 10);

    LossWeights w;
    CHECK(w.lambda1 == 0.65);
    CHECK(w.lambda2 == 0.35);
    CHECK(w.lambda_reg == 0.01);

    TrainConfig tc;
    CHECK(tc.batch_size == 64);
    CHECK(tc.epochs == 200);
    CHECK(tc.patience == 20);
    CHECK(tc.lr == 0.001);

    AdamState st = make_adam_state(ModelConfig{});
    CHECK(st.alpha == 0.001);
    CHECK(st.beta1 == 0.9);
    CHECK(st.beta2 == 0.999);
    CHECK(st.eps == 1e-8);
}

#include "cfx/network.hpp"

#include <algorithm>
#include <cmath>

#include "cfx/error.hpp"
#include "cfx/rng.hpp"

namespace cfx {

void ModelConfig::validate() const {
    if (shared_layers < 1) throw DataError("shared_layers must be >= 1");
    if (neurons < 1) throw DataError("neurons must be >= 1");
    if (head_hidden < 1) throw DataError("head_hidden must be >= 1");
    if (outputs < 2) throw DataError("outputs must be >= 2");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw DataError("dropout must lie in [0, 1)");
    if (latent_dim < 0) throw DataError("latent_dim must be >= 0");
    if (confounders < 1 || treatments < 1)
        throw DataError("config needs at least one confounder and one treatment");
}

namespace {

// Engine-stable uniform in [0, 1).
inline double canonical(std::mt19937_64& eng) {
    return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

void visit_tensors(ParamSet& p,
                   const std::function<void(const std::string&, std::vector<double>&, bool)>& fn) {
    for (std::size_t l = 0; l < p.shared_W.size(); ++l) {
        fn("shared.W" + std::to_string(l + 1), p.shared_W[l].a, false);
        fn("shared.b" + std::to_string(l + 1), p.shared_b[l], false);
    }
    fn("factual.Wh", p.factual.Wh.a, true);
    fn("factual.bh", p.factual.bh, false);
    fn("factual.Wo", p.factual.Wo.a, true);
    fn("factual.bo", p.factual.bo, false);
    fn("counterfactual.Wh", p.counterfactual.Wh.a, true);
    fn("counterfactual.bh", p.counterfactual.bh, false);
    fn("counterfactual.Wo", p.counterfactual.Wo.a, true);
    fn("counterfactual.bo", p.counterfactual.bo, false);
}

}  // namespace

void ParamSet::for_each_tensor(
    const std::function<void(const std::string&, std::vector<double>&, bool)>& fn) {
    visit_tensors(*this, fn);
}

void ParamSet::for_each_tensor(
    const std::function<void(const std::string&, const std::vector<double>&, bool)>& fn) const {
    visit_tensors(const_cast<ParamSet&>(*this),
                  [&](const std::string& name, std::vector<double>& data, bool hw) {
                      fn(name, data, hw);
                  });
}

std::size_t ParamSet::parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const std::string&, const std::vector<double>& d, bool) { n += d.size(); });
    return n;
}

bool ParamSet::all_finite() const {
    bool ok = true;
    for_each_tensor([&](const std::string&, const std::vector<double>& d, bool) {
        for (double v : d)
            if (!std::isfinite(v)) ok = false;
    });
    return ok;
}

ParamSet zeros_like(const ModelConfig& config) {
    config.validate();
    ParamSet p;
    int in = config.input_width();
    for (int l = 0; l < config.shared_layers; ++l) {
        p.shared_W.emplace_back(static_cast<std::size_t>(config.neurons),
                                static_cast<std::size_t>(l == 0 ? in : config.neurons));
        p.shared_b.emplace_back(static_cast<std::size_t>(config.neurons), 0.0);
    }
    auto make_head = [&](HeadParams& h) {
        h.Wh = Matrix(static_cast<std::size_t>(config.head_hidden),
                      static_cast<std::size_t>(config.neurons + config.treatments));
        h.bh.assign(static_cast<std::size_t>(config.head_hidden), 0.0);
        h.Wo = Matrix(static_cast<std::size_t>(config.outputs),
                      static_cast<std::size_t>(config.head_hidden));
        h.bo.assign(static_cast<std::size_t>(config.outputs), 0.0);
    };
    make_head(p.factual);
    make_head(p.counterfactual);
    return p;
}

void add_into(ParamSet& dst, const ParamSet& src) {
    auto add_vec = [](Vec& d, const Vec& s) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
    };
    for (std::size_t l = 0; l < dst.shared_W.size(); ++l) {
        add_vec(dst.shared_W[l].a, src.shared_W[l].a);
        add_vec(dst.shared_b[l], src.shared_b[l]);
    }
    auto add_head = [&](HeadParams& d, const HeadParams& s) {
        add_vec(d.Wh.a, s.Wh.a);
        add_vec(d.bh, s.bh);
        add_vec(d.Wo.a, s.Wo.a);
        add_vec(d.bo, s.bo);
    };
    add_head(dst.factual, src.factual);
    add_head(dst.counterfactual, src.counterfactual);
}

ParamSet init_params(const ModelConfig& config, std::uint64_t seed) {
    ParamSet p = zeros_like(config);
    std::mt19937_64 eng = rng::substream(seed, rng::tag::init);
    std::normal_distribution<double> unit(0.0, 1.0);
    auto fill = [&](Matrix& W) {
        double scale = std::sqrt(2.0 / static_cast<double>(W.cols));
        for (double& v : W.a) v = scale * unit(eng);
    };
    for (Matrix& W : p.shared_W) fill(W);
    fill(p.factual.Wh);
    fill(p.factual.Wo);
    fill(p.counterfactual.Wh);
    fill(p.counterfactual.Wo);
    return p;
}

Vec sample_latent(const ModelConfig& config, std::uint64_t seed, std::uint64_t index) {
    Vec u(static_cast<std::size_t>(config.latent_dim));
    if (u.empty()) return u;
    std::mt19937_64 eng = rng::substream(seed, rng::tag::latent_train, index);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (double& v : u) v = unit(eng);
    return u;
}

void softmax(const Vec& logits, Vec& probs) {
    probs.resize(logits.size());
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - m);
        sum += probs[i];
    }
    for (double& v : probs) v /= sum;
}

namespace {

void relu_inplace(Vec& v) {
    for (double& x : v) x = x > 0.0 ? x : 0.0;
}

// Draws one inverted-dropout mask layer; multiplies activations in place.
void apply_dropout(Vec& act, Vec& mask, double rate, std::mt19937_64& eng) {
    const double keep = 1.0 - rate;
    mask.resize(act.size());
    for (std::size_t i = 0; i < act.size(); ++i) {
        mask[i] = canonical(eng) < keep ? 1.0 / keep : 0.0;
        act[i] *= mask[i];
    }
}

void head_forward(const ModelConfig& config, const HeadParams& head, const Vec& trunk,
                  const Vec& treat, const ForwardMode& mode, std::mt19937_64* drop_eng,
                  HeadCache& hc) {
    hc.concat_in.resize(trunk.size() + treat.size());
    std::copy(trunk.begin(), trunk.end(), hc.concat_in.begin());
    std::copy(treat.begin(), treat.end(), hc.concat_in.begin() + static_cast<std::ptrdiff_t>(trunk.size()));

    hc.hid_pre.resize(static_cast<std::size_t>(config.head_hidden));
    affine(head.Wh, head.bh, hc.concat_in.data(), hc.hid_pre.data());
    hc.hid_act = hc.hid_pre;
    relu_inplace(hc.hid_act);
    if (mode.train && config.dropout > 0.0)
        apply_dropout(hc.hid_act, hc.mask, config.dropout, *drop_eng);
    else
        hc.mask.clear();

    hc.logits.resize(static_cast<std::size_t>(config.outputs));
    affine(head.Wo, head.bo, hc.hid_act.data(), hc.logits.data());
    for (double v : hc.logits)
        if (!std::isfinite(v)) throw NumericError("non-finite activation in head output");
    softmax(hc.logits, hc.probs);
}

}  // namespace

PredictionPair forward(const ModelConfig& config, const ParamSet& params,
                       const Vec& xhat, const Vec& that, const Vec& tstar_hat,
                       const Vec& latent, const ForwardMode& mode, ForwardCache* cache) {
    if (xhat.size() != static_cast<std::size_t>(config.confounders))
        throw DataError("confounder vector has wrong width");
    if (that.size() != static_cast<std::size_t>(config.treatments) ||
        tstar_hat.size() != static_cast<std::size_t>(config.treatments))
        throw DataError("treatment vector has wrong width");
    if (latent.size() != static_cast<std::size_t>(config.latent_dim))
        throw DataError("latent vector has wrong width");
    if (params.shared_W.size() != static_cast<std::size_t>(config.shared_layers))
        throw DataError("parameter set does not match config");

    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;

    c.input.resize(xhat.size() + latent.size());
    std::copy(xhat.begin(), xhat.end(), c.input.begin());
    std::copy(latent.begin(), latent.end(), c.input.begin() + static_cast<std::ptrdiff_t>(xhat.size()));

    std::mt19937_64 drop_eng;
    if (mode.train && config.dropout > 0.0) drop_eng = rng::substream(mode.dropout_seed, rng::tag::dropout);

    const std::size_t L = params.shared_W.size();
    c.shared_pre.resize(L);
    c.shared_act.resize(L);
    c.shared_mask.resize(L);
    const Vec* prev = &c.input;
    for (std::size_t l = 0; l < L; ++l) {
        c.shared_pre[l].resize(params.shared_W[l].rows);
        affine(params.shared_W[l], params.shared_b[l], prev->data(), c.shared_pre[l].data());
        c.shared_act[l] = c.shared_pre[l];
        relu_inplace(c.shared_act[l]);
        if (mode.train && config.dropout > 0.0)
            apply_dropout(c.shared_act[l], c.shared_mask[l], config.dropout, drop_eng);
        else
            c.shared_mask[l].clear();
        prev = &c.shared_act[l];
    }

    std::mt19937_64* eng_ptr = (mode.train && config.dropout > 0.0) ? &drop_eng : nullptr;
    head_forward(config, params.factual, *prev, that, mode, eng_ptr, c.fact);
    head_forward(config, params.counterfactual, *prev, tstar_hat, mode, eng_ptr, c.cf);

    return PredictionPair{c.fact.probs, c.cf.probs};
}

PredictionPair predict_with_latents(const ModelConfig& config, const ParamSet& params,
                                    const Vec& xhat, const Vec& that, const Vec& tstar_hat,
                                    const std::vector<Vec>& latents) {
    if (latents.empty()) throw DataError("predict needs at least one latent draw");
    Vec acc_f(static_cast<std::size_t>(config.outputs), 0.0);
    Vec acc_cf(static_cast<std::size_t>(config.outputs), 0.0);
    for (const Vec& u : latents) {
        PredictionPair p = forward(config, params, xhat, that, tstar_hat, u, ForwardMode::eval());
        for (std::size_t k = 0; k < acc_f.size(); ++k) {
            acc_f[k] += p.factual[k];
            acc_cf[k] += p.counterfactual[k];
        }
    }
    auto normalize = [&](Vec& v) {
        double sum = 0.0;
        for (double x : v) sum += x;
        for (double& x : v) x /= sum;
    };
    normalize(acc_f);
    normalize(acc_cf);
    return PredictionPair{std::move(acc_f), std::move(acc_cf)};
}

PredictionPair predict(const TrainedModel& model, const CrashRecord& record,
                       const std::vector<int>& t_star, int mc_samples, std::uint64_t seed) {
    if (mc_samples < 1) throw DataError("mc_samples must be >= 1");
    CalibratedRecord cal = calibrate_record(record, model.schema, model.calibration);
    Vec tstar_hat = calibrate_treatments(t_star, model.schema, model.calibration);
    const int draws = model.config.latent_dim == 0 ? 1 : mc_samples;
    std::vector<Vec> latents;
    latents.reserve(static_cast<std::size_t>(draws));
    for (int m = 0; m < draws; ++m)
        latents.push_back(sample_latent(model.config, seed, static_cast<std::uint64_t>(m)));
    return predict_with_latents(model.config, model.params, cal.confounders, cal.treatments,
                                tstar_hat, latents);
}

}  // namespace cfx

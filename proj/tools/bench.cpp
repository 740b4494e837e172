// Serial vs OpenMP timing for the data-parallel kernels, with an equality
// check: the two execution policies must produce identical bytes.

#include <chrono>
#include <cstdio>
#include <vector>

#include "cfx/effects.hpp"
#include "cfx/propensity.hpp"
#include "cfx/rng.hpp"
#include "cfx/synth.hpp"
#include "cfx/training.hpp"

using namespace cfx;

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

bool params_equal(const ParamSet& a, const ParamSet& b) {
    bool eq = true;
    a.for_each_tensor([&](const std::string& name, const std::vector<double>& da, bool) {
        b.for_each_tensor([&](const std::string& nb, const std::vector<double>& db, bool) {
            if (name != nb) return;
            if (da.size() != db.size()) eq = false;
            for (std::size_t i = 0; i < da.size() && eq; ++i)
                if (da[i] != db[i]) eq = false;
        });
    });
    return eq;
}

void print_row(const char* kernel, double serial_ms, double parallel_ms, bool identical) {
    std::printf("%-22s %10.1f ms %10.1f ms %7.2fx   %s\n", kernel, serial_ms, parallel_ms,
                serial_ms / parallel_ms, identical ? "identical" : "MISMATCH");
}

}  // namespace

int main() {
    const std::uint64_t seed = 99;
    std::printf("%-22s %13s %13s %9s   %s\n", "kernel", "serial", "parallel", "speedup",
                "outputs");

    // Synthetic generation.
    SynthConfig sc = default_synth_config(200000, seed);
    auto t0 = std::chrono::steady_clock::now();
    SynthResult serial_gen = generate_synthetic(sc, Exec::serial);
    double gen_serial = ms_since(t0);
    t0 = std::chrono::steady_clock::now();
    SynthResult parallel_gen = generate_synthetic(sc, Exec::parallel);
    double gen_parallel = ms_since(t0);
    bool gen_eq = serial_gen.data.size() == parallel_gen.data.size();
    for (std::size_t i = 0; i < serial_gen.data.size() && gen_eq; ++i) {
        const CrashRecord& a = serial_gen.data.records[i];
        const CrashRecord& b = parallel_gen.data.records[i];
        gen_eq = a.outcome == b.outcome && a.treatments == b.treatments &&
                 a.confounders == b.confounders;
    }
    print_row("generate_synthetic", gen_serial, gen_parallel, gen_eq);

    // Batch gradient kernel on the default architecture.
    SynthResult small = generate_synthetic(default_synth_config(2000, seed), Exec::parallel);
    MatchPolicy policy;
    LabeledDataset labeled = assign_preliminary_labels(small.data, policy, seed, Exec::parallel);
    ModelConfig mc;
    mc.confounders = static_cast<int>(labeled.base.schema.n_confounders());
    mc.treatments = static_cast<int>(labeled.base.schema.n_treatments());
    std::vector<TrainSample> samples = prepare_samples(labeled, labeled.base.calibration);
    ParamSet params = init_params(mc, seed);
    LossWeights w;

    std::vector<std::size_t> indices(samples.size());
    std::vector<Vec> latents(samples.size());
    std::vector<std::uint64_t> drop_seeds(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        indices[i] = i;
        latents[i] = sample_latent(mc, seed, i);
        drop_seeds[i] = rng::combine(seed, i);
    }
    t0 = std::chrono::steady_clock::now();
    BatchEval gs = batch_forward_backward(mc, params, samples, indices, latents, drop_seeds, w,
                                          Exec::serial);
    double grad_serial = ms_since(t0);
    t0 = std::chrono::steady_clock::now();
    BatchEval gp = batch_forward_backward(mc, params, samples, indices, latents, drop_seeds, w,
                                          Exec::parallel);
    double grad_parallel = ms_since(t0);
    print_row("batch gradients", grad_serial, grad_parallel,
              params_equal(gs.grads, gp.grads) && gs.loss.total == gp.loss.total);

    // Effect estimation.
    TrainedModel model;
    model.config = mc;
    model.params = params;
    model.schema = labeled.base.schema;
    model.calibration = labeled.base.calibration;
    Scenario scenario{{{"Lighting condition", 3}}};
    t0 = std::chrono::steady_clock::now();
    EffectEstimate es = estimate_effects(model, small.data, scenario, 50, seed, Exec::serial);
    double eff_serial = ms_since(t0);
    t0 = std::chrono::steady_clock::now();
    EffectEstimate ep = estimate_effects(model, small.data, scenario, 50, seed, Exec::parallel);
    double eff_parallel = ms_since(t0);
    bool eff_eq = es.ate_level == ep.ate_level && es.ate_prob == ep.ate_prob &&
                  es.per_sample.size() == ep.per_sample.size();
    print_row("estimate_effects", eff_serial, eff_parallel, eff_eq);

    // Label matching.
    t0 = std::chrono::steady_clock::now();
    LabeledDataset ls = assign_preliminary_labels(small.data, policy, seed, Exec::serial);
    double lab_serial = ms_since(t0);
    t0 = std::chrono::steady_clock::now();
    LabeledDataset lp = assign_preliminary_labels(small.data, policy, seed, Exec::parallel);
    double lab_parallel = ms_since(t0);
    bool lab_eq = ls.base.size() == lp.base.size();
    for (std::size_t i = 0; i < ls.labels.size() && lab_eq; ++i)
        lab_eq = ls.labels[i].matched_id == lp.labels[i].matched_id &&
                 ls.labels[i].t_star == lp.labels[i].t_star;
    print_row("label matching", lab_serial, lab_parallel, lab_eq);

    return (gen_eq && eff_eq && lab_eq) ? 0 : 1;
}

#include "cfx/effects.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "json.hpp"

#include "cfx/dataset.hpp"
#include "cfx/error.hpp"

namespace cfx {

namespace {

std::size_t argmax_low_tie(const Vec& p) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < p.size(); ++k)
        if (p[k] > p[best]) best = k;
    return best;
}

}  // namespace

std::string Scenario::label() const {
    if (deltas.empty()) return "identity";
    std::string out;
    for (const auto& [var, level] : deltas) {
        if (!out.empty()) out += ';';
        out += var + "=" + std::to_string(level);
    }
    return out;
}

void validate_scenario(const Scenario& scenario, const Schema& schema) {
    std::set<std::string> seen;
    for (const auto& [var, level] : scenario.deltas) {
        std::size_t idx = schema.index_of(var);
        if (idx == Schema::npos || schema[idx].role != Role::treatment)
            throw DataError("unknown scenario variable '" + var + "'");
        if (!seen.insert(var).second)
            throw DataError("scenario sets '" + var + "' more than once");
        if (level < 0 || level >= schema[idx].levels)
            throw DataError("scenario level " + std::to_string(level) + " for '" + var +
                            "' outside the valid range 0-" + std::to_string(schema[idx].levels - 1));
    }
}

std::vector<int> apply_scenario(const Scenario& scenario, const CrashRecord& rec,
                                const Schema& schema) {
    validate_scenario(scenario, schema);
    std::vector<int> out = rec.treatments;
    const std::vector<std::size_t> tidx = schema.treatment_indices();
    for (const auto& [var, level] : scenario.deltas) {
        std::size_t idx = schema.index_of(var);
        std::size_t pos = static_cast<std::size_t>(
            std::find(tidx.begin(), tidx.end(), idx) - tidx.begin());
        out[pos] = level;
    }
    return out;
}

int ite_level(const Vec& p_factual, const Vec& p_counterfactual) {
    if (p_factual.size() != p_counterfactual.size() || p_factual.empty())
        throw DataError("probability vectors have mismatched lengths");
    return static_cast<int>(argmax_low_tie(p_counterfactual)) -
           static_cast<int>(argmax_low_tie(p_factual));
}

double ite_probability(const Vec& p_factual, const Vec& p_counterfactual) {
    if (ite_level(p_factual, p_counterfactual) != 0)
        throw DataError("ite_probability is only defined when the severity level is unchanged");
    return *std::max_element(p_counterfactual.begin(), p_counterfactual.end()) -
           *std::max_element(p_factual.begin(), p_factual.end());
}

double expected_severity(const Vec& p) {
    double s = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) s += static_cast<double>(k) * p[k];
    return s;
}

EffectEstimate effects_from_tables(const std::vector<std::int64_t>& ids,
                                   const std::vector<Vec>& p_factual,
                                   const std::vector<Vec>& p_counterfactual) {
    if (ids.empty()) throw DataError("no records to estimate effects on");
    if (ids.size() != p_factual.size() || ids.size() != p_counterfactual.size())
        throw DataError("effect tables have mismatched lengths");

    EffectEstimate est;
    est.n_total = ids.size();
    est.per_sample.reserve(ids.size());
    double sum_level = 0.0, sum_level_changed = 0.0, sum_prob = 0.0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        SampleEffect eff;
        eff.record_id = ids[i];
        eff.level_change = ite_level(p_factual[i], p_counterfactual[i]);
        sum_level += eff.level_change;
        if (eff.level_change == 0) {
            eff.prob_change = ite_probability(p_factual[i], p_counterfactual[i]);
            sum_prob += *eff.prob_change;
            ++est.n_level_unchanged;
        } else {
            sum_level_changed += eff.level_change;
            ++est.n_level_changed;
        }
        est.per_sample.push_back(eff);
    }
    est.ate_level = sum_level / static_cast<double>(est.n_total);
    est.ate_prob_all_n = sum_prob / static_cast<double>(est.n_total);
    est.ate_prob =
        est.n_level_unchanged ? sum_prob / static_cast<double>(est.n_level_unchanged) : 0.0;
    est.ate_level_changed_only =
        est.n_level_changed ? sum_level_changed / static_cast<double>(est.n_level_changed) : 0.0;
    return est;
}

namespace {

// Per-record prediction tables under one scenario. Latent draws are shared
// across records, so per-record results are independent of partitioning.
void prediction_tables(const TrainedModel& model, const Dataset& ds, const Scenario& scenario,
                       int mc_samples, std::uint64_t seed, Exec exec, std::vector<Vec>& pf,
                       std::vector<Vec>& pcf) {
    if (ds.records.empty()) throw DataError("empty dataset");
    validate_scenario(scenario, model.schema);
    if (mc_samples < 1) throw DataError("mc_samples must be >= 1");

    const int draws = model.config.latent_dim == 0 ? 1 : mc_samples;
    std::vector<Vec> latents;
    latents.reserve(static_cast<std::size_t>(draws));
    for (int m = 0; m < draws; ++m)
        latents.push_back(sample_latent(model.config, seed, static_cast<std::uint64_t>(m)));

    const std::size_t n = ds.size();
    pf.assign(n, Vec{});
    pcf.assign(n, Vec{});
    parallel_for(n, exec, [&](std::size_t i) {
        const CrashRecord& rec = ds.records[i];
        CalibratedRecord cal = calibrate_record(rec, model.schema, model.calibration);
        Vec tstar_hat = calibrate_treatments(apply_scenario(scenario, rec, model.schema),
                                             model.schema, model.calibration);
        PredictionPair p = predict_with_latents(model.config, model.params, cal.confounders,
                                                cal.treatments, tstar_hat, latents);
        pf[i] = std::move(p.factual);
        pcf[i] = std::move(p.counterfactual);
    });
}

}  // namespace

EffectEstimate estimate_effects(const TrainedModel& model, const Dataset& ds,
                                const Scenario& scenario, int mc_samples, std::uint64_t seed,
                                Exec exec) {
    std::vector<Vec> pf, pcf;
    prediction_tables(model, ds, scenario, mc_samples, seed, exec, pf, pcf);
    std::vector<std::int64_t> ids(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) ids[i] = ds.records[i].record_id;
    return effects_from_tables(ids, pf, pcf);
}

Grouping preset_grouping(const std::string& name, const Dataset& ds) {
    const double inf = std::numeric_limits<double>::infinity();
    if (name == "popdensity-4000") return {"Population density", {-inf, 4000.0, inf}};
    if (name == "minority-45") return {"Minority percentage", {-inf, 45.0, inf}};
    if (name == "intersection-40-160") return {"Intersection density", {-inf, 40.0, 160.0}};
    if (name == "income-tertiles") {
        std::size_t idx = ds.schema.index_of("Mean household income");
        if (idx == Schema::npos)
            throw DataError("income-tertiles preset needs the 'Mean household income' column");
        const std::vector<std::size_t> cidx = ds.schema.confounder_indices();
        std::size_t pos = static_cast<std::size_t>(
            std::find(cidx.begin(), cidx.end(), idx) - cidx.begin());
        std::vector<double> vals(ds.size());
        for (std::size_t i = 0; i < ds.size(); ++i) vals[i] = ds.records[i].confounders[pos];
        std::sort(vals.begin(), vals.end());
        double q1 = vals[vals.size() / 3];
        double q2 = vals[(2 * vals.size()) / 3];
        if (!(q1 < q2))
            throw DataError("income tertile cut points coincide; the income column is too coarse");
        return {"Mean household income", {-inf, q1, q2, inf}};
    }
    throw DataError("unknown grouping preset '" + name +
                    "' (known: popdensity-4000, minority-45, intersection-40-160, income-tertiles)");
}

GroupReport stratified_report(const TrainedModel& model, const Dataset& ds,
                              const std::vector<Scenario>& scenarios, const Grouping& grouping,
                              int mc_samples, std::uint64_t seed, Exec exec) {
    if (scenarios.empty()) throw DataError("stratified report needs at least one scenario");
    if (grouping.edges.size() < 2) throw DataError("grouping needs at least one bin");
    for (std::size_t j = 1; j < grouping.edges.size(); ++j)
        if (!(grouping.edges[j - 1] < grouping.edges[j]))
            throw DataError("grouping edges must be strictly increasing");

    std::size_t var_idx = ds.schema.index_of(grouping.variable);
    if (var_idx == Schema::npos || ds.schema[var_idx].role != Role::confounder)
        throw DataError("unknown grouping confounder '" + grouping.variable + "'");
    const std::vector<std::size_t> cidx = ds.schema.confounder_indices();
    std::size_t conf_pos = static_cast<std::size_t>(
        std::find(cidx.begin(), cidx.end(), var_idx) - cidx.begin());

    const std::size_t n_bins = grouping.edges.size() - 1;
    const int k_levels = ds.schema[ds.schema.outcome_index()].levels;

    GroupReport report;
    report.grouping = grouping;
    report.scenarios = scenarios;
    report.bins.resize(n_bins);
    for (std::size_t b = 0; b < n_bins; ++b) {
        report.bins[b].low = grouping.edges[b];
        report.bins[b].high = grouping.edges[b + 1];
        report.bins[b].severity_counts.assign(static_cast<std::size_t>(k_levels), 0);
    }

    // Bin assignment by raw confounder value: (low, high].
    std::vector<std::size_t> bin_of(ds.size(), Schema::npos);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        double v = ds.records[i].confounders[conf_pos];
        for (std::size_t b = 0; b < n_bins; ++b) {
            if (v > grouping.edges[b] && v <= grouping.edges[b + 1]) {
                bin_of[i] = b;
                break;
            }
        }
        if (bin_of[i] == Schema::npos) {
            report.out_of_range.push_back(ds.records[i].record_id);
            continue;
        }
        report.bins[bin_of[i]].count += 1;
        report.bins[bin_of[i]].severity_counts[static_cast<std::size_t>(
            ds.records[i].outcome)] += 1;
    }

    for (std::size_t s = 0; s < scenarios.size(); ++s) {
        std::vector<Vec> pf, pcf;
        prediction_tables(model, ds, scenarios[s], mc_samples, seed, exec, pf, pcf);

        std::vector<double> sum_sev(n_bins, 0.0), sum_level(n_bins, 0.0), sum_prob(n_bins, 0.0);
        std::vector<std::size_t> unchanged(n_bins, 0);
        for (std::size_t i = 0; i < ds.size(); ++i) {
            std::size_t b = bin_of[i];
            if (b == Schema::npos) continue;
            sum_sev[b] += expected_severity(pcf[i]);
            int lv = ite_level(pf[i], pcf[i]);
            sum_level[b] += lv;
            if (lv == 0) {
                sum_prob[b] += ite_probability(pf[i], pcf[i]);
                ++unchanged[b];
            }
        }
        for (std::size_t b = 0; b < n_bins; ++b) {
            GroupCell cell;
            cell.bin = b;
            cell.scenario = s;
            cell.count = report.bins[b].count;
            const double cnt = static_cast<double>(cell.count);
            cell.expected_severity = cell.count ? sum_sev[b] / cnt : 0.0;
            cell.ate_level = cell.count ? sum_level[b] / cnt : 0.0;
            cell.ate_prob = unchanged[b] ? sum_prob[b] / static_cast<double>(unchanged[b]) : 0.0;
            cell.n_level_unchanged = unchanged[b];
            report.cells.push_back(cell);
        }
    }
    return report;
}

void write_ites_csv(const EffectEstimate& est, const std::string& path, const RunMeta& meta) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write file: " + path);
    out << "# " << meta.comment() << "\n";
    out << "record_id,ite_level,ite_prob\n";
    for (const SampleEffect& eff : est.per_sample) {
        out << eff.record_id << ',' << eff.level_change << ',';
        if (eff.prob_change) out << format_double(*eff.prob_change);
        out << '\n';
    }
}

void write_summary_json(const EffectEstimate& est, const Scenario& scenario,
                        const std::string& path, const RunMeta& meta) {
    nlohmann::json j;
    j["meta"]["config_hash"] = meta.config_hash;
    j["meta"]["seed"] = meta.seed;
    for (const auto& [k, v] : meta.config) j["meta"]["config"][k] = v;
    j["scenario"] = nlohmann::json::array();
    for (const auto& [var, level] : scenario.deltas)
        j["scenario"].push_back({{"variable", var}, {"level", level}});
    j["scenario_id"] = scenario.label();
    j["n_total"] = est.n_total;
    j["n_level_changed"] = est.n_level_changed;
    j["n_level_unchanged"] = est.n_level_unchanged;
    j["ate_level"] = est.ate_level;
    j["ate_level_changed_only"] = est.ate_level_changed_only;
    j["ate_prob"] = est.ate_prob;
    j["ate_prob_pct"] = 100.0 * est.ate_prob;
    j["ate_prob_all_n"] = est.ate_prob_all_n;
    j["ate_prob_all_n_pct"] = 100.0 * est.ate_prob_all_n;
    j["ate_prob_defined"] = est.n_level_unchanged > 0;

    std::ofstream out(path);
    if (!out) throw DataError("cannot write file: " + path);
    out << j.dump(2) << '\n';
}

void write_group_report_csv(const GroupReport& report, const std::string& path,
                            const RunMeta& meta) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write file: " + path);
    out << "# " << meta.comment() << "\n";
    if (!report.out_of_range.empty())
        out << "# excluded " << report.out_of_range.size() << " records outside every bin\n";
    out << "group_var,bin_low,bin_high,scenario_id,count,expected_severity,ate_level,ate_prob\n";
    for (const GroupCell& cell : report.cells) {
        const GroupBin& bin = report.bins[cell.bin];
        out << report.grouping.variable << ',' << format_double(bin.low) << ','
            << format_double(bin.high) << ',' << report.scenarios[cell.scenario].label() << ','
            << cell.count << ',' << format_double(cell.expected_severity) << ','
            << format_double(cell.ate_level) << ',' << format_double(cell.ate_prob) << '\n';
    }
}

void write_group_factual_csv(const GroupReport& report, const std::string& path,
                             const RunMeta& meta) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write file: " + path);
    out << "# " << meta.comment() << "\n";
    out << "group_var,bin_low,bin_high,count";
    const std::size_t k = report.bins.empty() ? 0 : report.bins.front().severity_counts.size();
    for (std::size_t lvl = 0; lvl < k; ++lvl) out << ",share_level" << lvl;
    out << '\n';
    for (const GroupBin& bin : report.bins) {
        out << report.grouping.variable << ',' << format_double(bin.low) << ','
            << format_double(bin.high) << ',' << bin.count;
        for (std::size_t lvl = 0; lvl < k; ++lvl) {
            double share = bin.count ? static_cast<double>(bin.severity_counts[lvl]) /
                                           static_cast<double>(bin.count)
                                     : 0.0;
            out << ',' << format_double(share);
        }
        out << '\n';
    }
}

}  // namespace cfx

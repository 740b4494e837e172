#ifndef CFX_EFFECTS_HPP
#define CFX_EFFECTS_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cfx/exec.hpp"
#include "cfx/network.hpp"
#include "cfx/runmeta.hpp"

namespace cfx {

// A counterfactual treatment change: each listed variable is set to its
// target level; an empty list is the identity scenario.
struct Scenario {
    std::vector<std::pair<std::string, int>> deltas;

    bool identity() const { return deltas.empty(); }
    std::string label() const;  // "Var=level;Var=level", or "identity"
};

// Throws DataError for unknown variables, duplicates, or levels outside the
// variable's code range (the message cites the valid range).
void validate_scenario(const Scenario& scenario, const Schema& schema);

// The record's treatments with the scenario applied.
std::vector<int> apply_scenario(const Scenario& scenario, const CrashRecord& rec,
                                const Schema& schema);

// Severity-level shift: argmax of the counterfactual distribution minus
// argmax of the factual one, ties broken toward the lower severity index.
int ite_level(const Vec& p_factual, const Vec& p_counterfactual);

// Probability shift of the (shared) modal severity level; only defined when
// the level does not change, which the caller must ensure.
double ite_probability(const Vec& p_factual, const Vec& p_counterfactual);

// Probability-weighted mean severity level, in [0, K-1].
double expected_severity(const Vec& p);

struct SampleEffect {
    std::int64_t record_id = 0;
    int level_change = 0;
    std::optional<double> prob_change;  // engaged iff level_change == 0
};

struct EffectEstimate {
    std::vector<SampleEffect> per_sample;
    double ate_level = 0.0;               // mean level change over all N
    double ate_prob = 0.0;                // mean probability change over the unchanged subset
    double ate_prob_all_n = 0.0;          // same numerator averaged over all N (zeros imputed)
    double ate_level_changed_only = 0.0;  // mean level change over the changed subset
    std::size_t n_total = 0;
    std::size_t n_level_changed = 0;
    std::size_t n_level_unchanged = 0;
};

// The estimator machinery applied to explicit probability tables; also used
// by the synthetic oracle so both paths share one implementation.
EffectEstimate effects_from_tables(const std::vector<std::int64_t>& ids,
                                   const std::vector<Vec>& p_factual,
                                   const std::vector<Vec>& p_counterfactual);

EffectEstimate estimate_effects(const TrainedModel& model, const Dataset& ds,
                                const Scenario& scenario, int mc_samples, std::uint64_t seed,
                                Exec exec = Exec::serial);

// Strata over one confounder's raw values: bin j covers (edges[j], edges[j+1]].
struct Grouping {
    std::string variable;
    std::vector<double> edges;  // strictly increasing, at least two
};

// Named threshold presets: popdensity-4000, minority-45, intersection-40-160,
// and income-tertiles (cut points from the dataset's empirical tertiles).
Grouping preset_grouping(const std::string& name, const Dataset& ds);

struct GroupBin {
    double low = 0.0, high = 0.0;
    std::size_t count = 0;
    std::vector<std::size_t> severity_counts;  // factual outcome distribution
};

struct GroupCell {
    std::size_t bin = 0;
    std::size_t scenario = 0;
    std::size_t count = 0;
    double expected_severity = 0.0;  // mean counterfactual expected severity
    double ate_level = 0.0;
    double ate_prob = 0.0;
    std::size_t n_level_unchanged = 0;
};

struct GroupReport {
    Grouping grouping;
    std::vector<Scenario> scenarios;
    std::vector<GroupBin> bins;
    std::vector<GroupCell> cells;             // bin-major, then scenario
    std::vector<std::int64_t> out_of_range;   // records outside every bin
};

GroupReport stratified_report(const TrainedModel& model, const Dataset& ds,
                              const std::vector<Scenario>& scenarios, const Grouping& grouping,
                              int mc_samples, std::uint64_t seed, Exec exec = Exec::serial);

// record_id, ite_level, ite_prob (empty when the level changed).
void write_ites_csv(const EffectEstimate& est, const std::string& path, const RunMeta& meta);

void write_summary_json(const EffectEstimate& est, const Scenario& scenario,
                        const std::string& path, const RunMeta& meta);

// group_var, bin_low, bin_high, scenario_id, count, expected_severity,
// ate_level, ate_prob.
void write_group_report_csv(const GroupReport& report, const std::string& path,
                            const RunMeta& meta);

// Companion table: factual severity-level shares per bin.
void write_group_factual_csv(const GroupReport& report, const std::string& path,
                             const RunMeta& meta);

}  // namespace cfx

#endif

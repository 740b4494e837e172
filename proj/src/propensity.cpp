#include "cfx/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "cfx/csv.hpp"
#include "cfx/error.hpp"
#include "cfx/rng.hpp"

namespace cfx {

namespace {

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + exp(-|z|)) + max(-z*y + ...) stable log-loss for label y in {0,1}.
inline double logloss(double z, int y) {
    return std::max(z, 0.0) - z * static_cast<double>(y) + std::log1p(std::exp(-std::abs(z)));
}

int treatment_code(const CrashRecord& rec, std::size_t flip_treatment) {
    return rec.treatments[flip_treatment];
}

struct FitData {
    std::vector<Vec> x;       // calibrated confounders, record-id order
    std::vector<int> y;       // indicator(treatment == level)
};

PropensityModel descend(const FitData& d, const std::string& var, int level, int iters, double lr,
                        double l2) {
    const std::size_t n = d.x.size();
    const std::size_t p = d.x[0].size();
    PropensityModel model;
    model.treatment_var = var;
    model.target_level = level;
    model.weights.assign(p, 0.0);
    model.ridged = l2 > 0.0;

    // Descend in mean-centered coordinates: the optimum is the same model
    // (intercept mapped back at the end) but the intercept direction is
    // decorrelated from the weights, which conditions plain gradient descent.
    Vec mean(p, 0.0);
    for (std::size_t i = 0; i < n; ++i) axpy(1.0, d.x[i].data(), mean.data(), p);
    for (double& m : mean) m /= static_cast<double>(n);
    std::vector<Vec> xc(d.x);
    for (Vec& row : xc)
        for (std::size_t j = 0; j < p; ++j) row[j] -= mean[j];

    Vec gw(p, 0.0);
    double step = lr;
    double prev_loss = std::numeric_limits<double>::infinity();
    for (int it = 0; it < iters; ++it) {
        std::fill(gw.begin(), gw.end(), 0.0);
        double gb = 0.0;
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double z = model.intercept + dot(model.weights.data(), xc[i].data(), p);
            double r = sigmoid(z) - static_cast<double>(d.y[i]);
            axpy(r, xc[i].data(), gw.data(), p);
            gb += r;
            loss += logloss(z, d.y[i]);
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        loss *= inv_n;
        gb *= inv_n;
        double l2_term = 0.0;
        for (double w : model.weights) l2_term += w * w;
        loss += l2 * l2_term;
        double gmax = std::abs(gb);
        for (std::size_t j = 0; j < p; ++j) {
            gw[j] = gw[j] * inv_n + 2.0 * l2 * model.weights[j];
            gmax = std::max(gmax, std::abs(gw[j]));
        }
        if (!std::isfinite(loss) || !std::isfinite(gmax))
            throw NumericError("non-finite propensity loss");
        if (gmax < 1e-6) break;
        // Descent steps that overshoot (loss went up) halve the step size;
        // keeps fixed-rate gradient descent stable for any caller-chosen lr.
        if (loss > prev_loss) step *= 0.5;
        prev_loss = loss;
        axpy(-step, gw.data(), model.weights.data(), p);
        model.intercept -= step * gb;
    }
    model.intercept -= dot(model.weights.data(), mean.data(), p);
    return model;
}

}  // namespace

double propensity_logit(const PropensityModel& model, const Vec& xhat) {
    if (xhat.size() != model.weights.size())
        throw DataError("confounder vector width does not match the propensity model");
    return model.intercept + dot(model.weights.data(), xhat.data(), xhat.size());
}

double propensity_score(const PropensityModel& model, const Vec& xhat) {
    // Saturated sigmoids round to exactly 0 or 1 in doubles; scores stay
    // strictly inside (0, 1) so their log-odds remain finite.
    double s = sigmoid(propensity_logit(model, xhat));
    return std::clamp(s, 1e-15, 1.0 - 1e-15);
}

PropensityModel fit_propensity(const Dataset& train, const std::string& treatment_var,
                               int target_level, int iters, double lr) {
    std::size_t var_idx = train.schema.index_of(treatment_var);
    if (var_idx == Schema::npos || train.schema[var_idx].role != Role::treatment)
        throw DataError("unknown treatment variable '" + treatment_var + "'");
    std::vector<std::size_t> tidx = train.schema.treatment_indices();
    std::size_t flip = std::find(tidx.begin(), tidx.end(), var_idx) - tidx.begin();

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return train.records[a].record_id < train.records[b].record_id;
    });

    FitData d;
    d.x.reserve(train.size());
    d.y.reserve(train.size());
    std::size_t positives = 0;
    for (std::size_t i : order) {
        const CrashRecord& rec = train.records[i];
        d.x.push_back(calibrate_record(rec, train).confounders);
        int ind = treatment_code(rec, flip) == target_level ? 1 : 0;
        positives += static_cast<std::size_t>(ind);
        d.y.push_back(ind);
    }
    if (positives == 0 || positives == train.size())
        throw DataError("one-class data: '" + treatment_var + "' is " +
                        (positives ? "always" : "never") + " at level " +
                        std::to_string(target_level));

    try {
        return descend(d, treatment_var, target_level, iters, lr, 0.0);
    } catch (const NumericError&) {
        // Separable data can push the unpenalized fit out of range; a small
        // ridge keeps the optimum finite.
        return descend(d, treatment_var, target_level, iters, lr, 1e-4);
    }
}

LabeledDataset assign_preliminary_labels(const Dataset& ds, const MatchPolicy& policy,
                                         std::uint64_t seed, Exec exec) {
    if (ds.records.empty()) throw DataError("cannot label an empty dataset");
    const std::vector<std::size_t> tidx = ds.schema.treatment_indices();
    const std::size_t n = ds.size();

    // Per-record draws come from the record's own stream so the result is
    // independent of record order and partitioning.
    std::vector<std::size_t> flip_var(n);
    std::vector<int> flip_level(n);
    for (std::size_t i = 0; i < n; ++i) {
        const CrashRecord& rec = ds.records[i];
        std::mt19937_64 eng =
            rng::substream(seed, rng::tag::flip, static_cast<std::uint64_t>(rec.record_id));
        std::size_t j = static_cast<std::size_t>(rng::bounded(eng, tidx.size()));
        int levels = ds.schema[tidx[j]].levels;
        int current = rec.treatments[j];
        int pick = static_cast<int>(rng::bounded(eng, static_cast<std::uint64_t>(levels - 1)));
        int level = pick < current ? pick : pick + 1;  // uniform over the other levels
        flip_var[i] = j;
        flip_level[i] = level;
    }

    std::vector<Vec> xhat(n);
    for (std::size_t i = 0; i < n; ++i) xhat[i] = calibrate_record(ds.records[i], ds).confounders;

    // Fit one model per requested (variable, level) pair; donor pools are
    // sorted by record id so ties resolve to the smallest id.
    std::set<std::pair<std::size_t, int>> needed;
    for (std::size_t i = 0; i < n; ++i) needed.insert({flip_var[i], flip_level[i]});

    struct PairContext {
        PropensityModel model;
        Vec logit;                      // per record
        std::vector<std::size_t> pool;  // donor positions, ascending record id
        double caliper = 0.0;
    };
    std::map<std::pair<std::size_t, int>, PairContext> pairs;

    std::vector<std::size_t> by_id(n);
    for (std::size_t i = 0; i < n; ++i) by_id[i] = i;
    std::sort(by_id.begin(), by_id.end(), [&](std::size_t a, std::size_t b) {
        return ds.records[a].record_id < ds.records[b].record_id;
    });

    for (const auto& [j, level] : needed) {
        PairContext ctx;
        for (std::size_t i : by_id)
            if (ds.records[i].treatments[j] == level) ctx.pool.push_back(i);
        const std::string& var = ds.schema[tidx[j]].name;
        if (ctx.pool.empty())
            throw DataError("empty donor pool: no record has '" + var + "' = " +
                            std::to_string(level));
        ctx.model = fit_propensity(ds, var, level, policy.propensity_iters, policy.propensity_lr);
        ctx.logit.resize(n);
        double sum = 0.0, sumsq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            ctx.logit[i] = propensity_logit(ctx.model, xhat[i]);
            sum += ctx.logit[i];
            sumsq += ctx.logit[i] * ctx.logit[i];
        }
        double mean = sum / static_cast<double>(n);
        double var_l = std::max(0.0, sumsq / static_cast<double>(n) - mean * mean);
        ctx.caliper = policy.caliper > 0.0 ? policy.caliper : 0.1 * std::sqrt(var_l);
        pairs.emplace(std::make_pair(j, level), std::move(ctx));
    }

    std::vector<CfLabel> labels(n);
    std::vector<char> rejected(n, 0);
    parallel_for(n, exec, [&](std::size_t i) {
        const PairContext& ctx = pairs.at({flip_var[i], flip_level[i]});
        const double si = ctx.logit[i];

        std::size_t best = Schema::npos;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t d : ctx.pool) {
            double dist = std::abs(si - ctx.logit[d]);
            if (dist < best_d) {
                best_d = dist;
                best = d;
            }
        }
        if (best_d > ctx.caliper) {
            if (policy.fallback == MatchPolicy::Fallback::reject) {
                rejected[i] = 1;
                return;
            }
            best = Schema::npos;
            best_d = std::numeric_limits<double>::infinity();
            for (std::size_t d : ctx.pool) {
                double dist = 0.0;
                for (std::size_t k = 0; k < xhat[i].size(); ++k) {
                    double diff = xhat[i][k] - xhat[d][k];
                    dist += diff * diff;
                }
                if (dist < best_d) {
                    best_d = dist;
                    best = d;
                }
            }
        }
        CfLabel lab;
        lab.t_star = ds.records[i].treatments;
        lab.t_star[flip_var[i]] = flip_level[i];
        lab.flip_treatment = flip_var[i];
        lab.flip_level = flip_level[i];
        lab.y_star = ds.records[best].outcome;
        lab.matched_id = ds.records[best].record_id;
        labels[i] = std::move(lab);
    });

    LabeledDataset out;
    out.base.schema = ds.schema;
    for (std::size_t i = 0; i < n; ++i) {
        if (rejected[i]) {
            out.rejected_ids.push_back(ds.records[i].record_id);
            continue;
        }
        out.base.records.push_back(ds.records[i]);
        out.labels.push_back(labels[i]);
    }
    if (out.base.records.empty())
        throw DataError("matching rejected every record; loosen the caliper");
    fit_calibration(out.base);
    return out;
}

void write_labeled_csv(const LabeledDataset& lds, const std::string& path,
                       const std::string& meta_comment) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write file: " + path);
    if (!meta_comment.empty()) out << "# " << meta_comment << "\n";
    const Schema& schema = lds.base.schema;
    const std::vector<std::size_t> tidx = schema.treatment_indices();
    for (std::size_t i = 0; i < schema.size(); ++i) out << schema[i].name << ',';
    out << "t_star,y_star,matched_id\n";
    for (std::size_t r = 0; r < lds.base.records.size(); ++r) {
        const CrashRecord& rec = lds.base.records[r];
        const CfLabel& lab = lds.labels[r];
        std::size_t t = 0, c = 0;
        for (std::size_t i = 0; i < schema.size(); ++i) {
            const Variable& var = schema[i];
            switch (var.role) {
                case Role::outcome:
                    out << rec.outcome;
                    break;
                case Role::treatment:
                    out << rec.treatments[t++];
                    break;
                case Role::confounder:
                    if (var.kind == Kind::continuous)
                        out << format_double(rec.confounders[c++]);
                    else
                        out << static_cast<long long>(rec.confounders[c++]);
                    break;
            }
            out << ',';
        }
        out << schema[tidx[lab.flip_treatment]].name << '=' << lab.flip_level << ','
            << lab.y_star << ',' << lab.matched_id << '\n';
    }
}

LabeledDataset load_labeled_csv(const std::string& path, const Schema& schema) {
    CsvTable table = read_csv(path);
    LabeledDataset out;
    out.base = dataset_from_table(table, schema, path, true);

    std::size_t col_t = table.column("t_star");
    std::size_t col_y = table.column("y_star");
    std::size_t col_m = table.column("matched_id");
    if (col_t == CsvTable::npos || col_y == CsvTable::npos || col_m == CsvTable::npos)
        throw DataError(path + ": labeled data needs t_star, y_star, matched_id columns");

    const Schema& eff = out.base.schema;
    const std::vector<std::size_t> tidx = eff.treatment_indices();
    const int outcome_levels = eff[eff.outcome_index()].levels;

    std::set<std::int64_t> ids;
    for (const CrashRecord& rec : out.base.records) ids.insert(rec.record_id);

    out.labels.reserve(out.base.records.size());
    for (std::size_t r = 0; r < out.base.records.size(); ++r) {
        const std::string where = path + ":" + std::to_string(table.line_numbers[r]);
        const std::string& cell = table.rows[r][col_t];
        std::size_t eq = cell.rfind('=');
        if (eq == std::string::npos)
            throw DataError(where + ": t_star cell '" + cell + "' is not '<variable>=<level>'");
        std::string var = cell.substr(0, eq);
        int level = static_cast<int>(parse_int(cell.substr(eq + 1), where + " t_star level"));
        std::size_t var_idx = eff.index_of(var);
        if (var_idx == Schema::npos || eff[var_idx].role != Role::treatment)
            throw DataError(where + ": t_star names unknown treatment '" + var + "'");
        if (level < 0 || level >= eff[var_idx].levels)
            throw DataError(where + ": t_star level " + std::to_string(level) + " outside [0, " +
                            std::to_string(eff[var_idx].levels - 1) + "]");

        CfLabel lab;
        lab.flip_treatment = static_cast<std::size_t>(
            std::find(tidx.begin(), tidx.end(), var_idx) - tidx.begin());
        lab.flip_level = level;
        lab.t_star = out.base.records[r].treatments;
        if (lab.t_star[lab.flip_treatment] == level)
            throw DataError(where + ": t_star does not differ from the factual treatments");
        lab.t_star[lab.flip_treatment] = level;
        lab.y_star = static_cast<int>(parse_int(table.rows[r][col_y], where + " y_star"));
        if (lab.y_star < 0 || lab.y_star >= outcome_levels)
            throw DataError(where + ": y_star outside [0, " + std::to_string(outcome_levels - 1) + "]");
        lab.matched_id = parse_int(table.rows[r][col_m], where + " matched_id");
        if (!ids.count(lab.matched_id))
            throw DataError(where + ": matched_id " + std::to_string(lab.matched_id) +
                            " not present in the file");
        out.labels.push_back(std::move(lab));
    }
    return out;
}

LabeledSplits split_labeled(const LabeledDataset& lds, const SplitRatios& ratios,
                            std::uint64_t seed) {
    SplitIndices idx = split_indices(lds.base.size(), ratios, seed);
    LabeledSplits out;
    auto fill = [&](LabeledDataset& part, const std::vector<std::size_t>& which) {
        part.base.schema = lds.base.schema;
        for (std::size_t i : which) {
            part.base.records.push_back(lds.base.records[i]);
            part.labels.push_back(lds.labels[i]);
        }
    };
    fill(out.train, idx.train);
    fill(out.val, idx.val);
    fill(out.test, idx.test);
    fit_calibration(out.train.base);
    out.val.base.calibration = out.train.base.calibration;
    out.test.base.calibration = out.train.base.calibration;
    return out;
}

}  // namespace cfx

#include "cfx/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "cfx/checkpoint.hpp"
#include "cfx/csv.hpp"
#include "cfx/effects.hpp"
#include "cfx/error.hpp"
#include "cfx/exec.hpp"
#include "cfx/runconfig.hpp"
#include "cfx/synth.hpp"
#include "cfx/training.hpp"

namespace cfx {

namespace {

// Key=value pairs collected from repeatable flags before RunConfig::set.
struct Override {
    std::string key;
    std::string value;
};

RunConfig resolve_config(const std::string& config_path, const std::vector<Override>& overrides) {
    RunConfig config;
    if (const char* env_seed = std::getenv("CFX_SEED")) config.set("seed", env_seed);
    if (!config_path.empty()) load_config_file(config, config_path);
    for (const Override& o : overrides) config.set(o.key, o.value);
    return config;
}

Scenario parse_scenario_entries(const std::vector<std::string>& entries, const Schema& schema) {
    Scenario s;
    for (const std::string& entry : entries) {
        std::size_t eq = entry.rfind('=');
        if (eq == std::string::npos)
            throw UsageError("--set expects '<variable>=<level>', got '" + entry + "'");
        std::string var = entry.substr(0, eq);
        std::string level_text = entry.substr(eq + 1);
        std::int64_t level = 0;
        try {
            level = std::stoll(level_text);
        } catch (...) {
            throw UsageError("--set level '" + level_text + "' is not an integer");
        }
        std::size_t idx = schema.resolve_treatment(var);
        s.deltas.emplace_back(schema[idx].name, static_cast<int>(level));
    }
    validate_scenario(s, schema);
    return s;
}

// One scenario per --scenario flag; deltas separated by ';'.
std::vector<Scenario> parse_scenario_list(const std::vector<std::string>& specs,
                                          const Schema& schema) {
    std::vector<Scenario> out;
    for (const std::string& spec : specs) {
        std::vector<std::string> entries;
        std::size_t start = 0;
        while (start <= spec.size()) {
            std::size_t pos = spec.find(';', start);
            std::string piece =
                pos == std::string::npos ? spec.substr(start) : spec.substr(start, pos - start);
            if (!piece.empty() && piece != "identity") entries.push_back(piece);
            if (pos == std::string::npos) break;
            start = pos + 1;
        }
        out.push_back(parse_scenario_entries(entries, schema));
    }
    return out;
}

void apply_threads(const RunConfig& config) { set_max_threads(config.threads); }

int cmd_synth(const RunConfig& config, const std::string& out_path,
              const std::string& truth_path) {
    apply_threads(config);
    RunMeta meta = make_meta(config);
    SynthResult result = generate_synthetic(config.synth_config(), config.exec());
    write_dataset_csv(result.data, out_path, meta.comment());
    std::string tp = truth_path.empty() ? out_path + ".truth.csv" : truth_path;
    write_truth_csv(result.truth, tp, meta);
    std::cerr << "synth: wrote " << result.data.size() << " records to " << out_path
              << " (ground truth: " << tp << ")\n";
    return 0;
}

int cmd_label(const RunConfig& config, const std::string& data_path, const std::string& out_path) {
    apply_threads(config);
    RunMeta meta = make_meta(config);
    Dataset ds = load_dataset(data_path, default_schema());
    LabeledDataset labeled =
        assign_preliminary_labels(ds, config.match_policy(), config.seed, config.exec());
    write_labeled_csv(labeled, out_path, meta.comment());
    std::cerr << "label: matched " << labeled.base.size() << " records";
    if (!labeled.rejected_ids.empty())
        std::cerr << " (" << labeled.rejected_ids.size() << " rejected outside the caliper)";
    std::cerr << " -> " << out_path << "\n";
    return 0;
}

int cmd_train(const RunConfig& config, const std::string& data_path, const std::string& out_path,
              const std::string& log_path) {
    apply_threads(config);
    RunMeta meta = make_meta(config);
    LabeledDataset labeled = load_labeled_csv(data_path, default_schema());
    LabeledSplits splits = split_labeled(labeled, config.split_ratios(), config.seed);

    TrainResult result = train(splits.train, splits.val, config.model_config(),
                               config.train_config(), config.loss_weights());
    result.model.config_hash = config.hash();
    save_checkpoint(result.model, out_path);
    std::string lp = log_path.empty() ? out_path + ".log.csv" : log_path;
    write_train_log_csv(result.log, lp, meta.comment());
    std::cerr << "train: " << result.log.size() << " epochs (" << result.steps
              << " steps), best validation loss " << result.best_val << " at epoch "
              << result.best_epoch << " -> " << out_path << "\n";
    return 0;
}

int cmd_effects(const RunConfig& config, const std::string& model_path,
                const std::string& data_path, const std::vector<std::string>& set_entries,
                const std::string& ites_path, const std::string& summary_path) {
    apply_threads(config);
    RunMeta meta = make_meta(config);
    TrainedModel model = load_checkpoint(model_path);
    Dataset ds = load_dataset(data_path, model.schema);
    Scenario scenario = parse_scenario_entries(set_entries, model.schema);
    EffectEstimate est =
        estimate_effects(model, ds, scenario, config.mc_samples, config.seed, config.exec());
    if (!ites_path.empty()) write_ites_csv(est, ites_path, meta);
    if (!summary_path.empty()) write_summary_json(est, scenario, summary_path, meta);
    std::cerr << "effects: " << scenario.label() << " on " << est.n_total
              << " records: ate_level=" << est.ate_level << " ate_prob=" << est.ate_prob << " ("
              << est.n_level_changed << " level changes)\n";
    return 0;
}

int cmd_report(const RunConfig& config, const std::string& model_path,
               const std::string& data_path, const std::vector<std::string>& scenario_specs,
               const std::string& group_preset, const std::string& group_var,
               const std::string& edges_text, const std::string& out_path) {
    apply_threads(config);
    RunMeta meta = make_meta(config);
    TrainedModel model = load_checkpoint(model_path);
    Dataset ds = load_dataset(data_path, model.schema);

    std::vector<Scenario> scenarios = parse_scenario_list(scenario_specs, model.schema);
    if (scenarios.empty()) throw UsageError("report needs at least one --scenario");

    Grouping grouping;
    if (!group_preset.empty()) {
        grouping = preset_grouping(group_preset, ds);
    } else {
        if (group_var.empty() || edges_text.empty())
            throw UsageError("report needs either --group <preset> or --group-var with --edges");
        grouping.variable = group_var;
        for (const std::string& cell : split_fields(edges_text))
            grouping.edges.push_back(parse_double(cell, "--edges"));
    }

    GroupReport report = stratified_report(model, ds, scenarios, grouping, config.mc_samples,
                                           config.seed, config.exec());
    write_group_report_csv(report, out_path, meta);
    std::string factual_path = out_path + ".factual.csv";
    write_group_factual_csv(report, factual_path, meta);
    std::cerr << "report: " << grouping.variable << " with " << report.bins.size() << " bins x "
              << scenarios.size() << " scenarios -> " << out_path << " (+" << factual_path
              << ")\n";
    return 0;
}

int cmd_eval(const RunConfig& config, const std::string& model_path,
             const std::string& train_path, const std::string& test_path,
             const std::string& truth_path, const std::string& out_path) {
    apply_threads(config);
    RunMeta meta = make_meta(config);
    TrainedModel model = load_checkpoint(model_path);
    LabeledDataset train_set = load_labeled_csv(train_path, model.schema);
    LabeledDataset test_set = load_labeled_csv(test_path, model.schema);

    std::optional<GroundTruth> truth;
    if (!truth_path.empty()) truth = load_truth_csv(truth_path);

    const std::size_t n = test_set.base.size();
    std::vector<int> net_f(n), net_cf(n), true_f(n), true_cf(n);
    std::vector<double> net_f_exp(n), net_cf_exp(n);
    std::vector<std::vector<std::pair<std::size_t, int>>> changes(n);

    parallel_for(n, config.exec(), [&](std::size_t i) {
        const CrashRecord& rec = test_set.base.records[i];
        const CfLabel& lab = test_set.labels[i];
        PredictionPair p = predict(model, rec, lab.t_star, config.mc_samples, config.seed);
        auto argmax = [](const Vec& v) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < v.size(); ++k)
                if (v[k] > v[best]) best = k;
            return static_cast<int>(best);
        };
        net_f[i] = argmax(p.factual);
        net_cf[i] = argmax(p.counterfactual);
        net_f_exp[i] = expected_severity(p.factual);
        net_cf_exp[i] = expected_severity(p.counterfactual);
        true_f[i] = rec.outcome;
        // Counterfactual reference: the matched preliminary label, or the
        // exact counterfactual outcome when ground truth is available.
        true_cf[i] = truth ? oracle_outcome(*truth, rec.record_id, lab.t_star) : lab.y_star;
        changes[i] = {{lab.flip_treatment, lab.flip_level}};
    });

    BaselinePrediction base = matching_baseline_targets(train_set, test_set.base, changes,
                                                        config.exec());

    auto expected_metrics = [&](const std::vector<double>& pred, const std::vector<int>& truth_lv) {
        double mse = 0.0, mae = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            double d = pred[i] - static_cast<double>(truth_lv[i]);
            mse += d * d;
            mae += std::abs(d);
        }
        mse /= static_cast<double>(pred.size());
        mae /= static_cast<double>(pred.size());
        return std::pair<double, double>(mse, mae);
    };

    nlohmann::json j;
    j["meta"]["config_hash"] = meta.config_hash;
    j["meta"]["seed"] = meta.seed;
    for (const auto& [k, v] : meta.config) j["meta"]["config"][k] = v;
    j["n_test"] = n;
    j["counterfactual_reference"] = truth ? "ground-truth" : "matched-labels";
    auto row = [&](const char* mdl, const Metrics& m, std::optional<std::pair<double, double>> exp) {
        nlohmann::json r;
        r["model"] = mdl;
        r["scenario"] = m.scenario;
        r["mse"] = m.mse;
        r["rmse"] = m.rmse;
        r["mae"] = m.mae;
        if (exp) {
            r["mse_expected_severity"] = exp->first;
            r["mae_expected_severity"] = exp->second;
        }
        return r;
    };
    j["rows"] = nlohmann::json::array();
    j["rows"].push_back(row("network", evaluate(net_f, true_f, "factual"),
                            expected_metrics(net_f_exp, true_f)));
    j["rows"].push_back(row("network", evaluate(net_cf, true_cf, "counterfactual"),
                            expected_metrics(net_cf_exp, true_cf)));
    j["rows"].push_back(row("matching-baseline", evaluate(base.factual, true_f, "factual"),
                            std::nullopt));
    j["rows"].push_back(row("matching-baseline",
                            evaluate(base.counterfactual, true_cf, "counterfactual"),
                            std::nullopt));

    std::ofstream out(out_path);
    if (!out) throw DataError("cannot write file: " + out_path);
    out << j.dump(2) << '\n';
    std::cerr << "eval: wrote metrics for " << n << " test records -> " << out_path << "\n";
    return 0;
}

int cmd_gradcheck(const RunConfig& config, double tolerance,
                  const std::vector<Override>& overrides) {
    apply_threads(config);
    // Finite differencing walks every parameter twice; the check runs on a
    // small network by default, with explicit flags taken as given.
    ModelConfig mc;
    mc.shared_layers = 2;
    mc.neurons = 6;
    mc.head_hidden = 6;
    mc.outputs = 4;
    mc.dropout = config.dropout;
    mc.latent_dim = 2;
    mc.confounders = 4;
    mc.treatments = 3;
    for (const Override& o : overrides) {
        if (o.key == "layers") mc.shared_layers = static_cast<int>(std::stoll(o.value));
        if (o.key == "neurons") mc.neurons = static_cast<int>(std::stoll(o.value));
        if (o.key == "head_hidden") mc.head_hidden = static_cast<int>(std::stoll(o.value));
        if (o.key == "outputs") mc.outputs = static_cast<int>(std::stoll(o.value));
        if (o.key == "latent_dim") mc.latent_dim = static_cast<int>(std::stoll(o.value));
    }
    if (mc.neurons > 8 || mc.head_hidden > 8)
        throw UsageError("gradcheck needs widths <= 8 to stay tractable");
    GradCheckReport report = gradient_check(mc, config.seed, config.loss_weights());
    std::cout << "parameters checked: " << report.parameters << "\n";
    std::cout << "max relative error: " << report.max_rel_err << " at " << report.worst_param
              << " (analytic " << report.analytic << ", numeric " << report.numeric << ")\n";
    if (report.max_rel_err > tolerance) {
        std::cerr << "gradcheck: FAILED tolerance " << tolerance << "\n";
        return 3;
    }
    std::cout << "gradcheck: ok (tolerance " << tolerance << ")\n";
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"cfx: counterfactual severity-effect estimation for crash records"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<Override> overrides;
    const std::vector<std::pair<std::string, std::string>> defaults = RunConfig{}.items();
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "flat key=value config file");
        auto hook = [&overrides](const std::string& key) {
            return [&overrides, key](const std::string& value) {
                overrides.push_back({key, value});
            };
        };
        // Every RunConfig key is also reachable as a flag.
        for (const auto& [key, value] : defaults) {
            std::string flag = "--" + key;
            for (char& c : flag)
                if (c == '_') c = '-';
            cmd->add_option_function<std::string>(flag, hook(key),
                                                  "config key " + key + " (default " + value + ")");
        }
    };

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic crash dataset + ground truth");
    std::string synth_out, synth_truth;
    std::string synth_n_flag;
    synth->add_option("--n", synth_n_flag, "sample count (alias for --synth-n)");
    synth->add_option("--out", synth_out, "output dataset csv")->required();
    synth->add_option("--truth-out", synth_truth, "ground-truth sidecar csv (default <out>.truth.csv)");
    add_common(synth);

    // label
    auto* label = app.add_subcommand("label", "attach preliminary counterfactual labels");
    std::string label_data, label_out;
    label->add_option("--data", label_data, "input dataset csv")->required();
    label->add_option("--out", label_out, "labeled output csv")->required();
    add_common(label);

    // train
    auto* train_cmd = app.add_subcommand("train", "train the two-headed severity model");
    std::string train_data, train_out, train_log;
    train_cmd->add_option("--data", train_data, "labeled dataset csv")->required();
    train_cmd->add_option("--out", train_out, "model checkpoint path")->required();
    train_cmd->add_option("--log", train_log, "training log csv (default <out>.log.csv)");
    add_common(train_cmd);

    // effects
    auto* effects_cmd = app.add_subcommand("effects", "estimate per-record and average effects");
    std::string eff_model, eff_data, eff_ites, eff_summary;
    std::vector<std::string> eff_sets;
    effects_cmd->add_option("--model", eff_model, "model checkpoint")->required();
    effects_cmd->add_option("--data", eff_data, "dataset csv")->required();
    effects_cmd->add_option("--set", eff_sets, "scenario delta '<variable>=<level>' (repeatable)");
    effects_cmd->add_option("--ites-out", eff_ites, "per-record effect csv");
    effects_cmd->add_option("--summary-out", eff_summary, "summary json");
    add_common(effects_cmd);

    // report
    auto* report_cmd = app.add_subcommand("report", "confounder-stratified counterfactual report");
    std::string rep_model, rep_data, rep_group, rep_group_var, rep_edges, rep_out;
    std::vector<std::string> rep_scenarios;
    report_cmd->add_option("--model", rep_model, "model checkpoint")->required();
    report_cmd->add_option("--data", rep_data, "dataset csv")->required();
    report_cmd->add_option("--scenario", rep_scenarios,
                           "scenario '<var>=<lvl>[;<var>=<lvl>]' or 'identity' (repeatable)");
    report_cmd->add_option("--group", rep_group,
                           "grouping preset: popdensity-4000 | minority-45 | "
                           "intersection-40-160 | income-tertiles");
    report_cmd->add_option("--group-var", rep_group_var, "confounder to stratify on");
    report_cmd->add_option("--edges", rep_edges, "comma-separated bin edges for --group-var");
    report_cmd->add_option("--out", rep_out, "report csv")->required();
    add_common(report_cmd);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "factual/counterfactual metrics vs the baseline");
    std::string ev_model, ev_train, ev_test, ev_truth, ev_out;
    eval_cmd->add_option("--model", ev_model, "model checkpoint")->required();
    eval_cmd->add_option("--train", ev_train, "labeled training csv (baseline donors)")->required();
    eval_cmd->add_option("--test", ev_test, "labeled test csv")->required();
    eval_cmd->add_option("--truth", ev_truth, "ground-truth sidecar csv (optional)");
    eval_cmd->add_option("--out", ev_out, "metrics json")->required();
    add_common(eval_cmd);

    // gradcheck
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    double grad_tol = 1e-4;
    grad_cmd->add_option("--tolerance", grad_tol, "max relative error accepted")
        ->capture_default_str();
    add_common(grad_cmd);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;  // --help exits 0; every parse failure is a usage error
    }

    try {
        if (*synth) {
            if (!synth_n_flag.empty()) overrides.push_back({"synth_n", synth_n_flag});
            return cmd_synth(resolve_config(config_path, overrides), synth_out, synth_truth);
        }
        if (*label)
            return cmd_label(resolve_config(config_path, overrides), label_data, label_out);
        if (*train_cmd)
            return cmd_train(resolve_config(config_path, overrides), train_data, train_out,
                             train_log);
        if (*effects_cmd)
            return cmd_effects(resolve_config(config_path, overrides), eff_model, eff_data,
                               eff_sets, eff_ites, eff_summary);
        if (*report_cmd)
            return cmd_report(resolve_config(config_path, overrides), rep_model, rep_data,
                              rep_scenarios, rep_group, rep_group_var, rep_edges, rep_out);
        if (*eval_cmd)
            return cmd_eval(resolve_config(config_path, overrides), ev_model, ev_train, ev_test,
                            ev_truth, ev_out);
        if (*grad_cmd)
            return cmd_gradcheck(resolve_config(config_path, overrides), grad_tol, overrides);
        throw UsageError("no subcommand given");
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace cfx

// hitcert: certify that a batch of generated candidates contains a hit,
// prune it to the smallest certified prefix, and stress-test the weights.

#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <hitcert/hitcert.hpp>

namespace {

using namespace hitcert;

// ---------------------------------------------------------------------------
// shared options
// ---------------------------------------------------------------------------

struct CommonOpts {
    std::string pool_path;
    std::string batch_path;
    double alpha = 0.1;
    std::size_t permutations = 2000;
    std::string score = "max";
    std::string weights = "uniform";
    std::vector<double> bandwidth_grid = {0.1, 1.0, 10.0};
    int folds = 5;
    bool no_standardize = false;
    double ood_quantile = -1.0; // negative: filter off
    std::uint64_t seed = 20250101;
    std::string out_path;
    bool strict = false;
    bool with_timings = false;
};

void add_io_options(CLI::App* cmd, CommonOpts& o, bool need_batch = true) {
    cmd->add_option("--pool", o.pool_path, "calibration CSV (f0..f{d-1}, y, optional mu/group)")
        ->required();
    auto* b = cmd->add_option("--batch", o.batch_path,
                              "candidate CSV (f0..f{d-1}, mu), rows in generation order");
    if (need_batch) b->required();
    cmd->add_option("--out", o.out_path, "write the JSON report here instead of stdout");
    cmd->add_flag("--timings", o.with_timings, "include wall-clock timings in the report");
}

void add_inference_options(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--alpha", o.alpha, "significance level in (0,1)")->capture_default_str();
    cmd->add_option("--permutations", o.permutations, "Monte Carlo permutation draws B")
        ->capture_default_str();
    cmd->add_option("--score", o.score, "conformity score: max, sum, ranksum or llr")
        ->capture_default_str();
    cmd->add_option("--weights", o.weights,
                    "weight source: uniform | kde | analytic:mu=<csv> | file:<path>")
        ->capture_default_str();
    cmd->add_option("--bandwidth-grid", o.bandwidth_grid,
                    "KDE bandwidth grid for cross-validation")
        ->delimiter(',')
        ->capture_default_str();
    cmd->add_option("--folds", o.folds, "cross-validation folds")->capture_default_str();
    cmd->add_flag("--no-standardize", o.no_standardize,
                  "fit KDEs on raw features instead of calibration z-scores");
    cmd->add_option("--ood-quantile", o.ood_quantile,
                    "drop candidates below this calibration-density quantile (in [0,1))");
    cmd->add_option("--seed", o.seed, "master seed")->capture_default_str();
    cmd->add_flag("--strict", o.strict,
                  "exit with code 3 when the outcome is not confident enough");
}

// ---------------------------------------------------------------------------
// weight resolution and OOD filtering
// ---------------------------------------------------------------------------

struct WeightSpec {
    enum class Kind { Uniform, Kde, Analytic, File } kind = Kind::Uniform;
    FeatureVector mu;
    std::string path;
};

WeightSpec parse_weight_spec(const std::string& text) {
    WeightSpec spec;
    if (text == "uniform") {
        spec.kind = WeightSpec::Kind::Uniform;
    } else if (text == "kde") {
        spec.kind = WeightSpec::Kind::Kde;
    } else if (text.rfind("analytic:mu=", 0) == 0) {
        spec.kind = WeightSpec::Kind::Analytic;
        std::string list = text.substr(std::string("analytic:mu=").size());
        std::size_t pos = 0;
        while (pos <= list.size()) {
            const std::size_t comma = list.find(',', pos);
            const std::string tok =
                list.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
            if (tok.empty()) throw InputError("--weights analytic: empty component in mu");
            spec.mu.push_back(csv_detail::parse_double(tok, 0, "mu"));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (spec.mu.empty()) throw InputError("--weights analytic: mu has no components");
    } else if (text.rfind("file:", 0) == 0) {
        spec.kind = WeightSpec::Kind::File;
        spec.path = text.substr(5);
        if (spec.path.empty()) throw InputError("--weights file: missing path");
    } else {
        throw InputError("unknown --weights '" + text +
                         "' (expected uniform, kde, analytic:mu=<csv> or file:<path>)");
    }
    return spec;
}

struct PreparedInputs {
    LabeledPool pool;
    CandidateBatch batch;       // after OOD filtering
    WeightFn wfn;
    Json weights_meta;
    std::vector<std::size_t> kept; // original candidate indices surviving the filter
    bool ood_applied = false;
};

PreparedInputs prepare_inputs(const CommonOpts& o, bool need_pool_scores = true) {
    LabeledPoolCsv pool_csv = read_labeled_pool_csv_file(o.pool_path);
    CandidateBatch batch = read_candidate_batch_csv_file(o.batch_path);
    const LabeledPool& pool = pool_csv.pool;

    if (need_pool_scores) {
        const ValidationReport check = validate_pair(pool, batch);
        if (!check.ok) {
            std::string msg = "invalid input pair:";
            for (const auto& issue : check.issues) msg += "\n  - " + issue;
            throw InputError(msg);
        }
    } else if (pool.dimension() != batch.dimension()) {
        throw InputError("dimension mismatch between pool and batch");
    }

    const WeightSpec wspec = parse_weight_spec(o.weights);
    RngStream rng(o.seed, 0xFE0Full);

    std::vector<double> file_pool_w, file_batch_w;
    if (wspec.kind == WeightSpec::Kind::File) {
        std::vector<double> all = read_weights_csv_file(wspec.path);
        if (all.size() != pool.size() + batch.size())
            throw InputError("weight file has " + std::to_string(all.size()) + " rows, expected " +
                             std::to_string(pool.size()) + " pool rows + " +
                             std::to_string(batch.size()) + " batch rows");
        file_pool_w.assign(all.begin(), all.begin() + static_cast<long>(pool.size()));
        file_batch_w.assign(all.begin() + static_cast<long>(pool.size()), all.end());
    }

    PreparedInputs prep{pool, batch, WeightFn::uniform(), Json::object(), {}, false};
    prep.kept.resize(batch.size());
    for (std::size_t j = 0; j < batch.size(); ++j) prep.kept[j] = j;

    if (o.ood_quantile >= 0.0) {
        const StandardScaler scaler = o.no_standardize
                                          ? StandardScaler::identity(pool.dimension())
                                          : StandardScaler::fit(pool.features());
        const KdeDensity cal_density = fit_kde(scaler.apply_all(pool.features()),
                                               o.bandwidth_grid, o.folds, rng.substream(1));
        prep.kept = ood_filter_logdensity(
            [&](const FeatureVector& x) { return cal_density.log_density(scaler.apply(x)); },
            pool.features(), batch.features(), o.ood_quantile);
        if (prep.kept.empty())
            throw InputError("ood filter at quantile " + std::to_string(o.ood_quantile) +
                             " removed every candidate");
        prep.batch = batch.subset(prep.kept);
        prep.ood_applied = true;
        if (wspec.kind == WeightSpec::Kind::File) {
            std::vector<double> filtered;
            for (std::size_t j : prep.kept) filtered.push_back(file_batch_w[j]);
            file_batch_w = std::move(filtered);
        }
    }

    switch (wspec.kind) {
        case WeightSpec::Kind::Uniform:
            prep.wfn = WeightFn::uniform();
            prep.weights_meta["kind"] = "uniform";
            break;
        case WeightSpec::Kind::Analytic:
            if (wspec.mu.size() != pool.dimension())
                throw InputError("--weights analytic: mu has dimension " +
                                 std::to_string(wspec.mu.size()) + ", data has " +
                                 std::to_string(pool.dimension()));
            prep.wfn = WeightFn::analytic_gaussian_shift(wspec.mu);
            prep.weights_meta["kind"] = "analytic";
            prep.weights_meta["mu"] = wspec.mu;
            break;
        case WeightSpec::Kind::Kde: {
            KdeRatioModel model =
                build_ratio_model(pool.features(), prep.batch.features(), o.bandwidth_grid,
                                  o.folds, rng.substream(2), !o.no_standardize);
            prep.weights_meta["kind"] = "kde";
            prep.weights_meta["bandwidth_p"] = model.bandwidth_p();
            prep.weights_meta["bandwidth_q"] = model.bandwidth_q();
            prep.weights_meta["standardized"] = !o.no_standardize;
            prep.wfn = WeightFn::kde_ratio(std::move(model));
            break;
        }
        case WeightSpec::Kind::File:
            prep.wfn = WeightFn::tabulated(std::move(file_pool_w), std::move(file_batch_w));
            prep.weights_meta["kind"] = "file";
            prep.weights_meta["path"] = wspec.path;
            break;
    }
    return prep;
}

// ---------------------------------------------------------------------------
// report plumbing
// ---------------------------------------------------------------------------

Json base_config(const std::string& command, const CommonOpts& o, const PreparedInputs* prep) {
    Json cfg;
    cfg["command"] = command;
    cfg["pool"] = o.pool_path;
    if (!o.batch_path.empty()) cfg["batch"] = o.batch_path;
    cfg["alpha"] = o.alpha;
    cfg["permutations"] = o.permutations;
    cfg["score"] = o.score;
    cfg["weights"] = o.weights;
    if (prep && !prep->weights_meta.empty()) cfg["weights_resolved"] = prep->weights_meta;
    cfg["bandwidth_grid"] = o.bandwidth_grid;
    cfg["folds"] = o.folds;
    cfg["standardize"] = !o.no_standardize;
    cfg["seed"] = o.seed;
    cfg["strict"] = o.strict;
    if (o.ood_quantile >= 0.0) {
        Json ood;
        ood["quantile"] = o.ood_quantile;
        if (prep) ood["kept_indices"] = prep->kept;
        cfg["ood"] = ood;
    }
    return cfg;
}

class Timer {
public:
    Timer() : start_(std::chrono::steady_clock::now()) {}
    double elapsed_ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

void finish_report(Json& report, const CommonOpts& o, const Timer& timer) {
    if (o.with_timings) {
        Json t;
        t["elapsed_ms"] = timer.elapsed_ms();
        report["timings"] = t;
    }
    const std::string text = dump_report(report);
    if (o.out_path.empty())
        std::cout << text;
    else {
        std::ofstream out(o.out_path, std::ios::binary);
        if (!out) throw InputError("cannot write report to '" + o.out_path + "'");
        out << text;
    }
}

// exit codes: 0 ok, 2 input error, 3 not-confident-enough under --strict
constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNotConfident = 3;

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int run_certify(const CommonOpts& o, bool exact, std::uint64_t enumeration_cap) {
    Timer timer;
    PreparedInputs prep = prepare_inputs(o);
    const ScoreStatistic stat(parse_score_kind(o.score));
    const std::size_t N = prep.batch.size();

    CertificationResult result;
    if (exact)
        result = deterministic_pvalue(prep.pool, prep.batch, N, stat, prep.wfn, o.alpha,
                                      enumeration_cap);
    else
        result = randomized_pvalue(prep.pool, prep.batch, N, stat, prep.wfn, o.alpha,
                                   o.permutations, RngStream(o.seed).substream(N));

    Json report;
    report["config"] = base_config("certify", o, &prep);
    report["config"]["exact"] = exact;
    report["p_value"] = result.p_value;
    report["certified"] = result.certified;
    finish_report(report, o, timer);
    return (!result.certified && o.strict) ? kExitNotConfident : kExitOk;
}

int run_design(const CommonOpts& o) {
    Timer timer;
    PreparedInputs prep = prepare_inputs(o);
    const ScoreStatistic stat(parse_score_kind(o.score));
    auto [profile, outcome] =
        design(prep.pool, prep.batch, stat, prep.wfn, o.alpha, o.permutations, RngStream(o.seed));

    Json report;
    report["config"] = base_config("design", o, &prep);
    report["raw_p"] = profile.raw;
    report["monotone_p"] = profile.monotone;
    report["n_hat"] = outcome.n_hat;
    std::vector<std::size_t> shortlist;
    for (std::size_t j : outcome.shortlist) shortlist.push_back(prep.kept[j]);
    report["shortlist"] = shortlist;
    report["status"] = to_string(outcome.status);
    finish_report(report, o, timer);
    return (outcome.status == DesignStatus::NotConfidentEnough && o.strict) ? kExitNotConfident
                                                                            : kExitOk;
}

int run_baseline(const CommonOpts& o, const std::string& method_name, double p_hat) {
    Timer timer;
    const BaselineMethod method = parse_baseline_method(method_name);

    if (method == BaselineMethod::Heuristic) {
        const std::size_t n = heuristic_batch_size(p_hat, o.alpha);
        Json report;
        Json cfg;
        cfg["command"] = "baseline";
        cfg["method"] = method_name;
        cfg["alpha"] = o.alpha;
        cfg["p_hat"] = p_hat;
        report["config"] = cfg;
        report["n_required"] = n;
        finish_report(report, o, timer);
        return kExitOk;
    }

    if (o.pool_path.empty() || o.batch_path.empty())
        throw InputError("baseline --method " + method_name + " needs --pool and --batch");
    PreparedInputs prep = prepare_inputs(o);
    const ScoreStatistic stat(parse_score_kind(o.score));
    Json report;
    report["config"] = base_config("baseline", o, &prep);
    report["config"]["method"] = method_name;

    bool certified = false;
    switch (method) {
        case BaselineMethod::Bonferroni: {
            const BaselineOutcome out = bonferroni(prep.pool, prep.batch, prep.wfn, o.alpha);
            certified = out.certified;
            std::vector<std::size_t> selected;
            for (std::size_t j : out.selected_indices) selected.push_back(prep.kept[j]);
            report["threshold"] = o.alpha / static_cast<double>(prep.batch.size());
            report["per_candidate_p"] = out.per_candidate_p;
            report["selected_indices"] = selected;
            report["certified"] = certified;
            break;
        }
        case BaselineMethod::CertificationOnly: {
            const BaselineOutcome out =
                certification_only(prep.pool, prep.batch, stat, prep.wfn, o.alpha, o.permutations,
                                   RngStream(o.seed));
            certified = out.certified;
            std::vector<std::size_t> selected;
            for (std::size_t j : out.selected_indices) selected.push_back(prep.kept[j]);
            report["selected_indices"] = selected;
            report["certified"] = certified;
            break;
        }
        case BaselineMethod::Unweighted: {
            auto [profile, outcome] = unweighted_design(prep.pool, prep.batch, stat, o.alpha,
                                                        o.permutations, RngStream(o.seed));
            certified = outcome.status == DesignStatus::Certified;
            report["raw_p"] = profile.raw;
            report["monotone_p"] = profile.monotone;
            report["n_hat"] = outcome.n_hat;
            std::vector<std::size_t> shortlist;
            for (std::size_t j : outcome.shortlist) shortlist.push_back(prep.kept[j]);
            report["shortlist"] = shortlist;
            report["status"] = to_string(outcome.status);
            break;
        }
        case BaselineMethod::Heuristic:
            break; // handled above
    }
    finish_report(report, o, timer);
    return (!certified && o.strict) ? kExitNotConfident : kExitOk;
}

int run_estimate_weights(const CommonOpts& o, const std::string& weights_out) {
    Timer timer;
    LabeledPoolCsv pool_csv = read_labeled_pool_csv_file(o.pool_path);
    CandidateBatch batch = read_candidate_batch_csv_file(o.batch_path);
    const LabeledPool& pool = pool_csv.pool;
    if (pool.dimension() != batch.dimension())
        throw InputError("dimension mismatch between pool and batch");

    RngStream rng(o.seed, 0xFE0Full);
    std::vector<std::size_t> kept(batch.size());
    for (std::size_t j = 0; j < batch.size(); ++j) kept[j] = j;
    CandidateBatch fit_batch = batch;
    if (o.ood_quantile >= 0.0) {
        const StandardScaler scaler = o.no_standardize
                                          ? StandardScaler::identity(pool.dimension())
                                          : StandardScaler::fit(pool.features());
        const KdeDensity cal_density = fit_kde(scaler.apply_all(pool.features()),
                                               o.bandwidth_grid, o.folds, rng.substream(1));
        kept = ood_filter_logdensity(
            [&](const FeatureVector& x) { return cal_density.log_density(scaler.apply(x)); },
            pool.features(), batch.features(), o.ood_quantile);
        if (kept.empty()) throw InputError("ood filter removed every candidate");
        fit_batch = batch.subset(kept);
    }

    const KdeRatioModel model =
        build_ratio_model(pool.features(), fit_batch.features(), o.bandwidth_grid, o.folds,
                          rng.substream(2), !o.no_standardize);

    // one weight per original row, pool first, so the file plugs into
    // --weights file:<path> against the same inputs
    std::vector<double> weights;
    weights.reserve(pool.size() + batch.size());
    for (std::size_t i = 0; i < pool.size(); ++i) weights.push_back(model.ratio(pool.feature(i)));
    for (std::size_t j = 0; j < batch.size(); ++j)
        weights.push_back(model.ratio(batch.feature(j)));
    {
        std::ofstream out(weights_out, std::ios::binary);
        if (!out) throw InputError("cannot write weights to '" + weights_out + "'");
        write_weights_csv(out, weights);
    }

    Json report;
    report["config"] = base_config("estimate-weights", o, nullptr);
    report["bandwidth_p"] = model.bandwidth_p();
    report["bandwidth_q"] = model.bandwidth_q();
    report["standardized"] = !o.no_standardize;
    report["n_pool"] = pool.size();
    report["n_batch"] = batch.size();
    if (o.ood_quantile >= 0.0) report["ood_kept_indices"] = kept;
    report["weights_out"] = weights_out;
    finish_report(report, o, timer);
    return kExitOk;
}

int run_diagnose(const CommonOpts& o, const std::string& mode,
                 const std::vector<std::string>& batch_paths, std::size_t top_groups,
                 const std::vector<double>& gamma_grid, const std::vector<double>& alpha_grid,
                 const std::string& reference_weights, double t_level) {
    Timer timer;
    const ScoreStatistic stat(parse_score_kind(o.score));

    if (mode == "balance") {
        PreparedInputs prep = prepare_inputs(o, /*need_pool_scores=*/false);
        const BalanceReport rep = balance_check(prep.pool, prep.batch, prep.wfn);
        Json report;
        report["config"] = base_config("diagnose", o, &prep);
        report["config"]["mode"] = mode;
        report["per_feature_imbalance_before"] = rep.per_feature_imbalance_before;
        report["per_feature_imbalance_after"] = rep.per_feature_imbalance_after;
        report["per_feature_imbalance_after_self_normalized"] =
            rep.per_feature_imbalance_after_self_normalized;
        report["cosine_distance_before"] = rep.cosine_distance_before;
        report["cosine_distance_after"] = rep.cosine_distance_after;
        finish_report(report, o, timer);
        return kExitOk;
    }

    if (mode == "shiftcheck") {
        LabeledPoolCsv pool_csv = read_labeled_pool_csv_file(o.pool_path);
        if (!pool_csv.groups)
            throw InputError("shiftcheck needs a 'group' column in the calibration CSV");
        const ValidationShiftReport rep = validation_shift(
            pool_csv.pool, *pool_csv.groups, top_groups, stat, o.bandwidth_grid, alpha_grid,
            o.permutations, RngStream(o.seed, 0xD1A6ull), o.folds);
        Json report;
        report["config"] = base_config("diagnose", o, nullptr);
        report["config"]["mode"] = mode;
        report["config"]["top_groups"] = top_groups;
        report["pseudo_test_groups"] = rep.pseudo_test_groups;
        report["n_pseudo_calibration"] = rep.n_pseudo_calibration;
        report["n_pseudo_test_null"] = rep.n_pseudo_test_null;
        report["bandwidth_p"] = rep.bandwidth_p;
        report["bandwidth_q"] = rep.bandwidth_q;
        report["kl_weighted"] = rep.kl_weighted;
        report["kl_unweighted"] = rep.kl_unweighted;
        report["alpha_grid"] = rep.alpha_grid;
        report["error_weighted"] = rep.error_weighted;
        report["error_unweighted"] = rep.error_unweighted;
        report["pvalues_weighted"] = rep.pvalues_weighted;
        report["pvalues_unweighted"] = rep.pvalues_unweighted;
        finish_report(report, o, timer);
        return kExitOk;
    }

    if (mode == "sensitivity") {
        if (batch_paths.empty())
            throw InputError("sensitivity needs at least one --batch file");
        CommonOpts first = o;
        first.batch_path = batch_paths.front();
        PreparedInputs prep = prepare_inputs(first);
        std::vector<CandidateBatch> batch_set;
        batch_set.push_back(prep.batch);
        for (std::size_t t = 1; t < batch_paths.size(); ++t)
            batch_set.push_back(read_candidate_batch_csv_file(batch_paths[t]));
        const SensitivityReport rep =
            sensitivity_sweep(prep.pool, batch_set, prep.wfn, gamma_grid, stat, alpha_grid,
                              o.permutations, RngStream(o.seed, 0x5E45ull));
        Json report;
        report["config"] = base_config("diagnose", o, &prep);
        report["config"]["mode"] = mode;
        report["config"]["gamma_grid"] = gamma_grid;
        report["config"]["batches"] = batch_paths;
        report["alpha_grid"] = rep.alpha_grid;
        Json rows = Json::array();
        for (const SensitivityRow& r : rep.rows) {
            Json row;
            row["gamma"] = r.gamma;
            row["kl_from_uniform_of_null_pvalues"] = r.kl_from_uniform_of_null_pvalues;
            row["rejection_rate"] = r.rejection_rate;
            row["decision_flips"] = r.decision_flips;
            row["worst_case_decision_flips"] = r.worst_case_decision_flips;
            if (!r.error_rate.empty()) row["error_rate"] = r.error_rate;
            rows.push_back(row);
        }
        report["rows"] = rows;
        finish_report(report, o, timer);
        return kExitOk;
    }

    if (mode == "gap") {
        PreparedInputs prep = prepare_inputs(o);
        CommonOpts ref = o;
        ref.weights = reference_weights;
        PreparedInputs ref_prep = prepare_inputs(ref);
        const RobustnessGap gap =
            robustness_gap(prep.pool, prep.batch, prep.batch.size(), stat, ref_prep.wfn,
                           prep.wfn, t_level, o.permutations, RngStream(o.seed, 0x6A9Full));
        Json report;
        report["config"] = base_config("diagnose", o, &prep);
        report["config"]["mode"] = mode;
        report["config"]["reference_weights"] = reference_weights;
        report["config"]["t"] = t_level;
        report["t"] = gap.t;
        report["cutoff_defined"] = gap.cutoff_defined;
        if (gap.cutoff_defined) {
            report["v_hat"] = gap.v_hat;
            report["t_hat"] = gap.t_hat;
        }
        report["delta_plus"] = gap.delta_plus;
        report["delta_minus"] = gap.delta_minus;
        report["bound"] = gap.bound;
        report["p_estimated"] = gap.p_estimated;
        report["p_reference"] = gap.p_true;
        finish_report(report, o, timer);
        return kExitOk;
    }

    throw InputError("unknown diagnose mode '" + mode +
                     "' (expected balance, shiftcheck, sensitivity or gap)");
}

int run_budget(const CommonOpts& o, const std::vector<std::string>& batch_paths,
               const std::vector<double>& alpha_grid, std::size_t total_budget) {
    Timer timer;
    if (batch_paths.empty()) throw InputError("budget needs at least one --batch file");
    const ScoreStatistic stat(parse_score_kind(o.score));
    const WeightSpec wspec = parse_weight_spec(o.weights);
    if (wspec.kind == WeightSpec::Kind::File)
        throw InputError("budget does not support file weights; use estimate-weights per input");

    LabeledPoolCsv pool_csv = read_labeled_pool_csv_file(o.pool_path);
    const LabeledPool& pool = pool_csv.pool;
    std::vector<CandidateBatch> inputs;
    for (const auto& path : batch_paths) inputs.push_back(read_candidate_batch_csv_file(path));

    RngStream rng(o.seed, 0xB06Eull);
    std::vector<WeightFn> wfns;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        switch (wspec.kind) {
            case WeightSpec::Kind::Uniform:
                wfns.push_back(WeightFn::uniform());
                break;
            case WeightSpec::Kind::Analytic:
                wfns.push_back(WeightFn::analytic_gaussian_shift(wspec.mu));
                break;
            case WeightSpec::Kind::Kde:
                wfns.push_back(WeightFn::kde_ratio(
                    build_ratio_model(pool.features(), inputs[t].features(), o.bandwidth_grid,
                                      o.folds, rng.substream(1000 + t), !o.no_standardize)));
                break;
            case WeightSpec::Kind::File:
                break;
        }
    }

    const BudgetPlan plan = allocate(pool, inputs, stat, wfns, alpha_grid, total_budget,
                                     o.permutations, rng.substream(1));

    Json report;
    report["config"] = base_config("budget", o, nullptr);
    report["config"]["batches"] = batch_paths;
    report["config"]["alpha_grid"] = alpha_grid;
    report["config"]["total_budget"] = total_budget;
    Json sweep = Json::array();
    for (const auto& row : plan.sweep) {
        Json r;
        r["alpha"] = row.alpha;
        r["total_cost_before_deletion"] = row.total_cost_before_deletion;
        r["total_cost"] = row.total_cost;
        r["empty_fraction"] = row.empty_fraction;
        r["deleted_fraction"] = row.deleted_fraction;
        r["estimated_positives"] = row.estimated_positives;
        sweep.push_back(r);
    }
    report["sweep"] = sweep;
    report["chosen_alpha"] = plan.chosen_alpha;
    report["estimated_positives"] = plan.estimated_positives;
    report["empty_fraction"] = plan.empty_fraction;
    report["deleted_fraction"] = plan.deleted_fraction;
    report["chosen_sets"] = plan.chosen_sets;
    report["deleted"] = plan.deleted;
    if (plan.exhausted_budget_warning)
        report["warning"] = "budget deleted every nonempty set";
    finish_report(report, o, timer);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

sim::SyntheticSpec spec_from_config(const Json& cfg) {
    sim::SyntheticSpec spec;
    if (cfg.contains("dimension")) spec.dimension = cfg["dimension"].get<std::size_t>();
    spec.shift_mu.assign(spec.dimension, 0.0);
    spec.label_coef.assign(spec.dimension, 0.0);
    if (spec.dimension >= 1) {
        spec.shift_mu[0] = 1.0;
        spec.label_coef[0] = 2.0;
    }
    if (spec.dimension >= 2) spec.label_coef[1] = 1.0;
    if (cfg.contains("shift_mu")) spec.shift_mu = cfg["shift_mu"].get<FeatureVector>();
    if (cfg.contains("label_coef")) spec.label_coef = cfg["label_coef"].get<FeatureVector>();
    if (cfg.contains("label_intercept")) spec.label_intercept = cfg["label_intercept"].get<double>();
    if (cfg.contains("n_calibration")) spec.n_calibration = cfg["n_calibration"].get<std::size_t>();
    if (cfg.contains("batch_size")) spec.batch_size = cfg["batch_size"].get<std::size_t>();
    if (cfg.contains("trials")) spec.trials = cfg["trials"].get<std::size_t>();
    if (cfg.contains("alpha_grid")) spec.alpha_grid = cfg["alpha_grid"].get<std::vector<double>>();
    if (cfg.contains("seed")) spec.seed = cfg["seed"].get<std::uint64_t>();
    spec.validate();
    return spec;
}

Json spec_echo(const sim::SyntheticSpec& spec) {
    Json j;
    j["dimension"] = spec.dimension;
    j["shift_mu"] = spec.shift_mu;
    j["label_coef"] = spec.label_coef;
    j["label_intercept"] = spec.label_intercept;
    j["n_calibration"] = spec.n_calibration;
    j["batch_size"] = spec.batch_size;
    j["trials"] = spec.trials;
    j["alpha_grid"] = spec.alpha_grid;
    j["seed"] = spec.seed;
    return j;
}

Json per_alpha_json(const sim::ExperimentReport& rep) {
    Json rows = Json::array();
    for (const sim::AlphaRow& r : rep.per_alpha) {
        Json row;
        row["alpha"] = r.alpha;
        row["empirical_error"] = r.empirical_error;
        row["power_or_rejection"] = r.power_or_rejection;
        row["mean_set_size"] = r.mean_set_size;
        row["empty_fraction"] = r.empty_fraction;
        row["mc_standard_error"] = r.mc_standard_error;
        rows.push_back(row);
    }
    return rows;
}

void write_pvalues_csv(const std::string& path, const std::vector<double>& ps) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write p-values to '" + path + "'");
    out << "p\n";
    for (double p : ps) out << format_double17(p) << "\n";
}

int run_simulate(const std::string& preset, const std::string& config_path,
                 const std::string& out_path, const std::string& pvalues_csv, unsigned threads,
                 const std::string& method_name, const std::string& score,
                 const std::string& corruption_name, bool with_timings) {
    Timer timer;
    Json cfg = Json::object();
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw InputError("cannot open config '" + config_path + "'");
        try {
            cfg = Json::parse(in);
        } catch (const std::exception& e) {
            throw InputError("config '" + config_path + "': " + e.what());
        }
    }
    const sim::SyntheticSpec spec = spec_from_config(cfg);
    const std::size_t B = cfg.value("permutations", std::size_t{2000});
    const ScoreStatistic stat(parse_score_kind(cfg.value("score", score)));

    sim::CorruptionMode corruption = sim::CorruptionMode::None;
    const std::string cname = cfg.value("corruption", corruption_name);
    if (cname == "noisy")
        corruption = sim::CorruptionMode::Noisy;
    else if (cname == "inverse")
        corruption = sim::CorruptionMode::Inverse;
    else if (cname != "none")
        throw InputError("unknown corruption '" + cname + "'");

    Json report;
    Json config;
    config["command"] = "simulate";
    config["preset"] = preset;
    config["spec"] = spec_echo(spec);
    config["permutations"] = B;
    config["score"] = cfg.value("score", score);
    config["corruption"] = cname;

    if (preset == "null") {
        sim::NullMethod method = sim::NullMethod::ConfidenceRand;
        const std::string m = cfg.value("method", method_name);
        if (m == "weighted_randomized")
            method = sim::NullMethod::ConfidenceRand;
        else if (m == "weighted_deterministic")
            method = sim::NullMethod::ConfidenceDet;
        else if (m == "unweighted")
            method = sim::NullMethod::Unweighted;
        else if (m == "bonferroni")
            method = sim::NullMethod::Bonferroni;
        else
            throw InputError("unknown null method '" + m + "'");
        config["method"] = m;
        const sim::ExperimentReport rep =
            sim::run_null_experiment(spec, method, stat, B, threads, corruption);
        report["config"] = config;
        report["per_alpha"] = per_alpha_json(rep);
        if (!pvalues_csv.empty()) write_pvalues_csv(pvalues_csv, rep.pvalues);
    } else if (preset == "design") {
        const sim::ExperimentReport rep =
            sim::run_design_experiment(spec, stat, B, threads, corruption);
        report["config"] = config;
        report["per_alpha"] = per_alpha_json(rep);
        if (!pvalues_csv.empty()) write_pvalues_csv(pvalues_csv, rep.pvalues);
    } else if (preset == "ablation") {
        const sim::AblationReport rep = sim::run_ablation_experiment(spec, stat, B, threads);
        report["config"] = config;
        report["weighted"] = per_alpha_json(rep.weighted);
        report["unweighted"] = per_alpha_json(rep.unweighted);
        if (!pvalues_csv.empty()) write_pvalues_csv(pvalues_csv, rep.unweighted.pvalues);
    } else if (preset == "sensitivity") {
        const std::vector<double> gamma_grid =
            cfg.value("gamma_grid", std::vector<double>{0.5, 1.0, 2.0, 3.0});
        const std::size_t n_inputs = cfg.value("n_inputs", std::size_t{200});
        config["gamma_grid"] = gamma_grid;
        config["n_inputs"] = n_inputs;
        const SensitivityReport rep =
            sim::run_sensitivity_harness(spec, stat, B, n_inputs, gamma_grid);
        report["config"] = config;
        report["alpha_grid"] = rep.alpha_grid;
        Json rows = Json::array();
        for (const SensitivityRow& r : rep.rows) {
            Json row;
            row["gamma"] = r.gamma;
            row["kl_from_uniform_of_null_pvalues"] = r.kl_from_uniform_of_null_pvalues;
            row["error_rate"] = r.error_rate;
            row["rejection_rate"] = r.rejection_rate;
            row["decision_flips"] = r.decision_flips;
            row["worst_case_decision_flips"] = r.worst_case_decision_flips;
            rows.push_back(row);
        }
        report["rows"] = rows;
    } else if (preset == "budget") {
        const std::size_t n_inputs = cfg.value("n_inputs", std::size_t{50});
        const std::size_t repeats = cfg.value("repeats", std::size_t{200});
        std::vector<std::size_t> budgets =
            cfg.value("budgets", std::vector<std::size_t>{n_inputs, 2 * n_inputs, 3 * n_inputs});
        config["n_inputs"] = n_inputs;
        config["repeats"] = repeats;
        config["budgets"] = budgets;
        report["config"] = config;
        Json rows = Json::array();
        for (std::size_t budget : budgets) {
            const sim::BudgetHarnessResult r = sim::run_budget_level(
                spec, stat, B, n_inputs, spec.alpha_grid, budget, repeats, threads);
            Json row;
            row["total_budget"] = r.total_budget;
            row["repeats"] = r.repeats;
            row["mean_estimated"] = r.mean_estimated;
            row["mean_realized"] = r.mean_realized;
            row["se_realized"] = r.se_realized;
            row["mean_chosen_alpha"] = r.mean_chosen_alpha;
            rows.push_back(row);
        }
        report["levels"] = rows;
    } else {
        throw InputError("unknown preset '" + preset +
                         "' (expected null, design, ablation, sensitivity or budget)");
    }

    if (with_timings) {
        Json t;
        t["elapsed_ms"] = timer.elapsed_ms();
        report["timings"] = t;
    }
    const std::string text = dump_report(report);
    if (out_path.empty())
        std::cout << text;
    else {
        std::ofstream out(out_path, std::ios::binary);
        if (!out) throw InputError("cannot write report to '" + out_path + "'");
        out << text;
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"certified hit shortlists for generated candidate batches"};
    app.require_subcommand(1);

    CommonOpts certify_o, design_o, baseline_o, estw_o, diag_o, budget_o;

    // certify
    auto* certify = app.add_subcommand("certify", "test whether the batch contains a hit");
    add_io_options(certify, certify_o);
    add_inference_options(certify, certify_o);
    bool exact = false;
    std::uint64_t enumeration_cap = 2'000'000;
    certify->add_flag("--exact", exact, "enumerate all subsets instead of sampling");
    certify->add_option("--enumeration-cap", enumeration_cap,
                        "max subsets for --exact before refusing")
        ->capture_default_str();

    // design
    auto* design_cmd = app.add_subcommand("design", "prune the batch to the smallest certified prefix");
    add_io_options(design_cmd, design_o);
    add_inference_options(design_cmd, design_o);

    // baseline
    auto* baseline = app.add_subcommand("baseline", "comparison procedures");
    std::string baseline_method = "bonferroni";
    double p_hat = 0.5;
    baseline->add_option("--method", baseline_method,
                         "bonferroni, certonly, unweighted or heuristic")
        ->required();
    baseline->add_option("--p-hat", p_hat, "estimated hit probability (heuristic only)");
    baseline->add_option("--pool", baseline_o.pool_path, "calibration CSV");
    baseline->add_option("--batch", baseline_o.batch_path, "candidate CSV");
    baseline->add_option("--out", baseline_o.out_path, "write the JSON report here");
    baseline->add_flag("--timings", baseline_o.with_timings, "include wall-clock timings");
    add_inference_options(baseline, baseline_o);

    // estimate-weights
    auto* estw = app.add_subcommand("estimate-weights",
                                    "fit KDE density-ratio weights and write them per row");
    add_io_options(estw, estw_o);
    add_inference_options(estw, estw_o);
    std::string weights_out = "weights.csv";
    estw->add_option("--weights-out", weights_out, "per-row weight CSV path")
        ->capture_default_str();

    // diagnose
    auto* diagnose = app.add_subcommand("diagnose", "weight-quality diagnostics");
    std::string diag_mode;
    std::vector<std::string> diag_batches;
    std::size_t top_groups = 30;
    std::vector<double> gamma_grid = {0.5, 1.0, 2.0, 3.0};
    std::vector<double> diag_alphas = {0.05, 0.1, 0.2, 0.3, 0.5};
    std::string reference_weights = "uniform";
    double t_level = 0.1;
    diagnose->add_option("--mode", diag_mode, "balance, shiftcheck, sensitivity or gap")
        ->required();
    diagnose->add_option("--pool", diag_o.pool_path, "calibration CSV")->required();
    diagnose->add_option("--batch", diag_batches,
                         "candidate CSV (sensitivity accepts several, comma separated)")
        ->delimiter(',');
    diagnose->add_option("--out", diag_o.out_path, "write the JSON report here");
    diagnose->add_flag("--timings", diag_o.with_timings, "include wall-clock timings");
    add_inference_options(diagnose, diag_o);
    diagnose->add_option("--top-groups", top_groups,
                         "groups forming the pseudo-test fold (shiftcheck)")
        ->capture_default_str();
    diagnose->add_option("--gamma", gamma_grid, "power-transform grid (sensitivity)")
        ->delimiter(',')
        ->capture_default_str();
    diagnose->add_option("--alphas", diag_alphas, "alpha grid for diagnostics")
        ->delimiter(',')
        ->capture_default_str();
    diagnose->add_option("--reference-weights", reference_weights,
                         "weight spec treated as ground truth (gap)")
        ->capture_default_str();
    diagnose->add_option("--t", t_level, "level for the gap bound")->capture_default_str();

    // budget
    auto* budget = app.add_subcommand("budget", "allocate a fixed validation budget across inputs");
    std::vector<std::string> budget_batches;
    std::vector<double> budget_alphas = {0.05, 0.1, 0.2, 0.3, 0.5};
    std::size_t total_budget = 0;
    budget->add_option("--pool", budget_o.pool_path, "calibration CSV")->required();
    budget->add_option("--batch", budget_batches, "candidate CSVs, one per input")
        ->delimiter(',')
        ->required();
    budget->add_option("--alphas", budget_alphas, "alpha grid to sweep")->delimiter(',');
    budget->add_option("--total", total_budget, "total validation budget")->required();
    budget->add_option("--out", budget_o.out_path, "write the JSON report here");
    budget->add_flag("--timings", budget_o.with_timings, "include wall-clock timings");
    add_inference_options(budget, budget_o);

    // simulate
    auto* simulate = app.add_subcommand("simulate",
                                        "synthetic experiments with known ground truth");
    std::string preset, sim_config, sim_out, sim_pvalues, sim_method = "weighted_randomized";
    std::string sim_score = "max", sim_corruption = "none";
    unsigned sim_threads = 1;
    bool sim_timings = false;
    simulate->add_option("--preset", preset, "null, design, ablation, sensitivity or budget")
        ->required();
    simulate->add_option("--config", sim_config, "JSON config overriding preset defaults");
    simulate->add_option("--out", sim_out, "write the JSON report here");
    simulate->add_option("--pvalues-csv", sim_pvalues, "also dump raw p-values as CSV");
    simulate->add_option("--threads", sim_threads, "worker count (results are identical for any)")
        ->capture_default_str();
    simulate->add_option("--method", sim_method, "null preset: p-value variant")
        ->capture_default_str();
    simulate->add_option("--score", sim_score, "conformity score")->capture_default_str();
    simulate->add_option("--corruption", sim_corruption, "predictor corruption: none, noisy, inverse")
        ->capture_default_str();
    simulate->add_flag("--timings", sim_timings, "include wall-clock timings");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitInput;
    }

    try {
        if (certify->parsed()) return run_certify(certify_o, exact, enumeration_cap);
        if (design_cmd->parsed()) return run_design(design_o);
        if (baseline->parsed()) return run_baseline(baseline_o, baseline_method, p_hat);
        if (estw->parsed()) return run_estimate_weights(estw_o, weights_out);
        if (diagnose->parsed()) {
            if (!diag_batches.empty()) diag_o.batch_path = diag_batches.front();
            return run_diagnose(diag_o, diag_mode, diag_batches, top_groups, gamma_grid,
                                diag_alphas, reference_weights, t_level);
        }
        if (budget->parsed()) return run_budget(budget_o, budget_batches, budget_alphas,
                                                total_budget);
        if (simulate->parsed())
            return run_simulate(preset, sim_config, sim_out, sim_pvalues, sim_threads, sim_method,
                                sim_score, sim_corruption, sim_timings);
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}

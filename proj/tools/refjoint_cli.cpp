// refjoint: joint-effect inference from marginal summaries and a reference panel.
//
//   refjoint estimate --summary s.tsv --panel p.tsv [--method empirical] --out run
//   refjoint psat     --summary s.tsv --panel p.tsv --select tag=rs1,t=z:4 --out run
//   refjoint simulate --config grid.cfg --out sim
//
// Every flag can also be set through REFJOINT_<FLAG> (e.g. REFJOINT_ALPHA).
// Exit status: 0 success, 1 error, 2 region not selected (psat).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "refjoint/refjoint.hpp"

namespace {

using namespace refjoint;
using nlohmann::ordered_json;

constexpr int kExitNotSelected = 2;

struct CommonArgs {
    std::string summary;
    std::string panel;
    std::string method = "empirical";
    double alpha = 0.05;
    std::string sigma2 = "estimate";
    std::optional<double> threshold_alpha;
    bool bonferroni = false;
    bool no_threshold = false;
    std::optional<double> prune;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    std::string out;
};

struct SelectArg {
    std::string tag;
    std::string rule;
};

struct SimulateArgs {
    std::string config;
    std::optional<int> reps;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::string out;
};

void add_common(CLI::App* cmd, CommonArgs& a, std::vector<std::string> methods) {
    cmd->add_option("--summary", a.summary, "marginal summary TSV (id, beta, n)")->required()->envname("REFJOINT_SUMMARY");
    cmd->add_option("--panel", a.panel, "reference panel TSV with an id header")->required()->envname("REFJOINT_PANEL");
    cmd->add_option("--method", a.method, "covariance method")
        ->check(CLI::IsMember(methods))
        ->capture_default_str()
        ->envname("REFJOINT_METHOD");
    cmd->add_option("--alpha", a.alpha, "BH level")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str()
        ->envname("REFJOINT_ALPHA");
    cmd->add_option("--sigma2", a.sigma2, "residual variance: estimate or one")
        ->check(CLI::IsMember({"estimate", "one"}))
        ->capture_default_str()
        ->envname("REFJOINT_SIGMA2");
    cmd->add_option("--threshold-alpha", a.threshold_alpha, "level for zeroing coefficients (default: --alpha)")
        ->envname("REFJOINT_THRESHOLD_ALPHA");
    cmd->add_flag("--threshold-bonferroni", a.bonferroni, "divide the threshold level by p")
        ->envname("REFJOINT_THRESHOLD_BONFERRONI");
    cmd->add_flag("--no-threshold", a.no_threshold, "plug unthresholded coefficients into the correction")
        ->envname("REFJOINT_NO_THRESHOLD");
    cmd->add_option("--prune", a.prune, "drop covariates whose panel |corr| with an earlier one exceeds this")
        ->check(CLI::Range(0.0, 1.0))
        ->envname("REFJOINT_PRUNE");
    cmd->add_option("--seed", a.seed, "recorded in the manifest")->capture_default_str()->envname("REFJOINT_SEED");
    cmd->add_option("--threads", a.threads, "threads for the V_Sigma reduction (0 = all cores)")
        ->capture_default_str()
        ->envname("REFJOINT_THREADS");
    cmd->add_option("--out", a.out, "output prefix; <out>.tsv and <out>.manifest.json (default: report on stdout)")
        ->envname("REFJOINT_OUT");
}

CovMethod parse_cov_method(const std::string& s) {
    if (s == "naive") return CovMethod::naive;
    if (s == "gaussian") return CovMethod::var_corrected_gaussian;
    if (s == "empirical") return CovMethod::var_corrected_empirical;
    if (s == "mle") return CovMethod::var_corrected_mle;
    throw InvalidArgument("unknown method '" + s + "'");
}

FitOptions fit_options(const CommonArgs& a) {
    if (!(a.alpha > 0.0 && a.alpha < 1.0)) throw InvalidArgument("--alpha must lie in (0,1)");
    FitOptions fo;
    fo.method = parse_cov_method(a.method);
    fo.sigma2.policy = a.sigma2 == "one" ? Sigma2Policy::conservative_one : Sigma2Policy::estimate;
    fo.threshold = !a.no_threshold;
    fo.threshold_rule.alpha = a.threshold_alpha.value_or(a.alpha);
    fo.threshold_rule.bonferroni = a.bonferroni;
    if (!(fo.threshold_rule.alpha > 0.0 && fo.threshold_rule.alpha < 1.0)) {
        throw InvalidArgument("--threshold-alpha must lie in (0,1)");
    }
    fo.vsigma.threads = a.threads;
    return fo;
}

struct Inputs {
    MarginalSummary summary;
    CovariateMatrix panel;
    std::vector<std::string> pruned;
};

Inputs load_inputs(const CommonArgs& a) {
    MarginalSummary s = io::read_summary(a.summary);
    CovariateMatrix panel = io::read_panel(a.panel, s.ids);
    std::vector<std::string> dropped;
    if (a.prune) {
        const auto kept = io::prune_correlated(panel, *a.prune);
        if (static_cast<Index>(kept.size()) < s.p()) {
            MarginalSummary ks;
            ks.n_o = s.n_o;
            ks.beta_m.resize(static_cast<Index>(kept.size()));
            Matrix cols(panel.n(), static_cast<Index>(kept.size()));
            std::size_t next = 0;
            for (Index j = 0; j < s.p(); ++j) {
                if (next < kept.size() && kept[next] == j) {
                    ks.beta_m(static_cast<Index>(next)) = s.beta_m(j);
                    ks.ids.push_back(s.ids[static_cast<std::size_t>(j)]);
                    cols.col(static_cast<Index>(next)) = panel.values().col(j);
                    ++next;
                } else {
                    dropped.push_back(s.ids[static_cast<std::size_t>(j)]);
                }
            }
            s = std::move(ks);
            panel = standardize(cols);
        }
    }
    return {std::move(s), std::move(panel), std::move(dropped)};
}

ordered_json common_manifest(const std::string& command, const CommonArgs& a, const Inputs& in) {
    ordered_json m;
    m["command"] = command;
    m["version"] = "0.1.0";
    m["summary"] = a.summary;
    m["panel"] = a.panel;
    m["method"] = a.method;
    m["alpha"] = a.alpha;
    m["sigma2_policy"] = a.sigma2;
    m["threshold"] = !a.no_threshold;
    m["threshold_alpha"] = a.threshold_alpha.value_or(a.alpha);
    m["threshold_bonferroni"] = a.bonferroni;
    m["prune"] = a.prune ? ordered_json(*a.prune) : ordered_json(nullptr);
    m["pruned_ids"] = in.pruned;
    m["seed"] = a.seed;
    m["threads"] = a.threads;
    m["p"] = in.summary.p();
    m["n_o"] = in.summary.n_o;
    m["n_r"] = in.panel.n();
    return m;
}

// Writes the report to <out>.tsv (or stdout) and the manifest next to it.
void emit(const std::string& out, const std::string& report, const ordered_json& manifest) {
    if (out.empty()) {
        std::cout << report;
        return;
    }
    std::ofstream r(out + ".tsv", std::ios::binary);
    if (!r) throw InvalidArgument("cannot write '" + out + ".tsv'");
    r << report;
    std::ofstream m(out + ".manifest.json", std::ios::binary);
    if (!m) throw InvalidArgument("cannot write '" + out + ".manifest.json'");
    m << manifest.dump(2) << '\n';
}

std::string bool_str(bool b) { return b ? "1" : "0"; }

int run_estimate(const CommonArgs& a) {
    const FitOptions fo = fit_options(a);
    const Inputs in = load_inputs(a);
    const JointFit fit = fit_joint(in.summary, in.panel, fo);
    const JointEstimate& est = fit.estimate;

    const TestReport naive = wald_tests(est.beta_mc, fit.naive, a.alpha, CovMethod::naive, in.summary.ids);
    const TestReport corr = wald_tests(est.beta_mc, est.sigma_mc, a.alpha, est.method, in.summary.ids);

    std::string rep = "id\tbeta_mc\tse_naive\tse_corrected\tp_naive\tp_corrected\tp_adjusted\trejected\n";
    for (Index i = 0; i < est.beta_mc.size(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        rep += corr.ids[k] + '\t' + io::fmt(est.beta_mc(i)) + '\t' + io::fmt(naive.se(i)) + '\t' +
               io::fmt(corr.se(i)) + '\t' + io::fmt(naive.pvalue[k]) + '\t' + io::fmt(corr.pvalue[k]) + '\t' +
               io::fmt(corr.p_adjusted[k]) + '\t' + bool_str(corr.rejected[k]) + '\n';
    }

    ordered_json m = common_manifest("estimate", a, in);
    m["sigma2"] = est.sigma2;
    m["warnings"] = est.warnings;
    emit(a.out, rep, m);
    for (const auto& w : est.warnings) std::cerr << "refjoint: warning: " << w << '\n';
    return 0;
}

// tag=<id>,t=<rule>. The rule is either a bound on S = (marginal tag
// coefficient)^2, or z:<value>, meaning |z_tag| > value with unit residual
// variance, i.e. S > value^2 / n.
SelectionEvent parse_select(const SelectArg& sel, const MarginalSummary& s) {
    Index tag = -1;
    for (std::size_t j = 0; j < s.ids.size(); ++j)
        if (s.ids[j] == sel.tag) tag = static_cast<Index>(j);
    if (tag < 0) throw IdMismatch("selection tag '" + sel.tag + "' is not a summary id");
    double t = 0.0;
    if (sel.rule.rfind("z:", 0) == 0) {
        const double z = io::parse_double(sel.rule.substr(2), "--select");
        t = z * z / static_cast<double>(s.n_o);
    } else {
        t = io::parse_double(sel.rule, "--select");
    }
    return SelectionEvent::tag(tag, t);
}

SelectArg split_select(const std::string& spec) {
    SelectArg out;
    for (const auto& part : io::split(spec, ',')) {
        const auto eq = part.find('=');
        if (eq == std::string::npos) throw InvalidArgument("--select expects tag=<id>,t=<rule>");
        const auto key = io::trim(part.substr(0, eq));
        const auto value = io::trim(part.substr(eq + 1));
        if (key == "tag") out.tag = value;
        else if (key == "t") out.rule = value;
        else throw InvalidArgument("--select: unknown key '" + key + "'");
    }
    if (out.tag.empty() || out.rule.empty()) throw InvalidArgument("--select expects tag=<id>,t=<rule>");
    return out;
}

int run_psat(const CommonArgs& a, const std::string& select_spec) {
    const SelectArg sel = split_select(select_spec);
    PsatOptions po;
    po.fit = fit_options(a);
    po.method = po.fit.method;
    const Inputs in = load_inputs(a);
    const SelectionEvent event = parse_select(sel, in.summary);
    const PsatResult res = psat_pipeline(in.summary, in.panel, event, a.alpha, po);

    ordered_json m = common_manifest("psat", a, in);
    m["select"] = select_spec;
    m["selected"] = res.selected;
    m["statistic"] = res.statistic;
    m["selection_threshold"] = res.threshold;

    std::string rep = "# selected\t" + bool_str(res.selected) + "\tS=" + io::fmt(res.statistic) +
                      "\tt=" + io::fmt(res.threshold) + '\n';
    if (!res.selected) {
        rep += "# not selected: no inference reported\n";
        m["warnings"] = res.warnings;
        emit(a.out, rep, m);
        std::cerr << "refjoint: region not selected (S = " << io::fmt(res.statistic)
                  << ", t = " << io::fmt(res.threshold) << ")\n";
        return kExitNotSelected;
    }

    const JointFit& fit = *res.fit;
    const TestReport naive = wald_tests(res.beta_mc, fit.naive, a.alpha, CovMethod::naive, in.summary.ids);
    const TestReport& unadj = *res.unadjusted;
    const TestReport& cond = *res.conditional;
    rep += "id\tbeta_mc\tbeta_tilde\tse_naive\tse_corrected\tp_naive\tp_corrected\tp_conditional\tp_adjusted\trejected\n";
    for (Index i = 0; i < res.beta_mc.size(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        const std::string tilde = res.mle ? io::fmt(res.mle->beta_tilde(i)) : "NA";
        rep += cond.ids[k] + '\t' + io::fmt(res.beta_mc(i)) + '\t' + tilde + '\t' + io::fmt(naive.se(i)) + '\t' +
               io::fmt(cond.se(i)) + '\t' + io::fmt(naive.pvalue[k]) + '\t' + io::fmt(unadj.pvalue[k]) + '\t' +
               io::fmt(cond.pvalue[k]) + '\t' + io::fmt(cond.p_adjusted[k]) + '\t' + bool_str(cond.rejected[k]) +
               '\n';
    }
    m["sigma2"] = fit.estimate.sigma2;
    if (res.mle) {
        m["mle_converged"] = res.mle->converged;
        m["mle_iterations"] = res.mle->iterations;
    }
    m["warnings"] = res.warnings;
    emit(a.out, rep, m);
    for (const auto& w : res.warnings) std::cerr << "refjoint: warning: " << w << '\n';
    return 0;
}

int run_simulate(const SimulateArgs& a) {
    auto scenarios = io::read_scenarios(a.config);
    std::string results, longform;
    {
        std::ostringstream r, l;
        io::write_scenario_header(r);
        io::write_long_header(l);
        ordered_json m;
        m["command"] = "simulate";
        m["version"] = "0.1.0";
        m["config"] = a.config;
        m["scenarios"] = ordered_json::array();
        for (auto& cfg : scenarios) {
            if (a.reps) cfg.reps = *a.reps;
            if (a.seed) cfg.seed = *a.seed;
            if (a.threads) cfg.threads = *a.threads;
            validate(cfg);
            const ScenarioResult res = run_scenario(cfg);
            io::write_scenario_rows(r, res);
            io::write_long_rows(l, res);
            m["scenarios"].push_back({{"name", res.name},
                                      {"reps", res.reps},
                                      {"seed", cfg.seed},
                                      {"threads", cfg.threads},
                                      {"failed_reps", res.failed_reps},
                                      {"total_draws", res.total_draws},
                                      {"selection_rate", res.selection_rate}});
        }
        results = r.str();
        longform = l.str();
        if (a.out.empty()) {
            std::cout << results;
            return 0;
        }
        std::ofstream(a.out + ".results.tsv", std::ios::binary) << results;
        std::ofstream(a.out + ".long.tsv", std::ios::binary) << longform;
        std::ofstream(a.out + ".manifest.json", std::ios::binary) << m.dump(2) << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Joint-effect inference from marginal summaries and a reference panel", "refjoint"};
    app.require_subcommand(1);

    CommonArgs est_args;
    auto* est = app.add_subcommand("estimate", "joint estimates with corrected covariance and BH tests");
    add_common(est, est_args, {"naive", "gaussian", "empirical"});

    CommonArgs psat_args;
    psat_args.method = "mle";
    std::string select_spec;
    auto* psat = app.add_subcommand("psat", "selection-adjusted tests for a region chosen by a tag screen");
    add_common(psat, psat_args, {"naive", "gaussian", "empirical", "mle"});
    psat->add_option("--select", select_spec, "tag=<id>,t=<bound on S> or tag=<id>,t=z:<|z| bound>")
        ->required()
        ->envname("REFJOINT_SELECT");

    SimulateArgs sim_args;
    auto* sim = app.add_subcommand("simulate", "run simulation scenarios from a config file");
    sim->add_option("--config", sim_args.config, "scenario or grid file")->required()->envname("REFJOINT_CONFIG");
    sim->add_option("--reps", sim_args.reps, "override reps for every scenario")->envname("REFJOINT_REPS");
    sim->add_option("--seed", sim_args.seed, "override the seed for every scenario")->envname("REFJOINT_SEED");
    sim->add_option("--threads", sim_args.threads, "worker threads (0 = all cores)")->envname("REFJOINT_THREADS");
    sim->add_option("--out", sim_args.out, "output prefix (default: results on stdout)")->envname("REFJOINT_OUT");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*est) return run_estimate(est_args);
        if (*psat) return run_psat(psat_args, select_spec);
        if (*sim) return run_simulate(sim_args);
    } catch (const Error& e) {
        std::cerr << "refjoint: error[" << e.kind() << "]: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "refjoint: error[Internal]: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

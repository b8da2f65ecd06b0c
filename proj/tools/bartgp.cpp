// bartgp: BART prior correlation and GP regression from the command line.

#include <CLI11.hpp>

#include "commands.hpp"

namespace {

using namespace bartgp;
using namespace bartgp::cli;

struct Common {
    std::uint64_t seed = 1;
    std::string out;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--seed", c.seed, "random seed")->capture_default_str();
    sub->add_option("-o,--out", c.out, "output file (default stdout)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"BART prior correlation kernel and GP regression"};
    app.require_subcommand(1);

    // kernel
    Common kc;
    KernelOptions ko;
    auto* kernel = app.add_subcommand("kernel", "evaluate the correlation of one pair");
    add_common(kernel, kc);
    kernel->add_option("--alpha", ko.alpha)->capture_default_str();
    kernel->add_option("--beta", ko.beta)->capture_default_str();
    kernel->add_option("--counts", ko.counts, "per-axis n-,n0,n+ (repeat per axis)");
    kernel->add_option("--weights", ko.weights, "axis weights")->delimiter(',');
    kernel->add_option("--x", ko.x, "first point")->delimiter(',');
    kernel->add_option("--xp", ko.xp, "second point")->delimiter(',');
    kernel->add_option("--grid-n", ko.grid_n, "uniform cutpoints per axis for --x/--xp")->capture_default_str();
    kernel->add_flag("--same-point", ko.same_point, "evaluate at coincident points");
    kernel->add_flag("--root-split", ko.root_split, "force a split at the root (P_0 = 1)");
    kernel->add_option("--variant", ko.variant, "reference|exact|truncated|pseudo|depth1|depth2|bounds|all")
        ->capture_default_str();
    kernel->add_flag_callback("--bounds", [&] { ko.variant = "bounds"; }, "lower and upper bound");
    kernel->add_option("--depth", ko.depth, "truncation depth D")->capture_default_str();
    kernel->add_option("--gamma", ko.gamma, "leaf interpolation")->capture_default_str();
    kernel->add_option("--D0", ko.base_depth, "base depth of the reset chain")->capture_default_str();
    kernel->add_option("--r", ko.resets, "number of resets")->capture_default_str();
    kernel->add_option("--budget", ko.budget, "recursion call budget")->capture_default_str();
    kernel->add_option("--comparison", ko.comparison, "laplace|shifted_laplace|power");
    kernel->add_option("--eta", ko.eta)->capture_default_str();
    kernel->add_option("--q", ko.q)->capture_default_str();
    kernel->add_flag("--json", ko.as_json, "JSON output");

    // plotcov
    Common pc;
    PlotcovOptions po;
    auto* plotcov = app.add_subcommand("plotcov", "sections of the correlation function (CSV)");
    add_common(plotcov, pc);
    plotcov->add_option("--alpha", po.alpha)->capture_default_str();
    plotcov->add_option("--beta", po.beta)->capture_default_str();
    plotcov->add_option("--n", po.grid_n, "evenly spaced cutpoints in (0, 1)")->capture_default_str();
    plotcov->add_option("--x", po.anchors, "section anchors")->delimiter(',');
    plotcov->add_option("--steps", po.steps)->capture_default_str();
    plotcov->add_option("--laplace-eta", po.laplace_eta, "add shifted Laplace columns")->delimiter(',');

    // check-prior
    Common cc;
    CheckPriorOptions co;
    auto* check = app.add_subcommand("check-prior", "compare tree-prior sample covariance with the kernel");
    add_common(check, cc);
    check->add_option("--n", co.n_points)->capture_default_str();
    check->add_option("--p", co.p)->capture_default_str();
    check->add_option("--m", co.m_trees, "trees per draw")->capture_default_str();
    check->add_option("--samples", co.samples)->capture_default_str();
    check->add_option("--level", co.level)->capture_default_str();
    check->add_option("--alpha", co.alpha)->capture_default_str();
    check->add_option("--beta", co.beta)->capture_default_str();
    check->add_flag("--matrices", co.matrices, "include the covariance matrices");

    // accuracy
    Common ac;
    AccuracyConfig acfg;
    auto* accuracy = app.add_subcommand("accuracy", "error sweep of the bounded estimators (CSV)");
    add_common(accuracy, ac);
    accuracy->add_option("--alpha", acfg.alphas)->delimiter(',');
    accuracy->add_option("--beta", acfg.betas)->delimiter(',');
    accuracy->add_option("--p", acfg.dims)->delimiter(',');
    accuracy->add_option("--D0", acfg.base_depths)->delimiter(',');
    accuracy->add_option("--r", acfg.resets)->delimiter(',');
    accuracy->add_option("--pairs", acfg.n_pairs)->capture_default_str();
    accuracy->add_option("--splits", acfg.splits_per_axis, "cutpoints per axis")->capture_default_str();
    accuracy->add_option("--budget", acfg.pair_budget, "recursion budget per pair")->capture_default_str();
    bool no_root_split = false;
    accuracy->add_flag("--no-root-split", no_root_split, "keep P_0 = alpha");

    // friedman
    Common fc;
    FriedmanOptions fo;
    auto* friedman = app.add_subcommand("friedman", "synthetic Friedman-style regression data (CSV)");
    add_common(friedman, fc);
    friedman->add_option("--n", fo.n)->capture_default_str();
    friedman->add_option("--p", fo.p, "predictors, >= 5")->capture_default_str();
    friedman->add_option("--sigma", fo.sigma)->capture_default_str();
    bool no_factor = false;
    friedman->add_flag("--no-factor", no_factor, "omit the categorical column");

    // fit / predict
    FitCommandOptions go;
    Common gc;
    std::string transform = "none";
    bool no_standardize = false, fixed_k = false;
    auto add_fit = [&](CLI::App* sub) {
        add_common(sub, gc);
        sub->add_option("--data", go.data, "CSV with a header row")->required();
        sub->add_option("--outcome", go.outcome, "outcome column")->capture_default_str();
        sub->add_option("--split", go.split, "train:test ratio")->capture_default_str();
        sub->add_option("--transform", transform, "none|log|sqrt")->capture_default_str();
        sub->add_flag("--no-standardize", no_standardize);
        sub->add_option("--nu", go.nu)->capture_default_str();
        sub->add_option("--q", go.q)->capture_default_str();
        sub->add_flag("--fixed-k", fixed_k, "do not tune k");
        sub->add_flag("--root-split", go.root_split, "force a split at the root (P_0 = 1)");
        sub->add_option("--max-iter", go.max_iter)->capture_default_str();
    };
    auto* fit = app.add_subcommand("fit", "MAP hyperparameters on the training split (JSON)");
    add_fit(fit);
    auto* pred = app.add_subcommand("predict", "posterior prediction on the test split (JSON + CSV)");
    add_fit(pred);
    pred->add_option("--params", go.params, "JSON written by fit");
    pred->add_option("--sigma-draws", go.sigma_draws)->capture_default_str();
    pred->add_option("--f-per-sigma", go.f_per_sigma)->capture_default_str();
    pred->add_option("--predictions", go.predictions, "per-row predictions CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : usage;
    }

    try {
        if (*kernel) {
            int code = ok;
            with_output(kc.out, [&](std::ostream& o) { code = cmd_kernel(ko, o); });
            return code;
        }
        if (*plotcov) {
            with_output(pc.out, [&](std::ostream& o) { cmd_plotcov(po, o); });
            return ok;
        }
        if (*check) {
            co.seed = cc.seed;
            int code = ok;
            with_output(cc.out, [&](std::ostream& o) { code = cmd_check_prior(co, o); });
            return code;
        }
        if (*accuracy) {
            acfg.seed = ac.seed;
            acfg.root_split = !no_root_split;
            int code = ok;
            with_output(ac.out, [&](std::ostream& o) { code = cmd_accuracy(acfg, o, std::cerr); });
            return code;
        }
        if (*friedman) {
            fo.seed = fc.seed;
            fo.categorical = !no_factor;
            with_output(fc.out, [&](std::ostream& o) { write_table(o, friedman_table(fo)); });
            return ok;
        }
        go.seed = gc.seed;
        go.transform = transform;
        go.standardize = !no_standardize;
        go.tune_k = !fixed_k;
        int code = ok;
        with_output(gc.out, [&](std::ostream& o) { code = *fit ? cmd_fit(go, o) : cmd_predict(go, o); });
        return code;
    } catch (const BudgetExceeded& e) {
        std::cerr << "bartgp: budget exceeded: " << e.what() << '\n';
        return budget;
    } catch (const DomainError& e) {
        std::cerr << "bartgp: " << e.what() << '\n';
        return usage;
    } catch (const IoError& e) {
        std::cerr << "bartgp: " << e.what() << '\n';
        return usage;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "bartgp: bad JSON input: " << e.what() << '\n';
        return usage;
    } catch (const NumericalError& e) {
        std::cerr << "bartgp: numerical failure: " << e.what() << '\n';
        return numerical;
    }
}

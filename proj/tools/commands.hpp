#pragma once

// Command implementations behind the bartgp executable. Each command takes a
// resolved option record, writes its artifact to a stream and returns an exit
// code; argument parsing lives in bartgp.cpp.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bartgp/accuracy.hpp"
#include "bartgp/comparison.hpp"
#include "bartgp/csv.hpp"
#include "bartgp/gp.hpp"
#include "bartgp/kernel.hpp"
#include "bartgp/rng.hpp"
#include "bartgp/treeprior.hpp"

namespace bartgp::cli {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

enum Exit : int { ok = 0, check_failed = 1, usage = 2, budget = 3, numerical = 4 };

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json envelope(const std::string& command, const json& config) {
    json j;
    j["schema_version"] = kSchemaVersion;
    j["command"] = command;
    j["config"] = config;
    return j;
}

/// Runs fn on the named file, or on stdout for "" and "-".
template <class Fn>
void with_output(const std::string& path, Fn&& fn) {
    if (path.empty() || path == "-") {
        fn(std::cout);
        std::cout.flush();
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    fn(out);
    if (!out) throw IoError("write to '" + path + "' failed");
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

/// First line of every CSV artifact: '#' then the resolved config as JSON.
inline void csv_preamble(std::ostream& out, const std::string& command, const json& config) {
    out << "# " << envelope(command, config).dump() << '\n';
}

inline std::string fmt(double v) {
    if (!std::isfinite(v)) return "NA";
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}

// --------------------------------------------------------------------------
// kernel

struct KernelOptions {
    double alpha = 0.95, beta = 2.0;
    std::vector<std::string> counts;  // "n-,n0,n+" per axis
    std::vector<double> weights;
    std::vector<double> x, xp;
    int grid_n = 100;  // uniform cutpoints per axis for --x/--xp
    bool same_point = false;
    bool root_split = false;
    std::string variant = "reference";
    int depth = 2;
    double gamma = 1.0;
    int base_depth = 2, resets = 5;
    long long budget = kDefaultRecursionBudget;
    std::string comparison;  // laplace | shifted_laplace | power
    double eta = 1.0, q = 1.0;
    bool as_json = false;
};

inline SplitCounts parse_counts(const std::vector<std::string>& specs) {
    std::vector<int> lo, mid, hi;
    for (const auto& s : specs) {
        std::vector<int> v;
        std::stringstream ss(s);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            std::size_t used = 0;
            int n = 0;
            try {
                n = std::stoi(tok, &used);
            } catch (const std::exception&) {
                used = std::string::npos;
            }
            if (used != tok.size()) throw DomainError("--counts: '" + s + "' is not three integers");
            v.push_back(n);
        }
        if (v.size() != 3) throw DomainError("--counts: '" + s + "' is not three integers n-,n0,n+");
        lo.push_back(v[0]);
        mid.push_back(v[1]);
        hi.push_back(v[2]);
    }
    return {lo, mid, hi};
}

inline json kernel_config(const KernelOptions& o) {
    json c;
    c["alpha"] = o.alpha;
    c["beta"] = o.beta;
    c["counts"] = o.counts;
    c["weights"] = o.weights;
    c["x"] = o.x;
    c["xp"] = o.xp;
    c["grid_n"] = o.grid_n;
    c["same_point"] = o.same_point;
    c["root_split"] = o.root_split;
    c["variant"] = o.variant;
    c["depth"] = o.depth;
    c["gamma"] = o.gamma;
    c["D0"] = o.base_depth;
    c["r"] = o.resets;
    c["budget"] = o.budget;
    c["comparison"] = o.comparison;
    c["eta"] = o.eta;
    c["q"] = o.q;
    return c;
}

inline int cmd_kernel(KernelOptions o, std::ostream& out) {
    if (!o.comparison.empty()) {
        detail::require(!o.x.empty() && o.x.size() == o.xp.size(), "comparison kernels need --x and --xp of equal length");
        ComparisonKernel k;
        if (o.comparison == "laplace") k = LaplaceKernel{o.eta};
        else if (o.comparison == "shifted_laplace") k = ShiftedLaplaceKernel{o.eta, o.alpha};
        else if (o.comparison == "power") k = PowerKernel{o.q, o.alpha};
        else throw DomainError("unknown comparison kernel '" + o.comparison + "'");
        const double v = comparison_kernel(o.x, o.xp, k);
        if (!o.as_json) {
            out << fmt(v) << '\n';
            return ok;
        }
        auto j = envelope("kernel", kernel_config(o));
        j["result"] = {{"kernel", kernel_name(k)}, {"value", v}, {"psd_proven", psd_proven(k)}};
        out << j.dump(2) << '\n';
        return ok;
    }

    SplitCounts counts;
    if (!o.x.empty() || !o.xp.empty()) {
        detail::require(o.counts.empty(), "give either --counts or --x/--xp, not both");
        detail::require(o.x.size() == o.xp.size(), "--x and --xp need the same length");
        SplitGrid grid(std::vector<std::vector<double>>(o.x.size(), uniform_cutpoints(UniformGrid{o.grid_n, 0, 1})));
        counts = count_splits(grid, std::span<const double>(o.x), std::span<const double>(o.xp));
    } else if (!o.counts.empty()) {
        counts = parse_counts(o.counts);
    } else {
        counts = SplitCounts({2}, {5}, {3});
    }
    if (o.same_point)
        for (std::size_t i = 0; i < counts.dim(); ++i) {
            counts.below[i] += counts.between[i];
            counts.between[i] = 0;
        }
    const AxisWeights w = o.weights.empty() ? AxisWeights::uniform(counts.dim()) : AxisWeights(o.weights);
    DepthSchedule sched(o.alpha, o.beta);
    if (o.root_split) sched = sched.with_root_split();

    json result;
    const auto add = [&](const std::string& name, auto&& f) { result[name] = f(); };
    const std::string& v = o.variant;
    const bool all = v == "all";
    if (v == "reference" || all) add("reference", [&] { return reference_corr(counts, w, sched); });
    if (v == "exact" || all) add("exact", [&] { return exact_corr(counts, w, sched, 0, o.budget); });
    if (v == "truncated" || all)
        add("truncated", [&] { return fast_truncated_corr(counts, w, sched, 0, o.depth, o.gamma, o.budget); });
    if (v == "pseudo" || all)
        add("pseudo", [&] {
            return fast_pseudo_recursive_corr(counts, w, sched, 0, TruncationSpec::periodic(o.base_depth, o.resets, o.gamma),
                                              o.budget);
        });
    if (v == "depth1" || all) add("depth1", [&] { return depth1_closed(counts, w, sched, 0, 1.0); });
    if (v == "depth2" || all) add("depth2", [&] { return depth2_closed(counts, w, sched, 0, o.gamma); });
    if (v == "bounds" || all) {
        const auto b = bound_pair(counts, w, sched, o.base_depth, o.resets, o.budget);
        result["bounds"] = {{"lower", b.lower}, {"upper", b.upper}, {"width", b.width()}};
    }
    if (result.empty()) throw DomainError("unknown kernel variant '" + v + "'");

    if (!o.as_json && result.size() == 1 && result.begin()->is_number()) {
        out << fmt(result.begin()->get<double>()) << '\n';
        return ok;
    }
    auto j = envelope("kernel", kernel_config(o));
    j["counts"] = {{"below", counts.below}, {"between", counts.between}, {"above", counts.above}};
    j["result"] = result;
    out << j.dump(2) << '\n';
    return ok;
}

// --------------------------------------------------------------------------
// plotcov

struct PlotcovOptions {
    double alpha = 0.95, beta = 2.0;
    int grid_n = 100;
    std::vector<double> anchors{0.0};
    int steps = 101;
    std::vector<double> laplace_eta;  // extra shifted-Laplace columns
};

struct PlotcovRow {
    double x = 0, xp = 0, k = 0;
    std::vector<double> comparison;
};

/// Sections k(x, .) of the reference kernel in one dimension.
inline std::vector<PlotcovRow> plotcov_rows(const PlotcovOptions& o) {
    detail::require(o.steps >= 2, "plotcov: need at least two steps");
    detail::require(o.grid_n >= 1, "plotcov: need at least one cutpoint");
    const SplitGrid grid(std::vector<std::vector<double>>{uniform_cutpoints(UniformGrid{o.grid_n, 0, 1})});
    const DepthSchedule sched(o.alpha, o.beta);
    const auto w = AxisWeights::uniform(1);
    std::vector<PlotcovRow> rows;
    for (double a : o.anchors) {
        detail::require(a >= 0 && a <= 1, "plotcov: anchors must lie in [0, 1]");
        for (int j = 0; j < o.steps; ++j) {
            const double xp = static_cast<double>(j) / (o.steps - 1);
            PlotcovRow r{a, xp, reference_corr(count_splits(grid, std::span<const double>(&a, 1),
                                                             std::span<const double>(&xp, 1)),
                                                w, sched),
                         {}};
            for (double eta : o.laplace_eta)
                r.comparison.push_back(comparison_kernel(std::span<const double>(&a, 1), std::span<const double>(&xp, 1),
                                                         ShiftedLaplaceKernel{eta, o.alpha}));
            rows.push_back(std::move(r));
        }
    }
    return rows;
}

inline int cmd_plotcov(const PlotcovOptions& o, std::ostream& out) {
    const auto rows = plotcov_rows(o);
    csv_preamble(out, "plotcov",
                 {{"alpha", o.alpha}, {"beta", o.beta}, {"grid_n", o.grid_n}, {"anchors", o.anchors}, {"steps", o.steps},
                  {"laplace_eta", o.laplace_eta}});
    out << "x,xp,k";
    for (double eta : o.laplace_eta) out << ",shifted_laplace_" << fmt(eta);
    out << '\n';
    for (const auto& r : rows) {
        out << fmt(r.x) << ',' << fmt(r.xp) << ',' << fmt(r.k);
        for (double c : r.comparison) out << ',' << fmt(c);
        out << '\n';
    }
    return ok;
}

// --------------------------------------------------------------------------
// check-prior

struct CheckPriorOptions {
    int n_points = 20, p = 2;
    int m_trees = 200;
    long samples = 50'000;
    double level = 0.01;
    double alpha = 0.95, beta = 2.0;
    std::uint64_t seed = 1;
    bool matrices = false;
};

inline Eigen::MatrixXd uniform_points(int n, int p, std::uint64_t seed, std::uint64_t key) {
    Stream rng(seed, key);
    Eigen::MatrixXd X(n, p);
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        for (Eigen::Index j = 0; j < X.cols(); ++j) X(i, j) = rng.uniform();
    return X;
}

inline json matrix_json(const Eigen::MatrixXd& M) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        json r = json::array();
        for (Eigen::Index j = 0; j < M.cols(); ++j) r.push_back(number(M(i, j)));
        rows.push_back(r);
    }
    return rows;
}

inline int cmd_check_prior(const CheckPriorOptions& o, std::ostream& out) {
    detail::require(o.n_points >= 2 && o.p >= 1, "check-prior: need n >= 2 and p >= 1");
    const auto X = uniform_points(o.n_points, o.p, o.seed, 0xc4ec);
    const auto grid = build_grid(X, MidpointGrid{});
    CovarianceCheckConfig cfg;
    cfg.n_samples = o.samples;
    cfg.m_trees = o.m_trees;
    cfg.level = o.level;
    cfg.seed = o.seed;
    const auto r = covariance_check(X, grid, DepthSchedule(o.alpha, o.beta), AxisWeights::uniform(static_cast<std::size_t>(o.p)), cfg);

    auto j = envelope("check-prior", {{"n_points", o.n_points},
                                      {"p", o.p},
                                      {"m_trees", o.m_trees},
                                      {"samples", o.samples},
                                      {"level", o.level},
                                      {"alpha", o.alpha},
                                      {"beta", o.beta},
                                      {"seed", o.seed},
                                      {"grid", "midpoints"},
                                      {"matrices", o.matrices}});
    const Eigen::Index n = X.rows();
    Eigen::Index wi = 0, wj = 0;
    double worst = -1;
    for (Eigen::Index a = 0; a < n; ++a)
        for (Eigen::Index b = a; b < n; ++b) {
            const double z = std::abs(r.sample_cov(a, b) - r.kernel_cov(a, b)) / r.mc_std(a, b);
            if (z > worst) {
                worst = z;
                wi = a;
                wj = b;
            }
        }
    j["result"] = {{"max_z", r.max_z},
                   {"threshold", r.threshold},
                   {"tests", n * (n + 1) / 2},
                   {"passed", r.passed()},
                   {"worst_entry", {wi, wj}},
                   {"kernel_fallbacks", r.kernel_fallbacks}};
    if (o.matrices) {
        j["points"] = matrix_json(X);
        j["sample_cov"] = matrix_json(r.sample_cov);
        j["kernel_cov"] = matrix_json(r.kernel_cov);
        j["mc_std"] = matrix_json(r.mc_std);
    }
    out << j.dump(2) << '\n';
    return r.passed() ? ok : check_failed;
}

// --------------------------------------------------------------------------
// accuracy

struct AccuracyCheck {
    std::string what;
    bool passed = true;
};

/// Acceptance targets for the default-hyperparameter rows.
inline std::vector<AccuracyCheck> accuracy_checks(const std::vector<AccuracyRow>& rows) {
    std::vector<AccuracyCheck> checks;
    for (const auto& r : rows) {
        const std::string tag = "alpha=" + fmt(r.alpha) + " beta=" + fmt(r.beta) + " p=" + std::to_string(r.p) +
                                " D0=" + std::to_string(r.base_depth) + " r=" + std::to_string(r.resets);
        checks.push_back({tag + ": nesting violations " + std::to_string(r.nesting_violations),
                          r.nesting_violations == 0});
        if (r.alpha == 0.95 && r.beta == 2.0 && r.base_depth == 2) {
            double limit = 0;
            if (r.p == 1) limit = 0.0065 * 1.5;
            if (r.p == 10) limit = 0.0005 * 2;
            if (limit > 0)
                checks.push_back(
                    {tag + ": max error " + fmt(r.max_error) + " <= " + fmt(limit), r.max_error <= limit});
        }
    }
    return checks;
}

inline json accuracy_config(const AccuracyConfig& c) {
    return {{"alphas", c.alphas},   {"betas", c.betas},           {"dims", c.dims},
            {"D0", c.base_depths},  {"r", c.resets},              {"pairs", c.n_pairs},
            {"splits_per_axis", c.splits_per_axis}, {"root_split", c.root_split}, {"seed", c.seed},
            {"pair_budget", c.pair_budget}};
}

inline int cmd_accuracy(const AccuracyConfig& cfg, std::ostream& out, std::ostream& log) {
    const auto rows = run_accuracy_sweep(cfg);
    csv_preamble(out, "accuracy", accuracy_config(cfg));
    write_accuracy_csv(out, rows);
    bool all = true;
    for (const auto& c : accuracy_checks(rows)) {
        log << (c.passed ? "PASS " : "FAIL ") << c.what << '\n';
        all = all && c.passed;
    }
    return all ? ok : check_failed;
}

// --------------------------------------------------------------------------
// synthetic data

struct FriedmanOptions {
    int n = 300;
    int p = 10;  // first five predictors carry signal
    double sigma = 1.0;
    bool categorical = true;
    std::uint64_t seed = 1;
};

/// 10 sin(pi x1 x2) + 20 (x3 - 1/2)^2 + 10 x4 + 5 x5 + N(0, sigma^2), plus an
/// optional three-level factor with offsets 0, +2, -2.
inline CsvTable friedman_table(const FriedmanOptions& o) {
    detail::require(o.n >= 1 && o.p >= 5, "friedman: need n >= 1 and p >= 5");
    detail::require(o.sigma >= 0, "friedman: sigma must be >= 0");
    Stream rng(o.seed, 0xf71e);
    std::normal_distribution<double> normal;
    CsvTable t;
    for (int j = 1; j <= o.p; ++j) t.header.push_back("x" + std::to_string(j));
    if (o.categorical) t.header.push_back("g");
    t.header.push_back("y");
    const char* levels[] = {"a", "b", "c"};
    const double offsets[] = {0.0, 2.0, -2.0};
    for (int i = 0; i < o.n; ++i) {
        std::vector<double> x(static_cast<std::size_t>(o.p));
        for (auto& v : x) v = rng.uniform();
        double y = 10 * std::sin(std::numbers::pi * x[0] * x[1]) + 20 * (x[2] - 0.5) * (x[2] - 0.5) + 10 * x[3] + 5 * x[4];
        std::vector<std::string> row;
        for (double v : x) row.push_back(fmt(v));
        if (o.categorical) {
            const auto g = rng.below(3);
            y += offsets[g];
            row.emplace_back(levels[g]);
        }
        y += o.sigma * normal(rng);
        row.push_back(fmt(y));
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline void write_table(std::ostream& out, const CsvTable& t) {
    for (std::size_t c = 0; c < t.header.size(); ++c) out << (c ? "," : "") << csv_field(t.header[c]);
    out << '\n';
    for (const auto& r : t.rows) {
        for (std::size_t c = 0; c < r.size(); ++c) out << (c ? "," : "") << csv_field(r[c]);
        out << '\n';
    }
}

// --------------------------------------------------------------------------
// fit / predict

struct FitCommandOptions {
    std::string data;
    std::string outcome = "y";
    double split = 5.0;  // train:test ratio
    std::uint64_t seed = 1;
    bool standardize = true;
    std::string transform = "none";  // none | log | sqrt
    double nu = 3.0, q = 0.9;
    bool tune_k = true;
    bool root_split = false;
    int max_iter = 200;
    // predict only
    std::string params;  // JSON written by fit; fit again when empty
    int sigma_draws = 1000;
    int f_per_sigma = 20;
    std::string predictions;
};

struct PreparedData {
    Dataset all;
    std::vector<Eigen::Index> train, test;
    GpData gp;
    Eigen::MatrixXd X_test;
    Eigen::VectorXd y_test;  // model scale
    double y_shift = 0, y_scale = 1;
};

inline double forward_transform(const std::string& t, double v) {
    if (t == "none") return v;
    if (t == "log") {
        detail::require(v > 0, "log transform needs a positive outcome");
        return std::log(v);
    }
    if (t == "sqrt") {
        detail::require(v >= 0, "sqrt transform needs a nonnegative outcome");
        return std::sqrt(v);
    }
    throw DomainError("unknown transform '" + t + "'");
}

inline double inverse_transform(const std::string& t, double v) {
    if (t == "log") return std::exp(v);
    if (t == "sqrt") return v * v;
    return v;
}

inline Eigen::MatrixXd take_rows(const Eigen::MatrixXd& X, const std::vector<Eigen::Index>& idx) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), X.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(idx[i]);
    return out;
}

inline PreparedData prepare(const FitCommandOptions& o) {
    detail::require(o.split > 0, "--split must be > 0");
    std::istringstream in(read_file(o.data));
    PreparedData d;
    d.all = to_dataset(read_csv(in), o.outcome);
    const Eigen::Index n = d.all.X.rows();
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    Stream rng(o.seed, 0x5917);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) / (o.split + 1)));
    detail::require(n_test < perm.size(), "split leaves no training data");
    d.test.assign(perm.begin(), perm.begin() + static_cast<long>(n_test));
    d.train.assign(perm.begin() + static_cast<long>(n_test), perm.end());
    std::sort(d.test.begin(), d.test.end());
    std::sort(d.train.begin(), d.train.end());

    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = forward_transform(o.transform, d.all.y(i));
    Eigen::VectorXd y_train(static_cast<Eigen::Index>(d.train.size()));
    for (std::size_t i = 0; i < d.train.size(); ++i) y_train(static_cast<Eigen::Index>(i)) = y(d.train[i]);
    if (o.standardize) {
        d.y_shift = y_train.mean();
        const double var = y_train.size() > 1 ? (y_train.array() - d.y_shift).square().sum() / (y_train.size() - 1) : 0.0;
        d.y_scale = var > 0 ? std::sqrt(var) : 1.0;
    }
    const auto model = [&](double v) { return (v - d.y_shift) / d.y_scale; };
    d.gp.X = take_rows(d.all.X, d.train);
    d.gp.y = y_train.unaryExpr(model);
    d.gp.grid = build_grid(d.gp.X, MidpointGrid{});
    d.gp.weights = AxisWeights::uniform(static_cast<std::size_t>(d.all.X.cols()));
    d.gp.p0_override = o.root_split;
    d.X_test = take_rows(d.all.X, d.test);
    d.y_test.resize(static_cast<Eigen::Index>(d.test.size()));
    for (std::size_t i = 0; i < d.test.size(); ++i) d.y_test(static_cast<Eigen::Index>(i)) = model(y(d.test[i]));
    return d;
}

inline json fit_config(const FitCommandOptions& o, bool with_predict) {
    json c = {{"data", o.data},           {"outcome", o.outcome}, {"split", o.split},     {"seed", o.seed},
              {"standardize", o.standardize}, {"transform", o.transform}, {"nu", o.nu}, {"q", o.q},
              {"tune_k", o.tune_k},       {"root_split", o.root_split}, {"max_iter", o.max_iter}};
    if (with_predict) {
        c["params"] = o.params;
        c["sigma_draws"] = o.sigma_draws;
        c["f_per_sigma"] = o.f_per_sigma;
        c["predictions"] = o.predictions;
    }
    return c;
}

struct FitOutcome {
    NoisePrior noise;
    OlsLambda ols;
    MapFit fit;
};

inline FitOutcome run_fit(const PreparedData& d, const FitCommandOptions& o) {
    FitOutcome r;
    // one dummy per factor is implied by the intercept
    std::vector<Eigen::Index> keep;
    for (Eigen::Index c = 0; c < d.gp.X.cols(); ++c)
        if (std::find(d.all.first_dummies.begin(), d.all.first_dummies.end(), c) == d.all.first_dummies.end())
            keep.push_back(c);
    r.ols = set_lambda_from_ols(d.gp.X(Eigen::all, keep), d.gp.y, o.nu, o.q);
    r.noise = NoisePrior{o.nu, r.ols.lambda, o.q};
    const PriorMaps maps{r.noise, o.tune_k};
    HyperParams init;
    init.log_sigma2 = std::log(std::max(r.ols.sigma2_hat, r.ols.lambda));
    FitOptions fo;
    fo.max_iter = o.max_iter;
    r.fit = fit_map(d.gp, maps, init, fo);
    return r;
}

inline json params_json(const HyperParams& h) {
    return {{"alpha", h.alpha}, {"beta", h.beta}, {"k", h.k}, {"sigma2", std::exp(h.log_sigma2)}};
}

inline json data_json(const PreparedData& d) {
    return {{"n", d.all.X.rows()},         {"n_train", d.train.size()}, {"n_test", d.test.size()},
            {"columns", d.all.columns},    {"y_shift", d.y_shift},      {"y_scale", d.y_scale}};
}

inline json fit_json(const FitOutcome& r) {
    json j = {{"params", params_json(r.fit.params)},
              {"noise_prior", {{"nu", r.noise.nu}, {"lambda", r.noise.lambda}, {"q", r.noise.q}}},
              {"ols", {{"sigma2_hat", r.ols.sigma2_hat}, {"fallback", r.ols.fallback}, {"floored", r.ols.floored}}},
              {"log_posterior", r.fit.objective},
              {"initial_log_posterior", r.fit.init_objective},
              {"grad_norm", r.fit.grad_norm},
              {"iterations", r.fit.iterations},
              {"converged", r.fit.converged},
              {"degenerate_outcome", r.fit.degenerate_outcome},
              {"laplace_ok", r.fit.laplace_ok}};
    if (r.fit.laplace_ok) {
        json sd = json::array();
        for (int i = 0; i < 4; ++i) sd.push_back(std::sqrt(r.fit.inverse_hessian(i, i)));
        j["z_sd"] = sd;
    }
    return j;
}

inline int cmd_fit(const FitCommandOptions& o, std::ostream& out) {
    const auto d = prepare(o);
    const auto r = run_fit(d, o);
    auto j = envelope("fit", fit_config(o, false));
    j["data"] = data_json(d);
    j["result"] = fit_json(r);
    out << j.dump(2) << '\n';
    return ok;
}

inline int cmd_predict(const FitCommandOptions& o, std::ostream& out) {
    const auto d = prepare(o);
    auto j = envelope("predict", fit_config(o, true));
    j["data"] = data_json(d);
    HyperParams h;
    NoisePrior noise;
    if (o.params.empty()) {
        const auto r = run_fit(d, o);
        h = r.fit.params;
        noise = r.noise;
        j["fit"] = fit_json(r);
    } else {
        const json fitted = json::parse(read_file(o.params));
        const auto& res = fitted.at("result");
        h.alpha = res.at("params").at("alpha").get<double>();
        h.beta = res.at("params").at("beta").get<double>();
        h.k = res.at("params").at("k").get<double>();
        h.log_sigma2 = std::log(res.at("params").at("sigma2").get<double>());
        noise.nu = res.at("noise_prior").at("nu").get<double>();
        noise.lambda = res.at("noise_prior").at("lambda").get<double>();
        noise.q = res.at("noise_prior").at("q").get<double>();
        j["fit"] = {{"params", params_json(h)}, {"from", o.params}};
    }
    PredictOptions po;
    po.n_sigma_draws = o.sigma_draws;
    po.n_f_per_sigma = o.f_per_sigma;
    po.seed = o.seed;
    const auto s = predict(d.gp, d.X_test, h, noise, po, d.test.empty() ? std::nullopt : std::optional(d.y_test));

    double s2_mean = 0;
    for (double v : s.sigma2_draws) s2_mean += v;
    s2_mean /= static_cast<double>(s.sigma2_draws.size());
    j["result"] = {{"rmse", number(s.rmse)},
                   {"log_loss", number(s.log_loss)},
                   {"rmse_outcome_scale", number(s.rmse * d.y_scale)},
                   {"sigma2_posterior_mean", s2_mean},
                   {"sigma2_acceptance", s.acceptance}};
    out << j.dump(2) << '\n';

    if (!o.predictions.empty())
        with_output(o.predictions, [&](std::ostream& p) {
            p << "row,y,mean_model,sd_model,mean\n";
            for (std::size_t i = 0; i < d.test.size(); ++i) {
                const auto k = static_cast<Eigen::Index>(i);
                double sd = std::numeric_limits<double>::quiet_NaN();
                if (s.samples.rows() > 1) {
                    const auto col = s.samples.col(k);
                    sd = std::sqrt((col.array() - col.mean()).square().sum() / static_cast<double>(col.size() - 1));
                }
                const double mean = inverse_transform(o.transform, s.mean(k) * d.y_scale + d.y_shift);
                p << d.test[i] + 1 << ',' << fmt(d.all.y(d.test[i])) << ',' << fmt(s.mean(k)) << ',' << fmt(sd) << ','
                  << fmt(mean) << '\n';
            }
        });
    return ok;
}

}  // namespace bartgp::cli

#include "rsmlp/errors.hpp"
#include "rsmlp/sweep.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>
#include <optional>

using namespace rsmlp;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kConvergence = 3, kIo = 4 };

struct Flags {
    std::string config, alpha, out, format, cache_dir;
    std::optional<int> threads, d, n_seeds, chains, n_test, max_sweeps;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> activation, activation2, readouts, weights, method, dataset, covariance, spectrum;
    std::optional<double> gamma, delta, snr, eta, ratio;
    std::vector<double> gammas;
    std::vector<std::string> branches;
    bool refine = false, cold = false, refine_linear = false;
    std::string save_dataset;
};

void add_common(CLI::App* app, Flags& f) {
    app->add_option("--config", f.config, "JSON configuration file");
    app->add_option("--alpha", f.alpha, "alpha grid LO:HI:STEP or a single value");
    app->add_option("--out", f.out, "output path (stdout when omitted)");
    app->add_option("--format", f.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    app->add_option("--threads", f.threads, "worker threads");
    app->add_option("--seed", f.seed, "random seed");
    app->add_option("--cache-dir", f.cache_dir, "directory for cached potentials");
    app->add_option("--activation", f.activation, "activation name");
    app->add_option("--readouts", f.readouts, "readout prior: homogeneous, rademacher, gaussian");
    app->add_option("--weights", f.weights, "weight prior: gaussian, rademacher");
    app->add_option("--gamma", f.gamma, "width ratio k/d");
    app->add_option("--delta", f.delta, "label noise variance");
}

SweepConfig build_config(const std::string& task, const Flags& f) {
    SweepConfig c;
    c.task = task;
    if (!f.config.empty()) {
        c = load_config(f.config, c);
        if (task != "sweep" && c.task != task) c.task = task;
    }
    if (c.task == "sweep") throw ConfigError("task: the configuration must name a task");
    if (!f.alpha.empty()) c.alphas = parse_alpha_range(f.alpha);
    if (!f.out.empty()) c.out = f.out;
    if (!f.format.empty()) c.format = f.format;
    if (f.threads) c.threads = *f.threads;
    if (!f.cache_dir.empty()) c.cache_dir = f.cache_dir;
    if (f.activation) c.activation = *f.activation;
    if (f.activation2) c.activation2 = *f.activation2;
    if (f.readouts) c.readout_prior = *f.readouts;
    if (f.weights) c.weight_prior = *f.weights;
    if (f.gamma) c.gamma = *f.gamma;
    if (!f.gammas.empty()) c.gammas = f.gammas;
    if (f.delta) c.delta = *f.delta;
    if (!f.branches.empty()) c.branches = f.branches;
    if (f.refine) c.refine_alpha_sp = true;
    if (f.cold) c.warm_start = false;
    if (f.d) c.d = *f.d;
    if (f.method) c.method = *f.method;
    if (f.dataset) c.dataset = *f.dataset;
    if (f.covariance) c.covariance = *f.covariance;
    if (f.chains) c.chains = *f.chains;
    if (f.n_test) c.n_test = *f.n_test;
    if (f.max_sweeps) c.metropolis.max_sweeps = *f.max_sweeps;
    if (f.refine_linear) c.gamp.refine_linear = true;
    if (f.spectrum) c.spectrum = *f.spectrum;
    if (f.snr) c.snr = *f.snr;
    if (f.eta) c.eta = *f.eta;
    if (f.ratio) c.ratio = *f.ratio;
    if (f.seed) {
        c.seeds.clear();
        for (int i = 0; i < f.n_seeds.value_or(1); ++i) c.seeds.push_back(*f.seed + (std::uint64_t)i);
        c.metropolis.seed = *f.seed;
    } else if (f.n_seeds) {
        c.seeds.clear();
        for (int i = 0; i < *f.n_seeds; ++i) c.seeds.push_back((std::uint64_t)i + 1);
    }
    return c;
}

void emit_json(const nlohmann::json& j, const std::string& path) {
    if (path.empty()) {
        std::cout << j.dump(2) << '\n';
        return;
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + path);
}

int run(const std::string& task, const Flags& f) {
    SweepConfig c = build_config(task, f);
    if (c.task == "l1" || c.task == "l2" || c.task == "deep" || c.task == "spectrum") {
        SweepResult r = run_sweep(c);
        for (const auto& x : r.failures)
            std::cerr << "rsmlp: alpha=" << x.alpha << " branch=" << x.branch << ": " << x.error << '\n';
        return r.ok() ? kOk : kConvergence;
    }
    if (!f.save_dataset.empty()) {
        validate_config(c);
        if (c.alphas.empty()) throw ConfigError("alpha: grid is empty");
        Architecture arch;
        arch.d = c.d;
        arch.widths = {std::max(1, (int)std::lround(c.gamma * c.d))};
        arch.act = make_activation(c.activation);
        std::uint64_t seed = c.seeds.empty() ? 1 : c.seeds.front();
        Dataset ds = generate_dataset(arch, make_weight_prior(c.weight_prior),
                                      make_readout_prior(c.readout_prior, c.readout_bins),
                                      (int)std::lround(c.alphas.front() * c.d * c.d), c.delta,
                                      parse_covariance(c.covariance), seed);
        save_dataset(ds, f.save_dataset);
        return kOk;
    }
    if (c.task == "gamp" && !c.dataset.empty()) {
        validate_config(c);
        emit_json(gamp_report(load_dataset(c.dataset), c), c.out);
        return kOk;
    }
    if (c.task == "gamp") c.method = "gamp";
    nlohmann::json rep = run_experiment(c);
    emit_json(rep, c.out);
    return rep.contains("failures") && !rep["failures"].empty() ? kConvergence : kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Replica-symmetric theory of Bayes-optimal MLP learning: solvers, sweeps and simulations"};
    app.require_subcommand(1);
    Flags f;
    std::string chosen;
    auto add = [&](const char* name, const char* task, const char* help) {
        CLI::App* s = app.add_subcommand(name, help);
        add_common(s, f);
        s->callback([&chosen, task] { chosen = task; });
        return s;
    };

    auto* l1 = add("solve-l1", "l1", "one hidden layer: all branches per alpha");
    l1->add_option("--branches", f.branches, "seed families to run");
    l1->add_flag("--refine-alpha-sp", f.refine, "bisect the specialisation point inside the grid");
    l1->add_flag("--no-warm-start", f.cold, "start every alpha from the seeds");

    auto* l2 = add("solve-l2", "l2", "two hidden layers");
    l2->add_option("--activation2", f.activation2, "outer activation");
    l2->add_option("--gammas", f.gammas, "gamma1 gamma2")->expected(2);
    l2->add_option("--branches", f.branches, "seed families to run");
    l2->add_flag("--no-warm-start", f.cold, "start every alpha from the seeds");

    auto* deep = add("solve-deep", "deep", "L hidden layers under the deep ansatz");
    deep->add_option("--gammas", f.gammas, "gamma_1 .. gamma_L")->expected(1, 64);
    deep->add_option("--branches", f.branches, "seed families to run");

    auto* spec = add("spectrum", "spectrum", "dump a spectral density as value,density");
    spec->add_option("--kind", f.spectrum, "generalized_mp, observation, rectangular, marchenko_pastur");
    spec->add_option("--snr", f.snr, "signal-to-noise ratio");
    spec->add_option("--eta", f.eta, "rectangular aspect ratio");
    spec->add_option("--ratio", f.ratio, "Marchenko-Pastur ratio");

    for (auto [name, task] : {std::pair{"gamp", "gamp"}, std::pair{"simulate", "simulate"}}) {
        auto* s = add(name, task, std::string(name) == "gamp" ? "GAMP-RIE on a dataset or on generated data"
                                                               : "teacher-student experiments against theory");
        s->add_option("--d", f.d, "input dimension");
        s->add_option("--n-seeds", f.n_seeds, "number of consecutive seeds starting at --seed");
        s->add_option("--n-test", f.n_test, "test inputs");
        s->add_option("--covariance", f.covariance, "identity, wishart:<d0> or file:<path>");
        s->add_option("--save-dataset", f.save_dataset, "write the dataset for the first alpha and seed and stop");
        if (std::string(name) == "gamp") {
            s->add_option("--dataset", f.dataset, "dataset file");
            s->add_flag("--refine-linear", f.refine_linear, "refit the linear part after the quadratic stage");
        } else {
            s->add_option("--method", f.method, "gamp or metropolis")->check(CLI::IsMember({"gamp", "metropolis"}));
            s->add_option("--chains", f.chains, "Metropolis chains per dataset");
            s->add_option("--max-sweeps", f.max_sweeps, "Metropolis sweep cap");
        }
    }
    add("sweep", "sweep", "run the task named in --config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }
    try {
        return run(chosen, f);
    } catch (const ConfigError& e) {
        std::cerr << "rsmlp: config error: " << e.what() << '\n';
        return kConfig;
    } catch (const IoError& e) {
        std::cerr << "rsmlp: I/O error: " << e.what() << '\n';
        return kIo;
    } catch (const ConvergenceError& e) {
        std::cerr << "rsmlp: convergence failure: " << e.what() << '\n';
        return kConvergence;
    } catch (const NumericError& e) {
        std::cerr << "rsmlp: numerical failure: " << e.what() << '\n';
        return kConvergence;
    } catch (const std::logic_error& e) {
        std::cerr << "rsmlp: invalid input: " << e.what() << '\n';
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "rsmlp: " << e.what() << '\n';
        return kFailure;
    }
}

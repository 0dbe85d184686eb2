#include "cli.hpp"

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include <hpalign/error.hpp>
#include <hpalign/io.hpp>
#include <hpalign/metrics.hpp>

namespace hpalign::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Optional per-field overrides of AlignmentConfig, named after the config keys.
struct ConfigFlags {
    std::optional<fs::path> file;
    std::optional<double> alpha;
    std::optional<double> gamma;
    std::optional<double> tau;
    std::optional<int> outer_rounds;
    std::optional<int> hp_steps;
    std::optional<double> learning_rate;
    bool sgd{false};
    std::optional<std::size_t> batch_size;
    std::optional<std::size_t> history_window;
    std::optional<bool> warm_start;
    std::optional<bool> fit_infectivity;
    std::optional<double> beta;
    std::optional<double> initial_infectivity;
    std::optional<double> marginal_smoothing;
    std::optional<int> transport_iterations;
    std::optional<double> transport_tolerance;
    std::optional<int> sinkhorn_iterations;
    std::optional<double> sinkhorn_tolerance;
};

void add_config_flags(CLI::App* app, ConfigFlags& f)
{
    app->add_option("--config", f.file, "JSON file with alignment settings; flags override it");
    app->add_option("--alpha", f.alpha, "weight of the Gromov-Wasserstein term in [0, 1]");
    app->add_option("--gamma", f.gamma, "regularizer weight (default: events / mean_rate^2)");
    app->add_option("--tau", f.tau, "proximal KL weight (default: 0.1 x mean initial fused cost)");
    app->add_option("--outer_rounds", f.outer_rounds);
    app->add_option("--hp_steps", f.hp_steps);
    app->add_option("--learning_rate", f.learning_rate);
    app->add_flag("--sgd", f.sgd, "stochastic Hawkes updates instead of full-batch line search");
    app->add_option("--batch_size", f.batch_size);
    app->add_option("--history_window", f.history_window, "0 keeps the whole history");
    app->add_option("--warm_start", f.warm_start);
    app->add_option("--fit_infectivity", f.fit_infectivity);
    app->add_option("--beta", f.beta, "kernel decay rate");
    app->add_option("--initial_infectivity", f.initial_infectivity);
    app->add_option("--marginal_smoothing", f.marginal_smoothing);
    app->add_option("--transport_iterations", f.transport_iterations);
    app->add_option("--transport_tolerance", f.transport_tolerance);
    app->add_option("--sinkhorn_iterations", f.sinkhorn_iterations);
    app->add_option("--sinkhorn_tolerance", f.sinkhorn_tolerance);
}

AlignmentConfig resolve_config(const ConfigFlags& f, std::optional<std::uint64_t> seed)
{
    AlignmentConfig c;
    if (f.file) {
        c = io::config_from_json(io::read_json(*f.file));
    }
    auto set = [](auto& field, const auto& flag) {
        if (flag) {
            field = *flag;
        }
    };
    set(c.alpha, f.alpha);
    if (f.gamma) {
        c.gamma = f.gamma;
    }
    if (f.tau) {
        c.tau = f.tau;
    }
    set(c.outer_rounds, f.outer_rounds);
    set(c.hp_steps, f.hp_steps);
    set(c.learning_rate, f.learning_rate);
    if (f.sgd) {
        c.sgd.enabled = true;
    }
    set(c.sgd.batch_size, f.batch_size);
    set(c.sgd.history_window, f.history_window);
    set(c.warm_start, f.warm_start);
    set(c.fit_infectivity, f.fit_infectivity);
    set(c.beta, f.beta);
    set(c.initial_infectivity, f.initial_infectivity);
    set(c.marginal_smoothing, f.marginal_smoothing);
    set(c.transport_iterations, f.transport_iterations);
    set(c.transport_tolerance, f.transport_tolerance);
    set(c.sinkhorn_iterations, f.sinkhorn_iterations);
    set(c.sinkhorn_tolerance, f.sinkhorn_tolerance);
    set(c.seed, seed);
    c.validate();
    return c;
}

unsigned resolve_threads(std::optional<unsigned> flag)
{
    if (flag) {
        return std::max(1U, *flag);
    }
    if (const char* env = std::getenv("HA_THREADS")) {
        try {
            return std::max(1, std::stoi(env));
        } catch (const std::exception&) {
            throw ValidationError("HA_THREADS must be a positive integer");
        }
    }
    return 1;
}

std::vector<Method> parse_methods(const std::string& list)
{
    std::vector<Method> methods;
    std::stringstream stream(list);
    std::string name;
    while (std::getline(stream, name, ',')) {
        if (!name.empty()) {
            methods.push_back(parse_method(name));
        }
    }
    detail::require(!methods.empty(), "--methods needs at least one method");
    return methods;
}

class Manifest {
public:
    Manifest(std::string command, const std::vector<std::string>& argv)
        : start_(std::chrono::steady_clock::now())
    {
        data_["command"] = std::move(command);
        data_["argv"] = argv;
        data_["version"] = kVersion;
        data_["inputs"] = json::array();
        data_["outputs"] = json::array();
    }

    json& operator[](const char* key) { return data_[key]; }

    void input(const fs::path& p) { data_["inputs"].push_back(p.string()); }
    void output(const fs::path& p) { data_["outputs"].push_back(p.filename().string()); }

    void write(const fs::path& dir)
    {
        data_["timings"] = {
            {"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()}};
        io::write_json(dir / "manifest.json", data_);
    }

private:
    json data_;
    std::chrono::steady_clock::time_point start_;
};

void write_text(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out << text;
}

io::EventCorpus load_corpus(const fs::path& csv, const std::optional<fs::path>& meta, const char* side)
{
    io::EventCorpus corpus = io::read_events(csv, meta.value_or(io::sidecar_path(csv)));
    if (corpus.ties_broken > 0) {
        std::cerr << "warning: " << side << " corpus: separated " << corpus.ties_broken
                  << " tied timestamp(s) by one ulp\n";
    }
    return corpus;
}

std::string method_slug(Method m)
{
    std::string s(method_name(m));
    for (char& ch : s) {
        ch = ch == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
    return s;
}

}  // namespace

void cmd_simulate(const SimulateOptions& opts, const std::vector<std::string>& argv)
{
    Manifest manifest("simulate", argv);
    const HawkesParams params = io::params_from_json(io::read_json(opts.params));
    manifest.input(opts.params);
    detail::require(opts.horizon > 0.0, "--horizon must be positive");
    std::vector<EventSequence> sequences;
    for (std::size_t n = 0; n < opts.count; ++n) {
        sequences.push_back(simulate(params, opts.horizon, derive_seed(opts.seed, {n})));
    }
    fs::create_directories(opts.out);
    io::write_events(opts.out / "events.csv", opts.out / "events.json", sequences, params.num_types());
    manifest.output("events.csv");
    manifest.output("events.json");
    manifest["seeds"] = {{"seed", opts.seed}};
    manifest["config"] = {{"horizon", opts.horizon}, {"count", opts.count}, {"params", io::params_to_json(params)}};
    manifest.write(opts.out);
}

JointState cmd_align(const AlignOptions& opts, const std::vector<std::string>& argv)
{
    Manifest manifest("align", argv);
    const io::EventCorpus source = load_corpus(opts.source, opts.source_meta, "source");
    const io::EventCorpus target = load_corpus(opts.target, opts.target_meta, "target");
    manifest.input(opts.source);
    manifest.input(opts.target);

    std::optional<Correspondence> truth;
    if (opts.truth) {
        truth = Correspondence(io::read_matrix(*opts.truth));
        manifest.input(*opts.truth);
        detail::require(truth->rows() == static_cast<Eigen::Index>(source.num_types) &&
                            truth->cols() == static_cast<Eigen::Index>(target.num_types),
                        "truth is " + std::to_string(truth->rows()) + "x" + std::to_string(truth->cols()) +
                            " but corpora have " + std::to_string(source.num_types) + " and " +
                            std::to_string(target.num_types) + " types");
        detail::require(opts.k >= 1 && opts.k <= truth->cols(), "--k must lie in [1, target types]");
    }

    JointState state = align(source.sequences, target.sequences, opts.config);

    const fs::path& out = opts.out;
    fs::create_directories(out);
    io::write_matrix(out / "plan.csv", state.plan.coupling);
    io::write_pgm(out / "plan.pgm", state.plan.coupling);
    io::write_json(out / "params.json",
                   json{{"source", io::params_to_json(state.source)},
                        {"target", io::params_to_json(state.target)},
                        {"gamma", state.gamma}});
    std::string trace = "round,nll_source,nll_target,fgw,total\n";
    for (const TraceRecord& r : state.trace) {
        trace += std::to_string(r.round) + "," + io::format_double(r.nll_source) + "," +
                 io::format_double(r.nll_target) + "," + io::format_double(r.fgw) + "," + io::format_double(r.total) +
                 "\n";
    }
    write_text(out / "trace.csv", trace);
    std::string transport = "round,iteration,fgw\n";
    for (std::size_t r = 0; r < state.transport_traces.size(); ++r) {
        for (std::size_t k = 0; k < state.transport_traces[r].size(); ++k) {
            transport += std::to_string(r + 1) + "," + std::to_string(k) + "," +
                         io::format_double(state.transport_traces[r][k]) + "\n";
        }
    }
    write_text(out / "transport_trace.csv", transport);
    for (const char* name : {"plan.csv", "plan.pgm", "params.json", "trace.csv", "transport_trace.csv"}) {
        manifest.output(name);
    }

    if (truth) {
        io::write_json(out / "metrics.json",
                       json{{"k", opts.k},
                            {"acc_k", top_k_accuracy(*truth, state.plan.coupling, opts.k)},
                            {"sim", cosine_similarity(*truth, state.plan.coupling)},
                            {"entropy", plan_entropy(state.plan.coupling)},
                            {"acc_denominator", "source types"}});
        manifest.output("metrics.json");
    }
    manifest["config"] = io::config_to_json(opts.config);
    manifest["config"]["gamma_resolved"] = state.gamma;
    manifest["seeds"] = {{"seed", opts.config.seed}};
    manifest.write(out);
    return state;
}

BenchmarkTable cmd_bench(const BenchOptions& opts, const std::vector<std::string>& argv)
{
    Manifest manifest("bench", argv);
    BenchmarkTable table = run_benchmark(opts.spec, opts.methods, opts.config, opts.threads);

    const fs::path& out = opts.out;
    fs::create_directories(out);
    std::string summary = "method,acc1,sim,entropy\n";
    for (const BenchmarkRow& row : table.rows) {
        summary += std::string(method_name(row.method)) + "," + io::format_double(row.accuracy) + "," +
                   io::format_double(row.similarity) + "," + io::format_double(row.entropy) + "\n";
    }
    write_text(out / "table.csv", summary);
    std::string trials = "trial,method,acc1,sim,entropy\n";
    for (const AlignmentReport& r : table.reports) {
        trials += std::to_string(r.trial) + "," + std::string(method_name(r.method)) + "," +
                  io::format_double(r.accuracy) + "," + io::format_double(r.similarity) + "," +
                  io::format_double(r.entropy) + "\n";
    }
    write_text(out / "trials.csv", trials);
    manifest.output("table.csv");
    manifest.output("trials.csv");
    for (const AlignmentReport& r : table.reports) {
        if (r.trial == 0) {
            const std::string slug = method_slug(r.method);
            io::write_matrix(out / ("plan_" + slug + ".csv"), r.plan);
            io::write_pgm(out / ("heatmap_" + slug + ".pgm"), r.plan);
            manifest.output("plan_" + slug + ".csv");
            manifest.output("heatmap_" + slug + ".pgm");
        }
    }
    manifest["config"] = io::config_to_json(opts.config);
    manifest["spec"] = {{"c", opts.spec.num_types},
                        {"sequences", opts.spec.sequences_per_domain()},
                        {"horizon", opts.spec.sequence_horizon()},
                        {"trials", opts.spec.trials}};
    manifest["seeds"] = {{"seed", opts.spec.seed}};
    manifest["threads"] = opts.threads;
    manifest.write(out);
    return table;
}

EvalResult cmd_eval(const EvalOptions& opts)
{
    const Correspondence truth(io::read_matrix(opts.truth));
    const Matrix plan = io::read_matrix(opts.plan);
    detail::require(plan.rows() == truth.rows() && plan.cols() == truth.cols(),
                    "shape mismatch: plan is " + std::to_string(plan.rows()) + "x" + std::to_string(plan.cols()) +
                        ", truth is " + std::to_string(truth.rows()) + "x" + std::to_string(truth.cols()));
    detail::require(opts.k >= 1 && opts.k <= plan.cols(),
                    "k = " + std::to_string(opts.k) + " exceeds the " + std::to_string(plan.cols()) +
                        " plan columns");
    EvalResult result{opts.k, top_k_accuracy(truth, plan, opts.k), cosine_similarity(truth, plan),
                      plan_entropy(plan)};
    if (opts.out) {
        io::write_json(*opts.out, json{{"k", result.k},
                                       {"acc_k", result.accuracy},
                                       {"sim", result.similarity},
                                       {"entropy", result.entropy}});
    }
    return result;
}

namespace {

int dispatch(const std::vector<std::string>& args)
{
    CLI::App app{"Joint Hawkes-process learning and event-type alignment by fused Gromov-Wasserstein transport",
                 "hpalign"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;

    SimulateOptions sim;
    auto* sim_cmd = app.add_subcommand("simulate", "simulate event sequences from a parameter JSON file");
    sim_cmd->add_option("--params", sim.params, "JSON with mu, A, beta")->required();
    sim_cmd->add_option("--horizon", sim.horizon, "observation window per sequence")->required();
    sim_cmd->add_option("--count", sim.count, "number of sequences")->default_val(1);
    sim_cmd->add_option("--seed", seed, "default 0");
    sim_cmd->add_option("--out", sim.out, "output directory")->required();

    AlignOptions al;
    ConfigFlags align_flags;
    std::optional<fs::path> source_meta;
    std::optional<fs::path> target_meta;
    std::optional<fs::path> truth;
    auto* align_cmd = app.add_subcommand("align", "learn both processes and the transport plan between their types");
    align_cmd->add_option("--source", al.source, "source event CSV")->required();
    align_cmd->add_option("--target", al.target, "target event CSV")->required();
    align_cmd->add_option("--source-meta", source_meta, "source sidecar JSON (default: CSV path with .json)");
    align_cmd->add_option("--target-meta", target_meta, "target sidecar JSON (default: CSV path with .json)");
    align_cmd->add_option("--truth", truth, "ground-truth 0/1 matrix CSV for metrics");
    align_cmd->add_option("--k", al.k, "top-K for accuracy")->default_val(1);
    align_cmd->add_option("--seed", seed, "default 0, or the config file's seed");
    align_cmd->add_option("--threads", threads);
    align_cmd->add_option("--out", al.out, "output directory")->required();
    add_config_flags(align_cmd, align_flags);

    BenchOptions bench;
    ConfigFlags bench_flags;
    std::string methods = "Empirical,HP-WD,HP-GWD,FGWA";
    auto* bench_cmd = app.add_subcommand("bench", "synthetic benchmark of all alignment methods");
    bench_cmd->add_option("--c", bench.spec.num_types, "event types per domain")->default_val(10);
    bench_cmd->add_option("--trials", bench.spec.trials)->default_val(10);
    bench_cmd->add_option("--sequences", bench.spec.num_sequences, "sequences per domain (0: C)")->default_val(0);
    bench_cmd->add_option("--horizon", bench.spec.horizon, "sequence horizon (0: C^2)")->default_val(0.0);
    bench_cmd->add_option("--methods", methods, "comma-separated subset of Empirical,HP-WD,HP-GWD,FGWA");
    bench_cmd->add_option("--seed", seed, "default 0, or the config file's seed");
    bench_cmd->add_option("--threads", threads);
    bench_cmd->add_option("--out", bench.out, "output directory")->required();
    add_config_flags(bench_cmd, bench_flags);

    EvalOptions ev;
    auto* eval_cmd = app.add_subcommand("eval", "score a plan against a ground-truth correspondence");
    eval_cmd->add_option("--plan", ev.plan)->required();
    eval_cmd->add_option("--truth", ev.truth)->required();
    eval_cmd->add_option("--k", ev.k)->default_val(1);
    eval_cmd->add_option("--out", ev.out, "also write the JSON to this file");

    fs::path manifest_path;
    std::optional<fs::path> replay_out;
    auto* replay_cmd = app.add_subcommand("replay", "re-run the command recorded in a manifest");
    replay_cmd->add_option("--manifest", manifest_path)->required();
    replay_cmd->add_option("--out", replay_out, "write into this directory instead of the recorded one");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kSuccess : kValidation;
    }

    std::vector<std::string> argv(args.begin(), args.end());
    if (*sim_cmd) {
        sim.seed = seed.value_or(0);
        cmd_simulate(sim, argv);
    } else if (*align_cmd) {
        al.source_meta = source_meta;
        al.target_meta = target_meta;
        al.truth = truth;
        al.config = resolve_config(align_flags, seed);
        resolve_threads(threads);
        cmd_align(al, argv);
    } else if (*bench_cmd) {
        bench.methods = parse_methods(methods);
        bench.config = resolve_config(bench_flags, seed);
        bench.spec.seed = bench.config.seed;
        bench.threads = resolve_threads(threads);
        cmd_bench(bench, argv);
    } else if (*eval_cmd) {
        const EvalResult r = cmd_eval(ev);
        std::cout << json{{"k", r.k}, {"acc_k", r.accuracy}, {"sim", r.similarity}, {"entropy", r.entropy}}.dump(2)
                  << '\n';
    } else if (*replay_cmd) {
        const json manifest = io::read_json(manifest_path);
        std::vector<std::string> recorded;
        try {
            recorded = manifest.at("argv").get<std::vector<std::string>>();
        } catch (const json::exception&) {
            throw ValidationError(manifest_path.string() + ": manifest has no argv");
        }
        if (replay_out) {
            for (std::size_t i = 0; i + 1 < recorded.size(); ++i) {
                if (recorded[i] == "--out") {
                    recorded[i + 1] = replay_out->string();
                }
            }
        }
        detail::require(!recorded.empty() && recorded.front() != "replay", "manifest does not record a runnable command");
        return dispatch(recorded);
    }
    return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args)
{
    try {
        return dispatch(args);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kValidation;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return kNumerical;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUnexpected;
    }
}

}  // namespace hpalign::cli

// Command-line front end: dataset generation, offline training, online
// restoration, method evaluation, and derivative self-checks.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "acrestore/benchmark.hpp"
#include "acrestore/common.hpp"
#include "acrestore/sensitivity.hpp"
#include "acrestore/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace acrestore;

namespace {

constexpr const char* kVersion = "0.1.0";

// Exit code contract: 0 success, 2 input error, 3 non-convergence,
// 4 fingerprint mismatch, 5 check failure.
enum ExitCode : int {
    exit_ok = 0,
    exit_input = 2,
    exit_no_convergence = 3,
    exit_fingerprint = 4,
    exit_check_failed = 5,
};

std::uint64_t default_seed() {
    if (const char* env = std::getenv("ACRESTORE_SEED")) {
        try {
            return std::stoull(env);
        } catch (...) {
            std::cerr << "warning: ignoring non-integer ACRESTORE_SEED '" << env << "'\n";
        }
    }
    return 1;
}

std::string slurp(const fs::path& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(std::string("cannot open ") + what + ": " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write " + path.string());
    out << text;
}

// Reproducibility manifest written next to each command's outputs.
void write_manifest(const fs::path& path, const std::string& subcommand,
                    const std::vector<std::string>& argv, std::uint64_t seed,
                    const json& inputs, const std::vector<std::string>& outputs) {
    json doc;
    doc["tool"] = "acrestore";
    doc["version"] = kVersion;
    doc["subcommand"] = subcommand;
    doc["argv"] = argv;
    doc["seed"] = seed;
    doc["inputs"] = inputs;
    doc["outputs"] = outputs;
    write_file(path, doc.dump(2) + "\n");
}

std::vector<std::string> split_labels(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

struct CommonArgs {
    std::uint64_t seed = default_seed();
    bool seed_given = false;
    unsigned threads = 0;
};

int cmd_gen(const fs::path& case_path, const fs::path& out_dir, int count, double std_dev,
            std::uint64_t seed, const std::string& corruption_path, double test_ratio,
            bool independent_pq, unsigned threads, const std::vector<std::string>& argv) {
    const Network network = load_case(case_path);
    DatasetConfig config;
    config.count = count;
    config.load_std = std_dev;
    config.seed = seed;
    config.test_ratio = test_ratio;
    config.independent_pq = independent_pq;
    config.corruption = corruption_path.empty()
                            ? standard_corruption_suite()
                            : corruption_spec_from_json_text(
                                  slurp(corruption_path, "corruption spec"));

    const ScenarioDataset dataset = build_dataset(network, config, threads);
    if (dataset.records.empty()) throw ValidationError("no scenario survived ground-truth solving");
    save_dataset(network, dataset, out_dir);
    for (int id : dataset.dropped_ids)
        std::cerr << "warning: scenario " << id << " dropped (power flow non-convergence)\n";

    write_manifest(out_dir / "run.json", "gen", argv, seed,
                   json{{"case", {{"path", case_path.string()},
                                  {"fingerprint", network.fingerprint()}}}},
                   {out_dir.string()});
    std::cout << "dataset: " << dataset.records.size() << " scenarios ("
              << dataset.indices_of(SplitTag::train).size() << " train / "
              << dataset.indices_of(SplitTag::test).size() << " test), "
              << dataset.source_labels().size() << " sources -> " << out_dir.string() << "\n";
    return exit_ok;
}

int cmd_train(const fs::path& dataset_dir, const fs::path& out_path, TrainingConfig base,
              const std::vector<std::string>& sources_arg, const std::string& combine_csv,
              unsigned threads, const std::vector<std::string>& argv) {
    auto [network, dataset] = load_dataset(dataset_dir);

    std::vector<std::vector<std::string>> groups;
    const std::vector<std::string> singles =
        sources_arg.empty() ? dataset.source_labels() : sources_arg;
    for (const std::string& label : singles) groups.push_back({label});
    if (!combine_csv.empty()) groups.push_back(split_labels(combine_csv));

    TrainedParameterSet set;
    set.network_fingerprint = network.fingerprint();
    std::vector<std::string> outputs{out_path.string()};
    for (const auto& sources : groups) {
        TrainingConfig config = base;
        config.sources = sources;
        TrainedParameters trained = train(dataset, network, config, threads);
        for (const std::string& line : trained.failure_log)
            std::cerr << "warning: " << line << "\n";

        std::string group_name = sources.size() == 1 ? sources.front() : "combined";
        const fs::path csv_path =
            out_path.parent_path() / (out_path.stem().string() + ".loss." + group_name + ".csv");
        write_file(csv_path, loss_history_csv(trained));
        outputs.push_back(csv_path.string());

        std::cout << "trained " << group_name << ": loss " << trained.loss_history.front()
                  << " -> " << trained.loss_history.back() << " over "
                  << trained.loss_history.size() << " iterations\n";
        set.groups.push_back(std::move(trained));
    }

    save_trained_parameters(set, out_path);
    write_manifest(fs::path(out_path.string() + ".run.json"), "train", argv, base.seed,
                   json{{"dataset", dataset_dir.string()},
                        {"network_fingerprint", network.fingerprint()}},
                   outputs);
    return exit_ok;
}

int cmd_restore(const fs::path& case_path, const fs::path& meas_path,
                const std::string& params_path, const fs::path& out_path, double eps,
                int max_iter, bool damped, bool no_bus_shunt,
                const std::vector<std::string>& argv) {
    const Network network = load_case(case_path);
    std::vector<std::string> warnings;
    const MeasurementSet z =
        measurement_set_from_json_text(network, slurp(meas_path, "measurement set"), &warnings);
    for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";

    RestorationParams params = RestorationParams::uniform(z.size());
    if (!params_path.empty()) {
        const TrainedParameterSet set = load_trained_parameters(params_path);
        if (!set.network_fingerprint.empty() && set.network_fingerprint != network.fingerprint())
            throw FingerprintMismatch("trained parameters belong to a different network");
        const TrainedParameters* group = set.find_group(z.layout.fingerprint());
        if (!group)
            throw FingerprintMismatch(
                "trained parameters contain no group for this measurement layout");
        params.sigma = group->sigma_opt;
        params.bias = group->bias_opt;
    }

    RestoreOptions opts;
    opts.damped = damped;
    opts.h.include_bus_shunt = !no_bus_shunt;
    const RestorationResult result = restore(network, z, params, initial_state_from(network, z),
                                             eps, max_iter, opts);

    if (!out_path.empty()) {
        write_file(out_path, restoration_result_to_json_text(network, result));
        write_manifest(fs::path(out_path.string() + ".run.json"), "restore", argv, 0,
                       json{{"case", case_path.string()},
                            {"measurements", meas_path.string()},
                            {"params", params_path},
                            {"network_fingerprint", network.fingerprint()}},
                       {out_path.string()});
    }
    std::cout << (result.converged ? "converged" : "did not converge") << " in "
              << result.iterations << " iterations, J = " << result.objective
              << ", feasibility residual = "
              << injection_consistency_residual(network, result.x_r) << "\n";
    return result.converged ? exit_ok : exit_no_convergence;
}

int cmd_eval(const fs::path& dataset_dir, const std::string& params_path,
             const fs::path& out_base, const std::string& methods_csv,
             const std::string& combine_csv, bool show_table, double eps, int max_iter,
             unsigned threads, const std::vector<std::string>& argv) {
    auto [network, dataset] = load_dataset(dataset_dir);
    TrainedParameterSet trained;
    if (!params_path.empty()) {
        trained = load_trained_parameters(params_path);
        if (!trained.network_fingerprint.empty() &&
            trained.network_fingerprint != network.fingerprint())
            throw FingerprintMismatch("trained parameters belong to a different network");
    }

    EvalOptions options;
    options.restore_eps = eps;
    options.restore_max_iter = max_iter;
    options.threads = threads;
    options.combine = split_labels(combine_csv);
    if (!methods_csv.empty() && methods_csv != "all") {
        options.methods.clear();
        for (const std::string& name : split_labels(methods_csv)) {
            if (name == "initial") options.methods.push_back(Method::initial);
            else if (name == "benchmark_pv") options.methods.push_back(Method::benchmark_pv);
            else if (name == "se_init") options.methods.push_back(Method::se_init);
            else if (name == "se_opt") options.methods.push_back(Method::se_opt);
            else throw ParseError("unknown method '" + name + "'");
        }
    }

    const std::vector<MethodReport> reports = evaluate_methods(dataset, network, trained, options);

    const fs::path csv_path = fs::path(out_base.string() + ".csv");
    const fs::path json_path = fs::path(out_base.string() + ".json");
    write_file(csv_path, report_csv(reports));
    write_file(json_path, report_json_text(reports));
    write_manifest(fs::path(out_base.string() + ".run.json"), "eval", argv, 0,
                   json{{"dataset", dataset_dir.string()},
                        {"params", params_path},
                        {"network_fingerprint", network.fingerprint()}},
                   {csv_path.string(), json_path.string()});
    if (show_table) std::cout << report_table(reports);
    return exit_ok;
}

void dump_matrix_csv(const fs::path& path, const Eigen::MatrixXd& m, const char* what) {
    std::ostringstream out;
    out.precision(17);
    out << "# " << what << " (" << m.rows() << " x " << m.cols() << ")\n";
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << m(r, c);
        out << "\n";
    }
    write_file(path, out.str());
}

int cmd_check(const fs::path& case_path, bool grad, bool sens, std::uint64_t seed, int states,
              bool inject_error, bool no_bus_shunt, const std::string& dump_sens) {
    const Network network = load_case(case_path);
    if (!grad && !sens) grad = sens = true;
    HOptions hopts;
    hopts.include_bus_shunt = !no_bus_shunt;

    int rc = exit_ok;
    std::string worst_name;
    double worst_err = 0.0;

    const auto record = [&](const std::string& name, double err, double tol) {
        std::cout << name << ": max relative error " << err << " (tolerance " << tol << ")\n";
        if (err > worst_err) {
            worst_err = err;
            worst_name = name;
        }
        if (!(err <= tol)) rc = exit_check_failed;
    };

    if (grad) {
        double err = 0.0;
        const MeasurementLayout layout = MeasurementLayout::full_for_source(network, "check");
        for (int s = 0; s < states; ++s) {
            SeededRng rng(mix_seed(seed, static_cast<std::uint64_t>(s)), "check-state");
            StateVector x = StateVector::flat(network);
            for (Eigen::Index i = 0; i < x.angles.size(); ++i)
                x.angles[i] = rng.uniform(-0.2, 0.2);
            for (Eigen::Index i = 0; i < x.magnitudes.size(); ++i)
                x.magnitudes[i] = 1.0 + rng.uniform(-0.1, 0.1);

            Eigen::MatrixXd H = jacobian_H(network, x, layout, hopts);
            if (inject_error) H(0, 0) += 1.0;  // negative-control hook for tests

            const int n = x.n();
            const Eigen::VectorXd base = x.stacked();
            for (int c = 0; c < n; ++c) {
                Eigen::VectorXd plus = base, minus = base;
                plus[c] += 1e-6;
                minus[c] -= 1e-6;
                const Eigen::VectorXd col =
                    (evaluate_h(network,
                                StateVector::from_stacked(plus, x.slack_index, x.bus_count()),
                                layout, hopts) -
                     evaluate_h(network,
                                StateVector::from_stacked(minus, x.slack_index, x.bus_count()),
                                layout, hopts)) /
                    2e-6;
                for (int r = 0; r < H.rows(); ++r)
                    err = std::max(err,
                                   std::abs(H(r, c) - col[r]) / (1.0 + std::abs(col[r])));
            }
        }
        record("jacobian vs finite differences", err, 1e-6);
    }

    if (sens) {
        // A converged noisy instance, then analytic vs FD sensitivities.
        SeededRng rng(mix_seed(seed, tag_of("check-sens")), "noise");
        MeasurementSet set;
        set.network_fingerprint = network.fingerprint();
        set.sources = {"check"};
        set.layout = MeasurementLayout::full_for_source(network, "check");
        StateVector x_ref = StateVector::flat(network);
        for (Eigen::Index i = 0; i < x_ref.angles.size(); ++i)
            x_ref.angles[i] = rng.uniform(-0.1, 0.1);
        for (Eigen::Index i = 0; i < x_ref.magnitudes.size(); ++i)
            x_ref.magnitudes[i] = 1.0 + rng.uniform(-0.05, 0.05);
        set.values = evaluate_h(network, x_ref, set.layout, hopts);
        for (int i = 0; i < set.size(); ++i) set.values[i] += rng.normal(0.0, 1e-3);
        set.present.assign(static_cast<std::size_t>(set.size()), 1);

        const RestorationParams params = RestorationParams::uniform(set.size());
        RestoreOptions ropts;
        ropts.h = hopts;
        const RestorationResult r = restore(network, set, params,
                                            initial_state_from(network, set), 1e-10, 100, ropts);
        if (!r.converged) throw std::runtime_error("check: restoration did not converge");

        Eigen::MatrixXd dsig = dxr_dsigma_diag(network, set, params, r.x_r, hopts);
        Eigen::MatrixXd dbias = dxr_dbias(network, set, params, r.x_r, hopts);
        if (!dump_sens.empty()) {
            dump_matrix_csv(fs::path(dump_sens + ".dsigma.csv"), dsig, "dx_r/dsigma");
            dump_matrix_csv(fs::path(dump_sens + ".dbias.csv"), dbias, "dx_r/dbias");
        }
        if (inject_error) {
            dsig(0, 0) += 1.0;
            dbias(0, 0) += 1.0;
        }

        double err_s = 0.0, err_b = 0.0;
        const int stride = std::max(1, set.size() / 8);  // subsample entries
        for (int entry = 0; entry < set.size(); entry += stride) {
            const Eigen::VectorXd fd_s =
                fd_sensitivity_oracle(network, set, params, ParamKind::sigma, entry, 1e-5, 1e-10,
                                      hopts);
            const Eigen::VectorXd fd_b =
                fd_sensitivity_oracle(network, set, params, ParamKind::bias, entry, 1e-6, 1e-10,
                                      hopts);
            for (int i = 0; i < fd_s.size(); ++i) {
                err_s = std::max(err_s,
                                 std::abs(dsig(i, entry) - fd_s[i]) / (1.0 + std::abs(fd_s[i])));
                err_b = std::max(err_b,
                                 std::abs(dbias(i, entry) - fd_b[i]) / (1.0 + std::abs(fd_b[i])));
            }
        }
        record("weight sensitivities vs finite differences", err_s, 1e-4);
        record("bias sensitivities vs finite differences", err_b, 1e-4);
    }

    if (rc != exit_ok)
        std::cout << "FAIL: worst offender: " << worst_name << " (" << worst_err << ")\n";
    else
        std::cout << "all checks passed\n";
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"AC power flow feasibility restoration toolkit"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    std::vector<std::string> raw_args(argv, argv + argc);

    unsigned threads = 0;
    app.add_option("--threads", threads, "scenario-level worker threads (0 = auto)")
        ->capture_default_str();
    app.fallthrough();  // let subcommands reach --threads on the parent

    // gen ---------------------------------------------------------------
    auto* gen = app.add_subcommand("gen", "generate a synthetic scenario dataset");
    fs::path gen_case, gen_out;
    int gen_count = 100;
    double gen_std = 0.1, gen_ratio = 0.2;
    std::uint64_t gen_seed = default_seed();
    std::string gen_corruption;
    bool gen_indep_pq = false;
    gen->add_option("case", gen_case, "case file")->required();
    gen->add_option("--out", gen_out, "output dataset directory")->required();
    gen->add_option("--count", gen_count, "number of load scenarios")->capture_default_str();
    gen->add_option("--std", gen_std, "load multiplier standard deviation")
        ->capture_default_str();
    gen->add_option("--seed", gen_seed, "random seed")->capture_default_str();
    gen->add_option("--corruption-spec", gen_corruption,
                    "corruption spec JSON (default: built-in standard suite)");
    gen->add_option("--test-ratio", gen_ratio, "test split fraction")->capture_default_str();
    gen->add_flag("--independent-pq", gen_indep_pq,
                  "draw separate multipliers for P and Q demand");

    // train -------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "learn weight and bias parameters offline");
    fs::path tr_dataset, tr_out;
    TrainingConfig tr_config;
    tr_config.seed = default_seed();
    std::vector<std::string> tr_sources;
    std::string tr_combine;
    tr->add_option("dataset", tr_dataset, "dataset directory")->required();
    tr->add_option("--out", tr_out, "output parameters file")->required();
    tr->add_option("--eta", tr_config.eta, "Adam learning rate")->capture_default_str();
    tr->add_option("--beta1", tr_config.beta1, "Adam first-moment decay")->capture_default_str();
    tr->add_option("--beta2", tr_config.beta2, "Adam second-moment decay")->capture_default_str();
    tr->add_option("--batch", tr_config.batch_size, "batch size")->capture_default_str();
    tr->add_option("--iters", tr_config.max_iter, "training iterations")->capture_default_str();
    tr->add_option("--seed", tr_config.seed, "random seed")->capture_default_str();
    tr->add_option("--sigma-init", tr_config.sigma_init, "initial weights")->capture_default_str();
    tr->add_option("--bias-init", tr_config.bias_init, "initial biases")->capture_default_str();
    tr->add_option("--restore-eps", tr_config.restore_eps, "inner restoration tolerance")
        ->capture_default_str();
    tr->add_option("--sources", tr_sources, "source labels to train (default: all, separately)");
    tr->add_option("--combine", tr_combine, "comma-separated labels trained as one stacked group");

    // restore -----------------------------------------------------------
    auto* rs = app.add_subcommand("restore", "restore an AC-feasible state from measurements");
    fs::path rs_case, rs_meas, rs_out;
    std::string rs_params;
    double rs_eps = 1e-6;
    int rs_max_iter = 50;
    bool rs_damped = false, rs_no_shunt = false;
    rs->add_option("case", rs_case, "case file")->required();
    rs->add_option("measurements", rs_meas, "measurement set JSON")->required();
    rs->add_option("params", rs_params, "trained parameters file (omit for unit weights)");
    rs->add_option("--eps", rs_eps, "convergence tolerance on the step norm")
        ->capture_default_str();
    rs->add_option("--max-iter", rs_max_iter, "iteration cap")->capture_default_str();
    rs->add_option("--out", rs_out, "result JSON path");
    rs->add_flag("--damped", rs_damped, "halve steps while the objective increases");
    rs->add_flag("--no-bus-shunt-in-h", rs_no_shunt,
                 "exclude bus shunts from injection channels");

    // eval --------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "evaluate restoration methods on the test split");
    fs::path ev_dataset, ev_out;
    std::string ev_params, ev_methods = "all", ev_combine;
    bool ev_table = false;
    double ev_eps = 1e-6;
    int ev_max_iter = 50;
    ev->add_option("dataset", ev_dataset, "dataset directory")->required();
    ev->add_option("params", ev_params, "trained parameters file");
    ev->add_option("--out", ev_out, "output base path (writes .csv and .json)")->required();
    ev->add_option("--methods", ev_methods, "all or comma list of methods")
        ->capture_default_str();
    ev->add_option("--combine", ev_combine, "comma-separated labels evaluated as one stack");
    ev->add_flag("--table", ev_table, "print an aligned text table");
    ev->add_option("--eps", ev_eps, "restoration tolerance")->capture_default_str();
    ev->add_option("--max-iter", ev_max_iter, "restoration iteration cap")->capture_default_str();

    // check -------------------------------------------------------------
    auto* ck = app.add_subcommand("check", "finite-difference self checks");
    fs::path ck_case;
    bool ck_grad = false, ck_sens = false, ck_inject = false, ck_no_shunt = false;
    std::uint64_t ck_seed = default_seed();
    int ck_states = 5;
    std::string ck_dump;
    ck->add_option("case", ck_case, "case file")->required();
    ck->add_flag("--grad", ck_grad, "check the measurement Jacobian");
    ck->add_flag("--sens", ck_sens, "check the parameter sensitivities");
    ck->add_option("--dump-sens", ck_dump, "write sensitivity matrices as <path>.{dsigma,dbias}.csv");
    ck->add_option("--seed", ck_seed, "random seed")->capture_default_str();
    ck->add_option("--states", ck_states, "random states for the Jacobian check")
        ->capture_default_str();
    ck->add_flag("--inject-jacobian-error", ck_inject, "testing hook: corrupt one entry")
        ->group("");  // hidden
    ck->add_flag("--no-bus-shunt-in-h", ck_no_shunt,
                 "exclude bus shunts from injection channels");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
        app.exit(e);
        return exit_input;
    }

    try {
        if (gen->parsed())
            return cmd_gen(gen_case, gen_out, gen_count, gen_std, gen_seed, gen_corruption,
                           gen_ratio, gen_indep_pq, threads, raw_args);
        if (tr->parsed())
            return cmd_train(tr_dataset, tr_out, tr_config, tr_sources, tr_combine, threads,
                             raw_args);
        if (rs->parsed())
            return cmd_restore(rs_case, rs_meas, rs_params, rs_out, rs_eps, rs_max_iter,
                               rs_damped, rs_no_shunt, raw_args);
        if (ev->parsed())
            return cmd_eval(ev_dataset, ev_params, ev_out, ev_methods, ev_combine, ev_table,
                            ev_eps, ev_max_iter, threads, raw_args);
        if (ck->parsed())
            return cmd_check(ck_case, ck_grad, ck_sens, ck_seed, ck_states, ck_inject,
                             ck_no_shunt, ck_dump);
    } catch (const FingerprintMismatch& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_fingerprint;
    } catch (const TrainingAbort& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_no_convergence;
    } catch (const SingularSystemError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_no_convergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_input;
    }
    return exit_input;
}

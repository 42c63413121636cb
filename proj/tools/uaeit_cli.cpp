// Command-line entry point: mesh, simulate, reconstruct, verify, report.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "uaeit/harness.hpp"

namespace fs = std::filesystem;
using namespace uaeit;

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
    int threads = 1;
    bool inverse_crime = false;
};

int fail(const std::string& stage, const std::string& message) {
    std::cerr << "[" << stage << "] error: " << message << '\n';
    return 1;
}

int report_status(const RunReport& report) {
    if (report.success) {
        std::cout << report.run_id << ": ok\n";
        return 0;
    }
    return fail(report.stage, report.run_id + ": " + report.diagnostics);
}

ExperimentConfig load_config(const CommonFlags& flags) {
    if (flags.config.empty()) throw std::invalid_argument("--config is required");
    ExperimentConfig config = ExperimentConfig::load(flags.config);
    if (flags.seed) config.seed = *flags.seed;
    return config;
}

int run_mesh(const CommonFlags& flags, const std::string& mode_name) {
    ExperimentConfig config;
    try {
        config = load_config(flags);
        if (!mode_name.empty()) config.mode = recon_mode_from_string(mode_name);
    } catch (const std::exception& e) {
        return fail("config", e.what());
    }
    try {
        const Scenario sc = build_scenario(config, config.mode, flags.inverse_crime);
        fs::create_directories(flags.out);
        write_mesh_json(fs::path(flags.out) / "true_mesh.json", sc.true_mesh);
        write_mesh_json(fs::path(flags.out) / "model_mesh.json", sc.model_mesh);
        std::cout << "true mesh: " << sc.true_mesh.num_triangles() << " elements, " << sc.true_mesh.num_nodes()
                  << " nodes\nmodel mesh: " << sc.model_mesh.num_triangles() << " elements, "
                  << sc.model_mesh.num_nodes() << " nodes, " << sc.lattice.size() << " pixels\n";
    } catch (const std::exception& e) {
        return fail("mesh", e.what());
    }
    return 0;
}

int run_simulate(const CommonFlags& flags) {
    ExperimentConfig config;
    try {
        config = load_config(flags);
    } catch (const std::exception& e) {
        return fail("config", e.what());
    }
    Scenario sc;
    try {
        sc = build_scenario(config, config.mode, flags.inverse_crime);
    } catch (const std::exception& e) {
        return fail("mesh", e.what());
    }
    try {
        const DataVector data = simulate(config, sc, config.seed, flags.threads);
        fs::create_directories(flags.out);
        write_data_csv(fs::path(flags.out) / "data.csv", data, sc.protocol, sc.true_layout);
        std::cout << "wrote " << data.values.size() << " measurements (noise std " << data.noise_std << ")\n";
    } catch (const std::exception& e) {
        return fail("simulate", e.what());
    }
    return 0;
}

int run_reconstruct(const CommonFlags& flags, const std::string& mode_name, const std::string& data_path) {
    ExperimentConfig config;
    RunOptions options;
    try {
        config = load_config(flags);
        if (!mode_name.empty()) options.mode = recon_mode_from_string(mode_name);
    } catch (const std::exception& e) {
        return fail("config", e.what());
    }
    options.threads = flags.threads;
    options.inverse_crime = flags.inverse_crime;
    if (!data_path.empty()) options.data_path = data_path;
    const ExperimentResult result = run_experiment(config, options, fs::path(flags.out));
    if (result.report.success) {
        const auto& m = result.report.metrics;
        std::cout << "misfit " << m.value("data_misfit", 0.0) << ", lambda " << m.value("lambda_final", 1.0)
                  << ", iterations " << m.value("iterations", 0) << '\n';
    }
    return report_status(result.report);
}

int run_verify(const CommonFlags& flags, const std::string& suite) {
    ExperimentConfig config;
    try {
        config = load_config(flags);
    } catch (const std::exception& e) {
        return fail("config", e.what());
    }
    int status = 0;
    if (suite == "invariance" || suite == "all") {
        const RunReport r = verify_invariance(config, flags.threads);
        r.write(fs::path(flags.out) / "invariance");
        for (const auto& level : r.metrics.value("levels", nlohmann::json::array()))
            std::cout << "invariance: " << level["elements"] << " elements, relative difference "
                      << level["relative_difference"] << '\n';
        status |= report_status(r);
    }
    if (suite == "locality" || suite == "all") {
        const RunReport r = verify_locality(config, flags.threads, nullptr, fs::path(flags.out) / "locality");
        if (r.metrics.contains("anisotropic"))
            std::cout << "locality: anisotropic " << r.metrics["anisotropic"]["fraction"] << ", isotropic "
                      << r.metrics["isotropic_mismodeled"]["fraction"] << '\n';
        status |= report_status(r);
    }
    return status;
}

int run_report(const CommonFlags& flags, const std::vector<std::string>& inputs) {
    std::vector<fs::path> roots;
    for (const auto& in : inputs) roots.emplace_back(in);
    if (roots.empty()) roots.emplace_back(flags.out);
    nlohmann::json runs = nlohmann::json::array();
    bool all_ok = true;
    try {
        std::vector<fs::path> files;
        for (const auto& root : roots) {
            if (!fs::exists(root)) throw std::runtime_error("no such directory: " + root.string());
            for (const auto& entry : fs::recursive_directory_iterator(root))
                if (entry.is_regular_file() && entry.path().filename() == "report.json") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& file : files) {
            nlohmann::json j;
            std::ifstream(file) >> j;
            RunReport r = RunReport::from_json(j);
            bool manifest_ok = true;
            for (const auto& name : r.manifest) manifest_ok = manifest_ok && fs::exists(file.parent_path() / name);
            all_ok = all_ok && r.success && manifest_ok;
            nlohmann::json row = r.to_json();
            row["path"] = file.parent_path().string();
            row["manifest_complete"] = manifest_ok;
            runs.push_back(row);
        }
        fs::create_directories(flags.out);
        std::ofstream(fs::path(flags.out) / "summary.json")
            << nlohmann::json{{"runs", runs}, {"all_success", all_ok}}.dump(2) << '\n';
        std::ofstream csv(fs::path(flags.out) / "summary.csv");
        csv << "run_id,kind,success,config_hash,data_misfit,lambda_final,artifact_energy,blob_count\n";
        for (const auto& r : runs) {
            const auto& m = r["metrics"];
            csv << r["run_id"].get<std::string>() << ',' << r["kind"].get<std::string>() << ','
                << (r["success"].get<bool>() ? "true" : "false") << ',' << r["config_hash"].get<std::string>() << ','
                << m.value("data_misfit", 0.0) << ',' << m.value("lambda_final", 1.0) << ','
                << m.value("artifact_energy", 0.0) << ',' << m.value("blob_count", 0) << '\n';
        }
    } catch (const std::exception& e) {
        return fail("report", e.what());
    }
    std::cout << runs.size() << " reports, " << (all_ok ? "all successful" : "some failed") << '\n';
    return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Uniformly anisotropic EIT reconstruction toolkit"};
    app.require_subcommand(1);
    CommonFlags flags;
    std::uint64_t seed = 0;
    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", flags.config, "experiment config (JSON)");
        sub->add_option("--seed", seed, "noise seed, overrides the config");
        sub->add_option("--out", flags.out, "output directory");
        sub->add_option("--threads", flags.threads, "worker threads")->check(CLI::PositiveNumber);
        sub->add_flag("--inverse-crime", flags.inverse_crime, "simulate on the reconstruction mesh");
    };

    std::string mode, data_path, suite = "all";
    std::vector<std::string> inputs;
    auto* mesh = app.add_subcommand("mesh", "write the simulation and reconstruction meshes");
    add_common(mesh);
    mesh->add_option("--mode", mode, "reconstruction mode whose model mesh to build");
    auto* sim = app.add_subcommand("simulate", "simulate noisy measurements on the true domain");
    add_common(sim);
    auto* rec = app.add_subcommand("reconstruct", "simulate and reconstruct, writing fields and a report");
    add_common(rec);
    rec->add_option("--mode", mode, "isotropic_correct | isotropic_mismodeled | anisotropic");
    rec->add_option("--data", data_path, "use this data CSV instead of simulating");
    auto* ver = app.add_subcommand("verify", "run the invariance and locality suites");
    add_common(ver);
    ver->add_option("--suite", suite, "invariance | locality | all")
        ->check(CLI::IsMember({"invariance", "locality", "all"}));
    auto* rep = app.add_subcommand("report", "aggregate report.json files below the inputs");
    add_common(rep);
    rep->add_option("inputs", inputs, "directories to scan (default: --out)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }
    for (auto* sub : {mesh, sim, rec, ver, rep})
        if (sub->parsed() && sub->count("--seed")) flags.seed = seed;

    try {
        if (mesh->parsed()) return run_mesh(flags, mode);
        if (sim->parsed()) return run_simulate(flags);
        if (rec->parsed()) return run_reconstruct(flags, mode, data_path);
        if (ver->parsed()) return run_verify(flags, suite);
        if (rep->parsed()) return run_report(flags, inputs);
    } catch (const std::exception& e) {
        return fail("internal", e.what());
    }
    return 2;
}

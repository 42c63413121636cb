#include "uaeit/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace uaeit {

namespace {

constexpr std::size_t kBoundarySamples = 8192;

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

Vec2 vec_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 2) throw std::invalid_argument("expected a point [x, y]");
    return {j[0].get<double>(), j[1].get<double>()};
}

nlohmann::json inclusion_to_json(const Inclusion& inc) {
    return {{"center", {inc.center.x(), inc.center.y()}}, {"radius", inc.radius}, {"amplitude", inc.amplitude}};
}

Inclusion inclusion_from_json(const nlohmann::json& j) {
    Inclusion inc;
    inc.center = vec_from_json(j.at("center"));
    inc.radius = j.at("radius").get<double>();
    inc.amplitude = j.at("amplitude").get<double>();
    return inc;
}

nlohmann::json weights_to_json(const RegWeights& w) {
    return {{"alpha0", w.alpha0}, {"alpha1", w.alpha1}, {"beta0", w.beta0},
            {"beta1", w.beta1},   {"beta2", w.beta2},   {"nu", w.nu}};
}

RegWeights weights_from_json(const nlohmann::json& j) {
    RegWeights w;
    w.alpha0 = get_or(j, "alpha0", 0.0);
    w.alpha1 = get_or(j, "alpha1", 0.0);
    w.beta0 = get_or(j, "beta0", 0.0);
    w.beta1 = get_or(j, "beta1", 0.0);
    w.beta2 = get_or(j, "beta2", 0.0);
    w.nu = get_or(j, "nu", 1.0);
    return w;
}

BarrierSchedule schedule_from_json(const nlohmann::json& j) {
    if (j.contains("xi")) return {j.at("xi").get<std::vector<double>>()};
    const std::string type = get_or<std::string>(j, "type", "inactive");
    if (type == "inactive") return BarrierSchedule::inactive(get_or<std::size_t>(j, "stages", 1));
    if (type == "geometric")
        return BarrierSchedule::geometric(j.at("start").get<double>(), j.at("end").get<double>(),
                                          get_or<std::size_t>(j, "stages", 8));
    throw std::invalid_argument("unknown barrier schedule type '" + type + "'");
}

nlohmann::json gn_to_json(const GaussNewtonSettings& s) {
    return {{"max_inner_iterations", s.max_inner_iterations},
            {"max_total_iterations", s.max_total_iterations},
            {"relative_decrease_tol", s.relative_decrease_tol},
            {"step_tol", s.step_tol},
            {"armijo", s.armijo},
            {"backtrack", s.backtrack},
            {"max_backtracks", s.max_backtracks},
            {"damping", s.damping}};
}

GaussNewtonSettings gn_from_json(const nlohmann::json& j) {
    GaussNewtonSettings s;
    s.max_inner_iterations = get_or(j, "max_inner_iterations", s.max_inner_iterations);
    s.max_total_iterations = get_or(j, "max_total_iterations", s.max_total_iterations);
    s.relative_decrease_tol = get_or(j, "relative_decrease_tol", s.relative_decrease_tol);
    s.step_tol = get_or(j, "step_tol", s.step_tol);
    s.armijo = get_or(j, "armijo", s.armijo);
    s.backtrack = get_or(j, "backtrack", s.backtrack);
    s.max_backtracks = get_or(j, "max_backtracks", s.max_backtracks);
    s.damping = get_or(j, "damping", s.damping);
    return s;
}

std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ExperimentConfig with_overrides(const ExperimentConfig& config, const RunOptions& options) {
    ExperimentConfig c = config;
    if (options.mode) c.mode = *options.mode;
    if (options.seed) c.seed = *options.seed;
    return c;
}

struct StageError : std::runtime_error {
    StageError(std::string stage_name, const std::string& what)
        : std::runtime_error(what), stage(std::move(stage_name)) {}
    std::string stage;
};

template <typename F>
auto in_stage(const std::string& stage, F&& f) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

double plateau_variation(const std::vector<double>& trace) {
    if (trace.size() < 3) return std::numeric_limits<double>::infinity();
    const auto first = trace.end() - 3;
    const auto [lo, hi] = std::minmax_element(first, trace.end());
    const double mean = (trace[trace.size() - 1] + trace[trace.size() - 2] + trace[trace.size() - 3]) / 3.0;
    return (*hi - *lo) / std::abs(mean);
}

Eigen::VectorXd final_prediction(const ReconState& state, const ForwardModel& model) {
    return state.anisotropic ? model.predict(state.params) : model.predict_isotropic(state.gamma);
}

ReconState reconstruct(const ExperimentConfig& config, ReconMode mode, const Scenario& scenario,
                       const Eigen::VectorXd& data, int threads, double* initial_misfit, double* final_misfit) {
    const ModeSettings& s = config.settings(mode);
    const ForwardModel model(scenario.model_mesh, scenario.model_layout, scenario.protocol, scenario.lattice, threads);
    GaussNewtonSettings gn = config.gauss_newton;
    gn.threads = threads;
    ReconState state = mode == ReconMode::anisotropic
                           ? gauss_newton_reconstruct(data, model, scenario.graph, s.weights, s.schedule, gn)
                           : isotropic_reconstruct(data, model, scenario.graph, s.weights, s.schedule, gn);
    if (initial_misfit)
        *initial_misfit = (model.predict_isotropic(Eigen::VectorXd::Ones(
                               static_cast<Eigen::Index>(scenario.lattice.size()))) - data)
                              .squaredNorm();
    if (final_misfit) *final_misfit = (final_prediction(state, model) - data).squaredNorm();
    return state;
}

}  // namespace

// --- phantom -------------------------------------------------------------------

double Inclusion::value(const Vec2& x) const {
    const double t2 = (x - center).squaredNorm() / (radius * radius);
    if (t2 >= 1.0) return 0.0;
    const double q = 1.0 - t2;
    return amplitude * q * q * q;
}

double Phantom::value(const Vec2& x) const {
    double v = background;
    for (const auto& inc : inclusions) v += inc.value(x);
    return v;
}

TensorField Phantom::sample(const Mesh& mesh) const {
    TensorField field;
    field.values.reserve(mesh.num_triangles());
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) field.values.push_back(Tensor2::isotropic(value(mesh.centroid(t))));
    return field;
}

Phantom Phantom::with(const Inclusion& extra) const {
    Phantom p = *this;
    p.inclusions.push_back(extra);
    return p;
}

void Phantom::validate() const {
    double lowest = background;
    for (const auto& inc : inclusions) {
        if (!(inc.radius > 0.0)) throw std::invalid_argument("inclusion radius must be positive");
        lowest -= std::max(0.0, -inc.amplitude);
    }
    if (!(lowest > 0.0)) throw std::invalid_argument("phantom conductivity can become nonpositive");
}

// --- config -------------------------------------------------------------------

std::string to_string(ReconMode mode) {
    switch (mode) {
        case ReconMode::isotropic_correct: return "isotropic_correct";
        case ReconMode::isotropic_mismodeled: return "isotropic_mismodeled";
        case ReconMode::anisotropic: return "anisotropic";
    }
    return "unknown";
}

ReconMode recon_mode_from_string(const std::string& name) {
    if (name == "isotropic_correct" || name == "isotropic-correct") return ReconMode::isotropic_correct;
    if (name == "isotropic_mismodeled" || name == "isotropic-mismodeled") return ReconMode::isotropic_mismodeled;
    if (name == "anisotropic" || name == "uniformly_anisotropic" || name == "uniformly-anisotropic")
        return ReconMode::anisotropic;
    throw std::invalid_argument("unknown reconstruction mode '" + name + "'");
}

nlohmann::json domain_to_json(const DomainSpec& spec) {
    nlohmann::json j{{"kind", to_string(spec.kind)}};
    switch (spec.kind) {
        case DomainKind::disk: j["radius"] = spec.a; break;
        case DomainKind::ellipse:
            j["a"] = spec.a;
            j["b"] = spec.b;
            break;
        case DomainKind::truncated_ellipse:
            j["a"] = spec.a;
            j["b"] = spec.b;
            j["cut"] = spec.cut;
            j["corner_rounding"] = spec.corner_rounding;
            break;
        case DomainKind::fourier:
            j["cos"] = spec.fourier_cos;
            j["sin"] = spec.fourier_sin;
            break;
    }
    return j;
}

DomainSpec domain_from_json(const nlohmann::json& j) {
    const DomainKind kind = domain_kind_from_string(j.at("kind").get<std::string>());
    DomainSpec spec;
    switch (kind) {
        case DomainKind::disk: spec = DomainSpec::disk(get_or(j, "radius", 1.0)); break;
        case DomainKind::ellipse: spec = DomainSpec::ellipse(j.at("a").get<double>(), j.at("b").get<double>()); break;
        case DomainKind::truncated_ellipse: {
            spec.kind = DomainKind::truncated_ellipse;
            spec.a = j.at("a").get<double>();
            spec.b = j.at("b").get<double>();
            spec.cut = get_or(j, "cut", spec.cut);
            spec.corner_rounding = get_or(j, "corner_rounding", spec.corner_rounding);
            spec.calibrate_corners();
            break;
        }
        case DomainKind::fourier:
            spec = (j.contains("cos") || j.contains("sin"))
                       ? DomainSpec::fourier(get_or(j, "cos", std::vector<double>{}),
                                             get_or(j, "sin", std::vector<double>{}))
                       : DomainSpec::fourier_default();
            break;
    }
    spec.validate();
    return spec;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.name = get_or<std::string>(j, "name", c.name);
    c.true_domain = domain_from_json(j.at("true_domain"));
    c.model_domain = j.contains("model_domain") ? domain_from_json(j.at("model_domain")) : DomainSpec::disk();
    if (j.contains("phantom")) {
        const auto& p = j.at("phantom");
        c.phantom.background = get_or(p, "background", 1.0);
        for (const auto& inc : get_or(p, "inclusions", nlohmann::json::array()))
            c.phantom.inclusions.push_back(inclusion_from_json(inc));
    }
    if (j.contains("electrodes")) {
        const auto& e = j.at("electrodes");
        c.electrodes = get_or(e, "count", c.electrodes);
        c.coverage = get_or(e, "coverage", c.coverage);
        c.contact_impedance = get_or(e, "contact_impedance", c.contact_impedance);
    }
    if (j.contains("noise")) {
        const auto& n = j.at("noise");
        c.noise_fraction = get_or(n, "fraction", c.noise_fraction);
        c.seed = get_or(n, "seed", c.seed);
    }
    if (j.contains("mesh")) c.simulation_elements = get_or(j.at("mesh"), "simulation_elements", c.simulation_elements);
    c.mode = recon_mode_from_string(get_or<std::string>(j, "mode", "anisotropic"));
    if (j.contains("modes"))
        for (const auto& [key, value] : j.at("modes").items()) {
            ModeSettings m;
            m.mesh_elements = get_or(value, "mesh_elements", m.mesh_elements);
            m.pixels = get_or(value, "pixels", m.pixels);
            if (value.contains("weights")) m.weights = weights_from_json(value.at("weights"));
            if (value.contains("barrier")) m.schedule = schedule_from_json(value.at("barrier"));
            c.modes[recon_mode_from_string(key)] = m;
        }
    if (j.contains("gauss_newton")) c.gauss_newton = gn_from_json(j.at("gauss_newton"));
    if (j.contains("locality")) c.locality_perturbation = inclusion_from_json(j.at("locality"));
    if (j.contains("invariance")) {
        const auto& inv = j.at("invariance");
        c.invariance_radial_c = get_or(inv, "radial_c", c.invariance_radial_c);
        c.invariance_levels = get_or(inv, "levels", c.invariance_levels);
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["name"] = name;
    j["true_domain"] = domain_to_json(true_domain);
    j["model_domain"] = domain_to_json(model_domain);
    nlohmann::json inclusions = nlohmann::json::array();
    for (const auto& inc : phantom.inclusions) inclusions.push_back(inclusion_to_json(inc));
    j["phantom"] = {{"background", phantom.background}, {"inclusions", inclusions}};
    j["electrodes"] = {{"count", electrodes}, {"coverage", coverage}, {"contact_impedance", contact_impedance}};
    j["noise"] = {{"fraction", noise_fraction}, {"seed", seed}};
    j["mesh"] = {{"simulation_elements", simulation_elements}};
    j["mode"] = to_string(mode);
    nlohmann::json modes_json = nlohmann::json::object();
    for (const auto& [m, s] : modes)
        modes_json[to_string(m)] = {{"mesh_elements", s.mesh_elements},
                                    {"pixels", s.pixels},
                                    {"weights", weights_to_json(s.weights)},
                                    {"barrier", {{"xi", s.schedule.xi}}}};
    j["modes"] = modes_json;
    j["gauss_newton"] = gn_to_json(gauss_newton);
    j["locality"] = inclusion_to_json(locality_perturbation);
    j["invariance"] = {{"radial_c", invariance_radial_c}, {"levels", invariance_levels}};
    return j;
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(to_json().dump()); }

void ExperimentConfig::validate() const {
    true_domain.validate();
    model_domain.validate();
    phantom.validate();
    if (electrodes < 4) throw std::invalid_argument("at least 4 electrodes are required");
    if (!(coverage > 0.0 && coverage < 1.0)) throw std::invalid_argument("electrode coverage must lie in (0, 1)");
    if (!(contact_impedance > 0.0)) throw std::invalid_argument("contact impedance must be positive");
    if (!(noise_fraction >= 0.0)) throw std::invalid_argument("noise fraction must be nonnegative");
    if (simulation_elements < 100) throw std::invalid_argument("simulation mesh is too coarse");
    for (const auto& [m, s] : modes) {
        s.weights.validate();
        s.schedule.validate();
        if (s.pixels == 0 || s.pixels > s.mesh_elements)
            throw std::invalid_argument("mode " + to_string(m) + ": pixel count must lie in [1, mesh_elements]");
    }
    if (!modes.count(mode)) throw std::invalid_argument("no settings for the selected mode " + to_string(mode));
    if (!(std::abs(invariance_radial_c) <= 0.5)) throw std::invalid_argument("invariance radial_c must be in [-0.5, 0.5]");
    if (!(locality_perturbation.radius > 0.0)) throw std::invalid_argument("locality perturbation radius must be positive");
}

const ModeSettings& ExperimentConfig::settings(ReconMode m) const {
    const auto it = modes.find(m);
    if (it == modes.end()) throw std::invalid_argument("no settings for mode " + to_string(m));
    return it->second;
}

// --- scenario -------------------------------------------------------------------

Scenario build_scenario(const ExperimentConfig& config, ReconMode mode, bool inverse_crime) {
    const ModeSettings& s = config.settings(mode);
    Scenario sc;
    sc.inverse_crime = inverse_crime;
    sc.true_curve = build_boundary(config.true_domain, kBoundarySamples);
    sc.true_layout = place_electrodes(sc.true_curve, config.electrodes, config.coverage, 0.0, config.contact_impedance);

    const DomainSpec& model_domain = mode == ReconMode::isotropic_correct ? config.true_domain : config.model_domain;
    sc.mismodeled = mode != ReconMode::isotropic_correct;
    sc.model_curve = build_boundary(model_domain, kBoundarySamples);
    const double electrode_length = sc.true_layout.lengths[0];
    const double model_coverage = static_cast<double>(config.electrodes) * electrode_length / sc.model_curve.total_length;
    if (!(model_coverage < 1.0))
        throw std::invalid_argument("model boundary is too short for electrodes of the true arc length");
    sc.model_layout = place_electrodes(sc.model_curve, config.electrodes, model_coverage, 0.0, config.contact_impedance);
    sc.model_mesh = triangulate(sc.model_curve, sc.model_layout, s.mesh_elements);

    if (inverse_crime) {
        sc.true_curve = sc.model_curve;
        sc.true_layout = sc.model_layout;
        sc.true_mesh = sc.model_mesh;
        sc.mismodeled = false;
    } else {
        sc.true_mesh = triangulate(sc.true_curve, sc.true_layout, config.simulation_elements);
        if (!sc.mismodeled && sc.true_mesh.num_nodes() == sc.model_mesh.num_nodes())
            throw std::invalid_argument(
                "simulation and reconstruction meshes coincide; choose different element targets");
    }
    sc.lattice = build_pixel_lattice(sc.model_mesh, s.pixels);
    sc.graph = NeighborGraph::from_lattice(sc.lattice);
    sc.protocol = adjacent_protocol(config.electrodes);
    return sc;
}

void write_mesh_json(const std::filesystem::path& path, const Mesh& mesh) {
    nlohmann::json j;
    nlohmann::json nodes = nlohmann::json::array(), triangles = nlohmann::json::array(),
                   edges = nlohmann::json::array();
    for (const auto& p : mesh.nodes) nodes.push_back({p.x(), p.y()});
    for (const auto& t : mesh.triangles) triangles.push_back({t[0], t[1], t[2]});
    for (const auto& e : mesh.boundary_edges)
        if (e.electrode >= 0) edges.push_back({{"nodes", {e.nodes[0], e.nodes[1]}}, {"electrode", e.electrode}});
    j["nodes"] = nodes;
    j["triangles"] = triangles;
    j["electrode_edges"] = edges;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << j.dump() << '\n';
}

DataVector simulate(const ExperimentConfig& config, const Scenario& scenario, std::uint64_t seed, int threads) {
    return simulate_measurements(scenario.true_mesh, config.phantom.sample(scenario.true_mesh), scenario.true_layout,
                                 scenario.protocol, config.noise_fraction, seed, threads);
}

// --- reports -----------------------------------------------------------------

nlohmann::json RunReport::to_json() const {
    return {{"run_id", run_id},   {"config_hash", config_hash}, {"kind", kind},
            {"success", success}, {"stage", stage},             {"diagnostics", diagnostics},
            {"metrics", metrics}, {"manifest", manifest}};
}

RunReport RunReport::from_json(const nlohmann::json& j) {
    RunReport r;
    r.run_id = j.at("run_id").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.kind = get_or<std::string>(j, "kind", "");
    r.success = j.at("success").get<bool>();
    r.stage = get_or<std::string>(j, "stage", "");
    r.diagnostics = get_or<std::string>(j, "diagnostics", "");
    r.metrics = get_or(j, "metrics", nlohmann::json::object());
    r.manifest = get_or(j, "manifest", std::vector<std::string>{});
    return r;
}

void RunReport::write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    RunReport copy = *this;
    if (std::find(copy.manifest.begin(), copy.manifest.end(), "report.json") == copy.manifest.end())
        copy.manifest.push_back("report.json");
    std::ofstream out(dir / "report.json");
    if (!out) throw std::runtime_error("cannot write " + (dir / "report.json").string());
    out << copy.to_json().dump(2) << '\n';
}

// --- experiment ---------------------------------------------------------------

ExperimentResult run_experiment(const ExperimentConfig& base, const RunOptions& options,
                                const std::optional<std::filesystem::path>& out_dir) {
    ExperimentResult result;
    RunReport& report = result.report;
    report.kind = "reconstruct";
    try {
        const ExperimentConfig config = in_stage("config", [&] {
            ExperimentConfig c = with_overrides(base, options);
            c.validate();
            return c;
        });
        const ReconMode mode = config.mode;
        report.config_hash = config.hash();
        report.run_id = config.name + "_" + to_string(mode) + (options.inverse_crime ? "_crime" : "") + "_s" +
                        std::to_string(config.seed) + "_" + report.config_hash.substr(0, 8);

        result.scenario = in_stage("mesh", [&] { return build_scenario(config, mode, options.inverse_crime); });
        const Scenario& sc = result.scenario;

        result.data = in_stage("simulate", [&] {
            if (!options.data_path) return simulate(config, sc, config.seed, options.threads);
            DataVector d = read_data_csv(*options.data_path);
            if (static_cast<std::size_t>(d.values.size()) != sc.protocol.size())
                throw std::runtime_error("data file has " + std::to_string(d.values.size()) + " values, expected " +
                                         std::to_string(sc.protocol.size()));
            return d;
        });

        double initial_misfit = 0.0, final_misfit = 0.0;
        result.state = in_stage("reconstruct", [&] {
            return reconstruct(config, mode, sc, result.data.values, options.threads, &initial_misfit, &final_misfit);
        });
        const ReconState& st = result.state;
        result.image = pixel_to_elements(st.image(), sc.lattice);

        auto& m = report.metrics;
        m["mode"] = to_string(mode);
        m["seed"] = config.seed;
        m["inverse_crime"] = options.inverse_crime;
        m["simulation_elements"] = sc.true_mesh.num_triangles();
        m["simulation_nodes"] = sc.true_mesh.num_nodes();
        m["model_elements"] = sc.model_mesh.num_triangles();
        m["model_nodes"] = sc.model_mesh.num_nodes();
        m["pixels"] = sc.lattice.size();
        m["data_size"] = sc.protocol.size();
        m["noise_std"] = result.data.noise_std;
        m["initial_misfit"] = initial_misfit;
        m["data_misfit"] = final_misfit;
        m["converged"] = st.converged;
        m["hit_iteration_cap"] = st.hit_iteration_cap;
        m["iterations"] = st.history.size();
        m["message"] = st.message;
        m["lambda_final"] = st.params.lambda;
        m["lambda_trace"] = st.lambda_trace;
        m["lambda_plateau_variation"] = plateau_variation(st.lambda_trace);
        m["artifact_energy"] = boundary_artifact_energy(result.image, sc.model_mesh);

        const Raster raster = rasterize(result.image, sc.model_mesh, 128);
        const auto blobs = find_blobs(raster);
        nlohmann::json blobs_json = nlohmann::json::array();
        for (const auto& b : blobs)
            blobs_json.push_back({{"sign", b.sign},
                                  {"centroid", {b.centroid.x(), b.centroid.y()}},
                                  {"peak", b.peak},
                                  {"pixels", b.pixels}});
        m["blob_count"] = blobs.size();
        m["blobs"] = blobs_json;
        nlohmann::json errors = nlohmann::json::array();
        for (const auto& inc : config.phantom.inclusions) {
            const Vec2 target = sc.inverse_crime ? inc.center
                                                 : expected_image(inc.center, config.true_domain, sc.true_curve,
                                                                  sc.model_curve);
            const int sign = inc.amplitude >= 0.0 ? 1 : -1;
            double best = std::numeric_limits<double>::infinity();
            for (const auto& b : blobs)
                if (b.sign == sign) best = std::min(best, (b.centroid - target).norm());
            errors.push_back({{"expected", {target.x(), target.y()}},
                              {"error", std::isfinite(best) ? nlohmann::json(best) : nlohmann::json(nullptr)}});
        }
        m["centroid_errors"] = errors;

        if (out_dir) {
            in_stage("export", [&] {
                const auto& dir = *out_dir;
                std::filesystem::create_directories(dir);
                write_data_csv(dir / "data.csv", result.data, sc.protocol, sc.true_layout);
                write_recon_csv(dir / "recon.csv", st);
                write_run_log(dir / "run_log.json", st);
                export_field_image(result.image, sc.model_mesh, dir / "image.csv", dir / "image.pgm");
                write_mesh_json(dir / "model_mesh.json", sc.model_mesh);
                report.manifest = {"data.csv", "recon.csv", "run_log.json", "image.csv", "image.pgm", "model_mesh.json"};
                if (st.anisotropic) {
                    export_field_image(pixel_to_elements(st.params.theta, sc.lattice), sc.model_mesh,
                                       dir / "theta.csv", dir / "theta.pgm");
                    report.manifest.push_back("theta.csv");
                    report.manifest.push_back("theta.pgm");
                }
                std::ofstream(dir / "config.json") << config.to_json().dump(2) << '\n';
                report.manifest.push_back("config.json");
                return 0;
            });
        }
        if (!st.converged) {
            report.success = false;
            report.stage = "reconstruct";
            report.diagnostics = st.message;
        }
    } catch (const StageError& e) {
        report.success = false;
        report.stage = e.stage;
        report.diagnostics = e.what();
    }
    if (out_dir) report.write(*out_dir);
    return result;
}

// --- verification suites -------------------------------------------------------

RunReport verify_invariance(const ExperimentConfig& config, int threads, std::vector<InvarianceLevel>* levels_out) {
    RunReport report;
    report.kind = "invariance";
    report.config_hash = config.hash();
    report.run_id = config.name + "_invariance_" + report.config_hash.substr(0, 8);
    std::vector<InvarianceLevel> levels;
    try {
        const DomainSpec disk = DomainSpec::disk();
        const BoundaryCurve curve = build_boundary(disk, kBoundarySamples);
        const ElectrodeLayout layout =
            place_electrodes(curve, config.electrodes, config.coverage, 0.0, config.contact_impedance);
        const MeasurementProtocol protocol = adjacent_protocol(config.electrodes);
        const Diffeo map = Diffeo::radial(config.invariance_radial_c);
        const auto analytic = [&](const Vec2& y) { return Tensor2::isotropic(config.phantom.value(y)); };
        const auto clean = [&](const Mesh& mesh, const TensorField& field) {
            const CemSystem system(mesh, field, layout);
            return measure(protocol, system.solve_many(protocol.patterns, threads));
        };

        double identity_difference = 0.0;
        for (std::size_t level = 0; level < config.invariance_levels.size(); ++level) {
            const Mesh mesh = in_stage("mesh", [&] { return triangulate(curve, layout, config.invariance_levels[level]); });
            const Eigen::VectorXd base = in_stage("simulate", [&] { return clean(mesh, config.phantom.sample(mesh)); });
            if (level == 0) {
                const Eigen::VectorXd same =
                    in_stage("simulate", [&] { return clean(mesh, push_forward(analytic, Diffeo::identity(), mesh)); });
                identity_difference = (same - base).norm() / base.norm();
            }
            const Eigen::VectorXd pushed =
                in_stage("simulate", [&] { return clean(mesh, push_forward(analytic, map, mesh)); });
            levels.push_back({config.invariance_levels[level], mesh.num_triangles(), (pushed - base).norm() / base.norm()});
        }

        nlohmann::json lv = nlohmann::json::array();
        bool monotone = true;
        for (std::size_t i = 0; i < levels.size(); ++i) {
            double factor = 0.0;
            if (i > 0) {
                factor = levels[i - 1].relative_difference / levels[i].relative_difference;
                monotone = monotone && factor >= 1.5;
            }
            lv.push_back({{"target_elements", levels[i].target_elements},
                          {"elements", levels[i].elements},
                          {"relative_difference", levels[i].relative_difference},
                          {"decrease_factor", i > 0 ? nlohmann::json(factor) : nlohmann::json(nullptr)}});
        }
        report.metrics["radial_c"] = config.invariance_radial_c;
        report.metrics["identity_difference"] = identity_difference;
        report.metrics["levels"] = lv;
        const bool coarse_ok = !levels.empty() && levels.front().relative_difference < 0.02;
        report.metrics["coarse_below_threshold"] = coarse_ok;
        report.metrics["monotone_refinement"] = monotone;
        if (!(coarse_ok && monotone && identity_difference == 0.0)) {
            report.success = false;
            report.stage = "verify";
            report.diagnostics = !monotone ? "non-monotone refinement trend"
                                 : !coarse_ok ? "coarse-level data difference above 2%"
                                              : "identity map changed the data";
        }
    } catch (const StageError& e) {
        report.success = false;
        report.stage = e.stage;
        report.diagnostics = e.what();
    }
    if (levels_out) *levels_out = levels;
    return report;
}

RunReport verify_locality(const ExperimentConfig& config, int threads, LocalityResult* result,
                          const std::optional<std::filesystem::path>& out_dir) {
    RunReport report;
    report.kind = "locality";
    report.config_hash = config.hash();
    report.run_id = config.name + "_locality_" + report.config_hash.substr(0, 8);
    LocalityResult out;
    try {
        ExperimentConfig perturbed = config;
        perturbed.phantom = config.phantom.with(config.locality_perturbation);
        in_stage("config", [&] {
            perturbed.validate();
            return 0;
        });
        for (ReconMode mode : {ReconMode::anisotropic, ReconMode::isotropic_mismodeled}) {
            const Scenario sc = in_stage("mesh", [&] { return build_scenario(config, mode); });
            const DataVector d1 = in_stage("simulate", [&] { return simulate(config, sc, config.seed, threads); });
            const DataVector d2 = in_stage("simulate", [&] { return simulate(perturbed, sc, config.seed, threads); });
            const ReconState s1 = in_stage("reconstruct", [&] {
                return reconstruct(config, mode, sc, d1.values, threads, nullptr, nullptr);
            });
            const ReconState s2 = in_stage("reconstruct", [&] {
                return reconstruct(config, mode, sc, d2.values, threads, nullptr, nullptr);
            });
            out.converged = out.converged && s1.converged && s2.converged;
            const auto e1 = pixel_to_elements(s1.image(), sc.lattice);
            const auto e2 = pixel_to_elements(s2.image(), sc.lattice);
            std::vector<double> delta(e1.size());
            for (std::size_t t = 0; t < delta.size(); ++t) delta[t] = e2[t] - e1[t];
            Vec2 peak;
            const double fraction = locality_fraction(delta, sc.model_mesh, 0.3, &peak);
            const Vec2 expected =
                expected_image(config.locality_perturbation.center, config.true_domain, sc.true_curve, sc.model_curve);
            const std::string key = to_string(mode);
            report.metrics[key] = {{"fraction", fraction},
                                   {"peak", {peak.x(), peak.y()}},
                                   {"expected_image", {expected.x(), expected.y()}},
                                   {"peak_distance", (peak - expected).norm()},
                                   {"converged", s1.converged && s2.converged}};
            if (mode == ReconMode::anisotropic) {
                out.anisotropic_fraction = fraction;
                out.anisotropic_peak = peak;
            } else {
                out.isotropic_fraction = fraction;
                out.isotropic_peak = peak;
            }
            if (out_dir) {
                std::filesystem::create_directories(*out_dir);
                export_field_image(delta, sc.model_mesh, *out_dir / ("delta_" + key + ".csv"),
                                   *out_dir / ("delta_" + key + ".pgm"));
                report.manifest.push_back("delta_" + key + ".csv");
                report.manifest.push_back("delta_" + key + ".pgm");
            }
        }
        report.metrics["radius"] = 0.3;
        if (!out.converged) {
            report.success = false;
            report.stage = "reconstruct";
            report.diagnostics = "a locality reconstruction did not converge";
        } else if (!(out.anisotropic_fraction >= 0.6 && out.isotropic_fraction < out.anisotropic_fraction)) {
            report.success = false;
            report.stage = "verify";
            report.diagnostics = "anisotropic locality fraction below 0.6 or not above the isotropic one";
        }
    } catch (const StageError& e) {
        report.success = false;
        report.stage = e.stage;
        report.diagnostics = e.what();
    }
    if (result) *result = out;
    if (out_dir) report.write(*out_dir);
    return report;
}

}  // namespace uaeit

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uaeit/fem.hpp"
#include "uaeit/geometry.hpp"
#include "uaeit/inverse.hpp"
#include "uaeit/tensors.hpp"

namespace uaeit {

/// Smooth bump amplitude * (1 - |x - center|^2 / radius^2)^3, zero outside.
struct Inclusion {
    Vec2 center = Vec2::Zero();
    double radius = 0.25;
    double amplitude = 1.0;

    double value(const Vec2& x) const;
};

/// Isotropic ground truth: background plus bumps.
struct Phantom {
    double background = 1.0;
    std::vector<Inclusion> inclusions;

    double value(const Vec2& x) const;
    /// Sampled at element centroids.
    TensorField sample(const Mesh& mesh) const;
    Phantom with(const Inclusion& extra) const;
    /// Throws if the conductivity can become nonpositive.
    void validate() const;
};

enum class ReconMode { isotropic_correct, isotropic_mismodeled, anisotropic };
std::string to_string(ReconMode mode);
ReconMode recon_mode_from_string(const std::string& name);

/// Reconstruction mesh, lattice and weights for one mode.
struct ModeSettings {
    std::size_t mesh_elements = 2190;
    std::size_t pixels = 437;
    RegWeights weights;
    BarrierSchedule schedule = BarrierSchedule::inactive();
};

struct ExperimentConfig {
    std::string name = "experiment";
    DomainSpec true_domain = DomainSpec::disk();
    DomainSpec model_domain = DomainSpec::disk();
    Phantom phantom;
    std::size_t electrodes = 16;
    double coverage = 0.5;
    double contact_impedance = 1.0;
    double noise_fraction = 0.01;
    std::uint64_t seed = 1;
    std::size_t simulation_elements = 2350;
    ReconMode mode = ReconMode::anisotropic;
    std::map<ReconMode, ModeSettings> modes;
    GaussNewtonSettings gauss_newton;
    /// Extra bump used by the locality suite.
    Inclusion locality_perturbation{Vec2(0.3, -0.3), 0.25, 1.0};
    /// Boundary-preserving radial map strength and mesh sizes of the invariance suite.
    double invariance_radial_c = 0.3;
    std::vector<std::size_t> invariance_levels{2200, 8800, 35200};

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
    /// FNV-1a of the canonical (sorted-key) serialization, 16 hex digits.
    std::string hash() const;
    void validate() const;
    const ModeSettings& settings(ReconMode m) const;
};

nlohmann::json domain_to_json(const DomainSpec& spec);
DomainSpec domain_from_json(const nlohmann::json& j);

/// Geometry shared by simulation and reconstruction for one mode.
struct Scenario {
    BoundaryCurve true_curve;
    ElectrodeLayout true_layout;
    Mesh true_mesh;
    BoundaryCurve model_curve;
    ElectrodeLayout model_layout;
    Mesh model_mesh;
    PixelLattice lattice;
    NeighborGraph graph;
    MeasurementProtocol protocol;
    bool inverse_crime = false;
    bool mismodeled = false;  // model domain differs from the true domain
};

/// Builds both meshes. The model electrodes get the same arc length as the
/// true ones. With inverse_crime the data are simulated on the model mesh.
Scenario build_scenario(const ExperimentConfig& config, ReconMode mode, bool inverse_crime = false);

void write_mesh_json(const std::filesystem::path& path, const Mesh& mesh);

struct RunOptions {
    std::optional<ReconMode> mode;  // overrides config.mode
    std::optional<std::uint64_t> seed;
    bool inverse_crime = false;
    int threads = 1;
    std::optional<std::filesystem::path> data_path;  // reuse simulated data instead of simulating
};

struct RunReport {
    std::string run_id;
    std::string config_hash;
    std::string kind;  // reconstruct, invariance, locality
    bool success = true;
    std::string stage;        // failing stage, empty on success
    std::string diagnostics;
    nlohmann::json metrics = nlohmann::json::object();
    std::vector<std::string> manifest;  // files written, relative to the output directory

    nlohmann::json to_json() const;
    static RunReport from_json(const nlohmann::json& j);
    void write(const std::filesystem::path& dir) const;
};

struct ExperimentResult {
    RunReport report;
    ReconState state;
    DataVector data;
    Scenario scenario;
    std::vector<double> image;  // per model element: eta or gamma
};

/// Simulate on the true domain, reconstruct on the model domain and, when
/// out_dir is given, write data, fields, logs and the report there.
ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options,
                                const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Simulated data for the configured phantom on the true mesh.
DataVector simulate(const ExperimentConfig& config, const Scenario& scenario, std::uint64_t seed, int threads = 1);

struct InvarianceLevel {
    std::size_t target_elements = 0;
    std::size_t elements = 0;
    double relative_difference = 0.0;
};

/// Clean data for the phantom and its radial push-forward on the unit disk at
/// each refinement level; passes when the first difference is below 2% and
/// each refinement lowers it by at least 1.5x.
RunReport verify_invariance(const ExperimentConfig& config, int threads = 1,
                            std::vector<InvarianceLevel>* levels = nullptr);

struct LocalityResult {
    double anisotropic_fraction = 0.0;
    double isotropic_fraction = 0.0;
    Vec2 anisotropic_peak = Vec2::Zero();
    Vec2 isotropic_peak = Vec2::Zero();
    bool converged = true;
};

/// Reconstructs with and without the locality perturbation in the anisotropic
/// and the isotropic-mismodeled modes and compares the energy concentration
/// of the image differences.
RunReport verify_locality(const ExperimentConfig& config, int threads = 1, LocalityResult* result = nullptr,
                          const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// --- field export and image metrics -----------------------------------------

/// Element CSV ("element,value", 17 digits) and a 256x256 binary PGM with
/// min-max scaling, background 0 and mid-gray for a constant field.
void export_field_image(const std::vector<double>& values, const Mesh& mesh, const std::filesystem::path& csv_path,
                        const std::filesystem::path& pgm_path, int raster = 256);
std::vector<double> read_field_csv(const std::filesystem::path& path);

/// Row-major raster over the mesh bounding box; NaN outside the mesh.
struct Raster {
    int width = 0;
    int height = 0;
    Vec2 origin = Vec2::Zero();
    double cell = 0.0;
    std::vector<double> values;

    bool inside(int ix, int iy) const;
    Vec2 center(int ix, int iy) const;
};
Raster rasterize(const std::vector<double>& values, const Mesh& mesh, int resolution);

struct Blob {
    int sign = 1;
    Vec2 centroid = Vec2::Zero();
    double peak = 0.0;  // |deviation| at the extremum
    int pixels = 0;
};

/// Connected regions deviating from the median by more than half the extreme
/// deviation of their sign, kept when their peak is at least a quarter of the
/// largest absolute deviation.
std::vector<Blob> find_blobs(const Raster& raster);

/// Area-weighted share of (v - mean)^2 over elements whose centroid lies
/// within band of the boundary.
double boundary_artifact_energy(const std::vector<double>& values, const Mesh& mesh, double band = 0.15);

/// Share of the area-weighted energy of delta within radius of its peak.
double locality_fraction(const std::vector<double>& delta, const Mesh& mesh, double radius, Vec2* peak = nullptr);

/// Where a true-domain point is expected in the model domain: the polar
/// radius fraction is kept and the boundary arclength fraction is matched.
Vec2 expected_image(const Vec2& x, const DomainSpec& true_domain, const BoundaryCurve& true_curve,
                    const BoundaryCurve& model_curve);

/// Per-element values of a pixel vector.
std::vector<double> pixel_to_elements(const Eigen::VectorXd& pixels, const PixelLattice& lattice);

}  // namespace uaeit

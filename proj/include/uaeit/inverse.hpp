#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "uaeit/fem.hpp"
#include "uaeit/geometry.hpp"
#include "uaeit/tensors.hpp"

namespace uaeit {

/// Penalty weights: alpha* act on eta (or the isotropic gamma), beta0/beta1 on
/// theta, beta2/nu on lambda.
struct RegWeights {
    double alpha0 = 0.0;
    double alpha1 = 0.0;
    double beta0 = 0.0;
    double beta1 = 0.0;
    double beta2 = 0.0;
    double nu = 1.0;

    void validate() const;
};

/// Interior-point barrier weights xi_j. Either strictly decreasing and
/// positive, or all zero (barrier inactive).
struct BarrierSchedule {
    std::vector<double> xi;

    static BarrierSchedule geometric(double start, double end, std::size_t stages);
    static BarrierSchedule inactive(std::size_t stages = 1) { return {std::vector<double>(stages, 0.0)}; }
    bool active() const;
    void validate() const;
};

struct GaussNewtonSettings {
    int max_inner_iterations = 10;  // per barrier stage
    int max_total_iterations = 60;
    double relative_decrease_tol = 1e-6;
    double step_tol = 1e-8;
    double armijo = 1e-4;
    double backtrack = 0.5;
    int max_backtracks = 30;
    double damping = 1e-12;  // times trace of the normal matrix
    int threads = 1;
};

// --- penalty functionals ---------------------------------------------------

/// alpha0 sum eta_i^2 + alpha1 sum_i sum_{j in N_i} (eta_i - eta_j)^2.
/// The double sum visits each unordered neighbour pair twice.
double penalty_eta(const Eigen::VectorXd& eta, const NeighborGraph& graph, double alpha0, double alpha1);
Eigen::VectorXd penalty_eta_gradient(const Eigen::VectorXd& eta, const NeighborGraph& graph, double alpha0,
                                     double alpha1);
/// Exact (constant) Hessian of the quadratic penalty.
Eigen::SparseMatrix<double> penalty_eta_hessian(const NeighborGraph& graph, double alpha0, double alpha1);

/// beta0 sum theta_i^2 + beta1 sum_i sum_{j in N_i} |e^{i theta_i} - e^{i theta_j}|^2.
double penalty_theta(const Eigen::VectorXd& theta, const NeighborGraph& graph, double beta0, double beta1);
Eigen::VectorXd penalty_theta_gradient(const Eigen::VectorXd& theta, const NeighborGraph& graph, double beta0,
                                       double beta1);
/// Gauss-Newton Hessian of the unit-vector differences (positive semidefinite).
Eigen::SparseMatrix<double> penalty_theta_gn_hessian(const Eigen::VectorXd& theta, const NeighborGraph& graph,
                                                     double beta0, double beta1);

/// beta2 (log lambda + nu^-2 log(lambda)^2); throws for lambda <= 0.
double penalty_lambda(double lambda, double beta2, double nu);

/// xi sum 1 / eta_i; throws std::domain_error if any eta_i <= 0.
double barrier(const Eigen::VectorXd& eta, double xi);
Eigen::VectorXd barrier_gradient(const Eigen::VectorXd& eta, double xi);

// --- forward map -------------------------------------------------------------

/// U(eta, theta, lambda) and U(gamma) on a fixed mesh, layout, protocol and lattice.
class ForwardModel {
public:
    ForwardModel(const Mesh& mesh, const ElectrodeLayout& layout, const MeasurementProtocol& protocol,
                 const PixelLattice& lattice, int threads = 1);

    const Mesh& mesh() const { return *mesh_; }
    const ElectrodeLayout& layout() const { return *layout_; }
    const MeasurementProtocol& protocol() const { return *protocol_; }
    const PixelLattice& lattice() const { return *lattice_; }
    std::size_t num_pixels() const { return lattice_->size(); }
    std::size_t num_data() const { return protocol_->size(); }
    int threads() const { return threads_; }

    Eigen::VectorXd predict(const UniformAnisoParams& params) const;
    Eigen::VectorXd predict(const TensorField& field) const;
    Eigen::VectorXd predict_isotropic(const Eigen::VectorXd& gamma) const;

    struct Linearization {
        Eigen::VectorXd prediction;
        Eigen::MatrixXd jacobian;
    };
    /// Columns: eta_1..eta_M, theta_1..theta_M, lambda (derivative in lambda itself).
    Linearization linearize(const UniformAnisoParams& params) const;
    /// Columns: gamma_1..gamma_M.
    Linearization linearize_isotropic(const Eigen::VectorXd& gamma) const;

private:
    struct Sensitivity;
    Sensitivity solve_all(const TensorField& field) const;

    const Mesh* mesh_;
    const ElectrodeLayout* layout_;
    const MeasurementProtocol* protocol_;
    const PixelLattice* lattice_;
    int threads_;
    Eigen::MatrixXd patterns_;          // drive patterns followed by extra measurement patterns
    std::vector<int> row_drive_;        // data row -> solution index of its drive
    std::vector<int> row_measurement_;  // data row -> solution index of its measurement pattern
};

/// Adjoint Jacobian of the anisotropic forward map, N x (2M + 1).
Eigen::MatrixXd jacobian(const UniformAnisoParams& params, const ForwardModel& model);

// --- objective ----------------------------------------------------------------

struct ObjectiveTerms {
    double misfit = 0.0;
    double penalty_eta = 0.0;  // W_eta, or W_gamma in isotropic mode
    double penalty_theta = 0.0;
    double penalty_lambda = 0.0;
    double barrier = 0.0;

    double total() const { return misfit + penalty_eta + penalty_theta + penalty_lambda + barrier; }
};

ObjectiveTerms objective(const UniformAnisoParams& params, const Eigen::VectorXd& data, const ForwardModel& model,
                         const NeighborGraph& graph, const RegWeights& weights, double xi);
ObjectiveTerms objective_isotropic(const Eigen::VectorXd& gamma, const Eigen::VectorXd& data,
                                   const ForwardModel& model, const NeighborGraph& graph, const RegWeights& weights,
                                   double xi);

/// Gradient of the augmented objective in (eta, theta, lambda) coordinates.
Eigen::VectorXd objective_gradient(const UniformAnisoParams& params, const Eigen::VectorXd& data,
                                   const ForwardModel& model, const NeighborGraph& graph, const RegWeights& weights,
                                   double xi);

// --- reconstruction -----------------------------------------------------------

struct IterationRecord {
    int iteration = 0;
    int stage = 0;
    double xi = 0.0;
    ObjectiveTerms terms;
    double objective = 0.0;  // augmented objective at the accepted iterate
    double lambda = 1.0;
    double step = 0.0;       // accepted line-search step length
    int backtracks = 0;
};

struct ReconState {
    bool anisotropic = true;
    UniformAnisoParams params;  // anisotropic mode, canonical representative
    Eigen::VectorXd gamma;      // isotropic mode
    std::vector<IterationRecord> history;
    std::vector<double> lambda_trace;
    bool converged = true;        // false after a line-search failure
    bool hit_iteration_cap = false;
    std::string message;

    /// eta in anisotropic mode, gamma otherwise.
    const Eigen::VectorXd& image() const { return anisotropic ? params.eta : gamma; }
};

/// Interior-point sequence of damped Gauss-Newton minimizations of the
/// anisotropic objective. Starts from isotropic unit conductivity unless
/// `initial` is given. lambda is optimized through log(lambda).
ReconState gauss_newton_reconstruct(const Eigen::VectorXd& data, const ForwardModel& model,
                                    const NeighborGraph& graph, const RegWeights& weights,
                                    const BarrierSchedule& schedule, const GaussNewtonSettings& settings,
                                    const std::optional<UniformAnisoParams>& initial = std::nullopt);

/// Same driver for the isotropic model with unknown gamma in R^M.
ReconState isotropic_reconstruct(const Eigen::VectorXd& data, const ForwardModel& model, const NeighborGraph& graph,
                                 const RegWeights& weights, const BarrierSchedule& schedule,
                                 const GaussNewtonSettings& settings,
                                 const std::optional<Eigen::VectorXd>& initial = std::nullopt);

void write_recon_csv(const std::filesystem::path& path, const ReconState& state);
void write_run_log(const std::filesystem::path& path, const ReconState& state);

}  // namespace uaeit

#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "uaeit/geometry.hpp"
#include "uaeit/tensors.hpp"

namespace uaeit {

/// Gradients of the three P1 basis functions of triangle t (columns), and its area.
struct ElementGeometry {
    Eigen::Matrix<double, 2, 3> gradients;
    double area = 0.0;
};
ElementGeometry element_geometry(const Mesh& mesh, std::size_t t);

/// Local stiffness area * B^T gamma B of one triangle.
Eigen::Matrix3d element_stiffness(const Vec2& a, const Vec2& b, const Vec2& c, const Tensor2& gamma);

/// Omega-block of the complete electrode model, integral of gamma grad u . grad v.
Eigen::SparseMatrix<double> assemble_stiffness(const Mesh& mesh, const TensorField& field);

struct CemSolution {
    Eigen::VectorXd u;  // nodal potentials
    Eigen::VectorXd U;  // electrode potentials, sum zero
};

/// Assembled and factorized complete electrode model.
///
/// Unknowns are the nodal potentials followed by the J electrode potentials.
/// The bilinear form is
///   B((u,U),(v,W)) = int gamma grad u . grad v
///                  + sum_j z_j^-1 int_{e_j} (u - U_j)(v - W_j) ds,
/// whose kernel is the constants. The gauge sum_j U_j = 0 is imposed by adding
/// rho (sum_j U_j)(sum_j W_j): for a Kirchhoff-compatible current vector the
/// solution of the augmented system satisfies the gauge exactly and coincides
/// with the Lagrange-multiplier solution, whose multiplier is then zero.
class CemSystem {
public:
    CemSystem(const Mesh& mesh, const TensorField& field, const ElectrodeLayout& layout);

    std::size_t num_nodes() const { return num_nodes_; }
    std::size_t num_electrodes() const { return num_electrodes_; }

    /// Symmetric CEM matrix without the gauge term.
    const Eigen::SparseMatrix<double>& matrix() const { return matrix_; }

    /// Throws std::invalid_argument if the pattern does not sum to zero.
    CemSolution solve_current_drive(const Eigen::VectorXd& pattern) const;
    /// Row k of `patterns` is one current pattern; solves run concurrently.
    std::vector<CemSolution> solve_many(const Eigen::MatrixXd& patterns, int threads = 1) const;

    /// ||K x - b|| / ||b|| of the gauge-augmented system, zero for b = 0.
    double relative_residual(const CemSolution& solution, const Eigen::VectorXd& pattern) const;

    /// Current -> voltage map G on mean-zero currents (G 1 = 0), symmetric.
    Eigen::MatrixXd current_to_voltage(int threads = 1) const;
    /// Voltage -> current map E, the pseudo-inverse of G on mean-zero vectors.
    Eigen::MatrixXd voltage_to_current(int threads = 1) const;

    /// Power sum_j U_j I_j dissipated for a current pattern.
    double power(const Eigen::VectorXd& pattern) const;

private:
    std::size_t num_nodes_ = 0;
    std::size_t num_electrodes_ = 0;
    Eigen::SparseMatrix<double> matrix_;
    Eigen::SparseMatrix<double> gauged_;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> factor_;
};

/// Current patterns and their measurement projectors.
struct MeasurementProtocol {
    std::size_t electrodes = 0;
    Eigen::MatrixXd patterns;                  // K x J, row k is I^(k)
    std::vector<Eigen::MatrixXd> projectors;   // K matrices of size L x J
    std::vector<std::vector<std::pair<int, int>>> pairs;  // measured (a, b) per pattern, value U_a - U_b

    std::size_t num_patterns() const { return static_cast<std::size_t>(patterns.rows()); }
    std::size_t per_pattern() const { return projectors.empty() ? 0 : static_cast<std::size_t>(projectors[0].rows()); }
    std::size_t size() const { return num_patterns() * per_pattern(); }
};

/// Adjacent-pair drive: pattern n injects +1 at e_n and -1 at e_{n+1}; the J
/// adjacent pairs are measured except the three touching a driven electrode.
MeasurementProtocol adjacent_protocol(std::size_t electrodes);

/// Stacked P_k U^(k) for the given per-pattern solutions.
Eigen::VectorXd measure(const MeasurementProtocol& protocol, const std::vector<CemSolution>& solutions);

struct DataVector {
    Eigen::VectorXd values;
    Eigen::VectorXd clean;
    double noise_fraction = 0.0;
    std::uint64_t seed = 0;
    double noise_std = 0.0;
};

/// Clean data plus N(0, (noise_fraction * max|clean|)^2) noise from a single
/// seeded stream.
DataVector simulate_measurements(const Mesh& mesh, const TensorField& field, const ElectrodeLayout& layout,
                                 const MeasurementProtocol& protocol, double noise_fraction, std::uint64_t seed,
                                 int threads = 1);

void write_data_csv(const std::filesystem::path& path, const DataVector& data, const MeasurementProtocol& protocol,
                    const ElectrodeLayout& layout);
/// Reads the values column back; header fields fill noise_fraction and seed.
DataVector read_data_csv(const std::filesystem::path& path);

}  // namespace uaeit

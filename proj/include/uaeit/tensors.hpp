#pragma once

#include <complex>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "uaeit/geometry.hpp"

namespace uaeit {

using Mat2 = Eigen::Matrix2d;

/// Symmetric 2x2 conductivity [[g11, g12], [g12, g22]].
struct Tensor2 {
    double g11 = 1.0;
    double g12 = 0.0;
    double g22 = 1.0;

    static Tensor2 isotropic(double value) { return {value, 0.0, value}; }
    static Tensor2 from_matrix(const Mat2& m) { return {m(0, 0), 0.5 * (m(0, 1) + m(1, 0)), m(1, 1)}; }
    Mat2 matrix() const { return (Mat2() << g11, g12, g12, g22).finished(); }

    double det() const { return g11 * g22 - g12 * g12; }
    double trace() const { return g11 + g22; }
    bool is_spd() const { return g11 > 0.0 && det() > 0.0; }
    /// Eigenvalues (largest, smallest), closed form.
    std::pair<double, double> eigenvalues() const;

    Tensor2 operator*(double c) const { return {c * g11, c * g12, c * g22}; }
    friend bool operator==(const Tensor2&, const Tensor2&) = default;
};

/// Element-wise P0 conductivity over a mesh.
struct TensorField {
    std::vector<Tensor2> values;

    std::size_t size() const { return values.size(); }
    const Tensor2& operator[](std::size_t e) const { return values[e]; }
    Tensor2& operator[](std::size_t e) { return values[e]; }

    static TensorField isotropic(const std::vector<double>& per_element);
    static TensorField constant(std::size_t n, const Tensor2& value) { return {std::vector<Tensor2>(n, value)}; }

    /// Throws std::invalid_argument naming the first element that is not SPD
    /// or whose eigenvalue ratio exceeds max_ratio.
    void validate(double max_ratio = 1e6) const;
};

/// Pixel values of eta and theta plus the global anisotropy lambda.
struct UniformAnisoParams {
    Eigen::VectorXd eta;
    Eigen::VectorXd theta;
    double lambda = 1.0;

    static UniformAnisoParams isotropic_unit(std::size_t m);
    std::size_t size() const { return static_cast<std::size_t>(eta.size()); }
    void validate() const;
    /// Equivalent representative with lambda >= 1 and theta in [-pi/2, pi/2).
    UniformAnisoParams canonical() const;
};

/// R_theta = [[cos, sin], [-sin, cos]].
Mat2 rotation(double theta);

/// eta R_theta diag(lambda^(1/2), lambda^(-1/2)) R_theta^(-1).
Tensor2 uniform_tensor(double eta, double theta, double lambda);
/// Derivatives of uniform_tensor with respect to theta and lambda.
Tensor2 uniform_tensor_dtheta(double eta, double theta, double lambda);
Tensor2 uniform_tensor_dlambda(double eta, double theta, double lambda);

TensorField gamma_hat(const UniformAnisoParams& params, const PixelLattice& lattice);

/// Orientation-preserving analytic map with Jacobian and inverse.
class Diffeo {
public:
    enum class Kind { affine, radial_boundary_preserving, custom };

    Diffeo(Kind kind, std::function<Vec2(const Vec2&)> forward, std::function<Mat2(const Vec2&)> jacobian,
           std::function<Vec2(const Vec2&)> inverse, std::string description = {});

    static Diffeo identity();
    /// x -> A x + shift, A with positive determinant.
    static Diffeo affine(const Mat2& A, const Vec2& shift = Vec2::Zero());
    /// Polar map (r, phi) -> (r + c r (1 - r), phi) on the unit disk, |c| <= 0.5.
    static Diffeo radial(double c);

    Vec2 operator()(const Vec2& y) const { return forward_(y); }
    Mat2 jacobian(const Vec2& y) const { return jacobian_(y); }
    Vec2 inverse(const Vec2& x) const { return inverse_(x); }
    Kind kind() const { return kind_; }
    const std::string& description() const { return description_; }

private:
    Kind kind_;
    std::function<Vec2(const Vec2&)> forward_;
    std::function<Mat2(const Vec2&)> jacobian_;
    std::function<Vec2(const Vec2&)> inverse_;
    std::string description_;
};

/// F' gamma F'^T / |det F'| for a tensor given at the preimage point.
Tensor2 push_forward_tensor(const Tensor2& gamma, const Mat2& jacobian);

/// Point location over a triangulation through a uniform bucket grid.
class TriangleLocator {
public:
    explicit TriangleLocator(const Mesh& mesh);
    /// Triangle containing p, or -1.
    int find(const Vec2& p) const;

private:
    const Mesh* mesh_;
    Eigen::AlignedBox2d box_;
    int nx_ = 1, ny_ = 1;
    Vec2 cell_;
    std::vector<std::vector<int>> buckets_;
};

/// Push-forward of a P0 field on mesh_src, sampled at the centroids of mesh_dst.
/// Throws std::runtime_error if a preimage falls outside mesh_src.
TensorField push_forward(const TensorField& field, const Mesh& mesh_src, const Diffeo& map,
                         const Mesh& mesh_dst);

/// Push-forward of an analytic conductivity, sampled at the centroids of mesh_dst.
TensorField push_forward(const std::function<Tensor2(const Vec2&)>& field, const Diffeo& map,
                         const Mesh& mesh_dst);

struct AnisotropyReport {
    std::vector<double> per_element;
    double max = 0.0;
};

/// (sqrt L - 1) / (sqrt L + 1), L the eigenvalue ratio.
double anisotropy(const Tensor2& t);
AnisotropyReport anisotropy(const TensorField& field);

/// (-g11 + g22 - 2i g12) / (g11 + g22 + 2 sqrt(det)).
std::complex<double> beltrami_mu(const Tensor2& t);

std::vector<double> det_sqrt(const TensorField& field);

}  // namespace uaeit

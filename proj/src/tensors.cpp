#include "uaeit/tensors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace uaeit {

std::pair<double, double> Tensor2::eigenvalues() const {
    const double mean = 0.5 * (g11 + g22);
    const double half_diff = 0.5 * (g11 - g22);
    const double radius = std::hypot(half_diff, g12);
    const double large = mean + radius;
    // det / large avoids cancellation in the smaller root
    return {large, det() / large};
}

TensorField TensorField::isotropic(const std::vector<double>& per_element) {
    TensorField field;
    field.values.reserve(per_element.size());
    for (double v : per_element) field.values.push_back(Tensor2::isotropic(v));
    return field;
}

void TensorField::validate(double max_ratio) const {
    for (std::size_t e = 0; e < values.size(); ++e) {
        const Tensor2& t = values[e];
        if (!t.is_spd() || !std::isfinite(t.g11) || !std::isfinite(t.g12) || !std::isfinite(t.g22)) {
            std::ostringstream msg;
            msg << "conductivity of element " << e << " is not positive definite (g11=" << t.g11
                << ", g12=" << t.g12 << ", g22=" << t.g22 << ")";
            throw std::invalid_argument(msg.str());
        }
        const auto [hi, lo] = t.eigenvalues();
        if (hi / lo > max_ratio) {
            std::ostringstream msg;
            msg << "conductivity of element " << e << " has eigenvalue ratio " << hi / lo;
            throw std::invalid_argument(msg.str());
        }
    }
}

UniformAnisoParams UniformAnisoParams::isotropic_unit(std::size_t m) {
    return {Eigen::VectorXd::Ones(static_cast<Eigen::Index>(m)), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m)), 1.0};
}

void UniformAnisoParams::validate() const {
    if (eta.size() != theta.size()) throw std::invalid_argument("eta and theta sizes differ");
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be positive");
    for (Eigen::Index i = 0; i < eta.size(); ++i)
        if (!(eta[i] > 0.0) || !std::isfinite(eta[i]))
            throw std::invalid_argument("eta must be positive (pixel " + std::to_string(i) + ")");
}

UniformAnisoParams UniformAnisoParams::canonical() const {
    UniformAnisoParams out = *this;
    if (out.lambda < 1.0) {
        out.lambda = 1.0 / out.lambda;
        out.theta.array() += std::numbers::pi / 2.0;
    }
    for (Eigen::Index i = 0; i < out.theta.size(); ++i) {
        double t = std::fmod(out.theta[i] + std::numbers::pi / 2.0, std::numbers::pi);
        if (t < 0.0) t += std::numbers::pi;
        out.theta[i] = t - std::numbers::pi / 2.0;
    }
    return out;
}

Mat2 rotation(double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    return (Mat2() << c, s, -s, c).finished();
}

// With R = [[c, s], [-s, c]] and D = diag(p, q):
// R D R^T = [[c^2 p + s^2 q, cs (q - p)], [cs (q - p), s^2 p + c^2 q]].
Tensor2 uniform_tensor(double eta, double theta, double lambda) {
    const double c = std::cos(theta), s = std::sin(theta);
    const double p = std::sqrt(lambda), q = 1.0 / p;
    return {eta * (c * c * p + s * s * q), eta * c * s * (q - p), eta * (s * s * p + c * c * q)};
}

Tensor2 uniform_tensor_dtheta(double eta, double theta, double lambda) {
    const double c2 = std::cos(2.0 * theta), s2 = std::sin(2.0 * theta);
    const double p = std::sqrt(lambda), q = 1.0 / p;
    // d/dtheta of c^2 = -s2, of s^2 = s2, of cs = c2
    return {eta * s2 * (q - p), eta * c2 * (q - p), eta * s2 * (p - q)};
}

Tensor2 uniform_tensor_dlambda(double eta, double theta, double lambda) {
    const double c = std::cos(theta), s = std::sin(theta);
    const double dp = 0.5 / std::sqrt(lambda);
    const double dq = -0.5 * std::pow(lambda, -1.5);
    return {eta * (c * c * dp + s * s * dq), eta * c * s * (dq - dp), eta * (s * s * dp + c * c * dq)};
}

TensorField gamma_hat(const UniformAnisoParams& params, const PixelLattice& lattice) {
    params.validate();
    if (params.size() != lattice.size())
        throw std::invalid_argument("parameter vector length does not match the pixel lattice");
    std::vector<Tensor2> per_pixel(params.size());
    for (std::size_t i = 0; i < per_pixel.size(); ++i)
        per_pixel[i] = uniform_tensor(params.eta[static_cast<Eigen::Index>(i)],
                                      params.theta[static_cast<Eigen::Index>(i)], params.lambda);
    TensorField field;
    field.values.reserve(lattice.element_to_pixel.size());
    for (int pixel : lattice.element_to_pixel) field.values.push_back(per_pixel[static_cast<std::size_t>(pixel)]);
    return field;
}

Diffeo::Diffeo(Kind kind, std::function<Vec2(const Vec2&)> forward, std::function<Mat2(const Vec2&)> jacobian,
               std::function<Vec2(const Vec2&)> inverse, std::string description)
    : kind_(kind),
      forward_(std::move(forward)),
      jacobian_(std::move(jacobian)),
      inverse_(std::move(inverse)),
      description_(std::move(description)) {}

Diffeo Diffeo::identity() {
    return affine(Mat2::Identity());
}

Diffeo Diffeo::affine(const Mat2& A, const Vec2& shift) {
    if (!(A.determinant() > 0.0)) throw std::invalid_argument("affine map must preserve orientation");
    const Mat2 inv = A.inverse();
    std::ostringstream desc;
    desc << "affine [[" << A(0, 0) << ", " << A(0, 1) << "], [" << A(1, 0) << ", " << A(1, 1) << "]]";
    return Diffeo(
        Kind::affine, [A, shift](const Vec2& y) -> Vec2 { return A * y + shift; },
        [A](const Vec2&) -> Mat2 { return A; }, [inv, shift](const Vec2& x) -> Vec2 { return inv * (x - shift); },
        desc.str());
}

Diffeo Diffeo::radial(double c) {
    if (!(std::abs(c) <= 0.5)) throw std::invalid_argument("radial map needs |c| <= 0.5");
    auto forward = [c](const Vec2& y) -> Vec2 {
        const double r = y.norm();
        return y * (1.0 + c * (1.0 - r));
    };
    auto jacobian = [c](const Vec2& y) -> Mat2 {
        const double r = y.norm();
        Mat2 J = (1.0 + c * (1.0 - r)) * Mat2::Identity();
        if (r > 0.0) J -= c * (y * y.transpose()) / r;
        return J;
    };
    auto inverse = [c](const Vec2& x) -> Vec2 {
        const double rho = x.norm();
        if (rho == 0.0 || c == 0.0) return x;
        // c r^2 - (1 + c) r + rho = 0, root continuous at c -> 0
        const double disc = (1.0 + c) * (1.0 + c) - 4.0 * c * rho;
        const double r = 2.0 * rho / ((1.0 + c) + std::sqrt(disc));
        return x * (r / rho);
    };
    std::ostringstream desc;
    desc << "radial c=" << c;
    return Diffeo(Kind::radial_boundary_preserving, forward, jacobian, inverse, desc.str());
}

Tensor2 push_forward_tensor(const Tensor2& gamma, const Mat2& jacobian) {
    const double det = jacobian.determinant();
    if (!(det > 0.0)) throw std::invalid_argument("push-forward needs an orientation-preserving Jacobian");
    return Tensor2::from_matrix(jacobian * gamma.matrix() * jacobian.transpose() / det);
}

TriangleLocator::TriangleLocator(const Mesh& mesh) : mesh_(&mesh) {
    for (const auto& p : mesh.nodes) box_.extend(p);
    const double n = std::max(1.0, std::sqrt(static_cast<double>(mesh.num_triangles()) / 2.0));
    nx_ = std::max(1, static_cast<int>(n));
    ny_ = std::max(1, static_cast<int>(n));
    cell_ = box_.sizes().cwiseQuotient(Vec2(nx_, ny_));
    buckets_.resize(static_cast<std::size_t>(nx_) * ny_);
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        Eigen::AlignedBox2d tb;
        for (int k : mesh.triangles[t]) tb.extend(mesh.nodes[k]);
        const int x0 = std::clamp(static_cast<int>((tb.min().x() - box_.min().x()) / cell_.x()), 0, nx_ - 1);
        const int x1 = std::clamp(static_cast<int>((tb.max().x() - box_.min().x()) / cell_.x()), 0, nx_ - 1);
        const int y0 = std::clamp(static_cast<int>((tb.min().y() - box_.min().y()) / cell_.y()), 0, ny_ - 1);
        const int y1 = std::clamp(static_cast<int>((tb.max().y() - box_.min().y()) / cell_.y()), 0, ny_ - 1);
        for (int iy = y0; iy <= y1; ++iy)
            for (int ix = x0; ix <= x1; ++ix) buckets_[static_cast<std::size_t>(iy) * nx_ + ix].push_back(static_cast<int>(t));
    }
}

int TriangleLocator::find(const Vec2& p) const {
    if (!box_.contains(p)) return -1;
    const int ix = std::clamp(static_cast<int>((p.x() - box_.min().x()) / cell_.x()), 0, nx_ - 1);
    const int iy = std::clamp(static_cast<int>((p.y() - box_.min().y()) / cell_.y()), 0, ny_ - 1);
    constexpr double tol = 1e-12;
    for (int t : buckets_[static_cast<std::size_t>(iy) * nx_ + ix]) {
        const auto& tri = mesh_->triangles[static_cast<std::size_t>(t)];
        const Vec2& a = mesh_->nodes[tri[0]];
        const Vec2& b = mesh_->nodes[tri[1]];
        const Vec2& c = mesh_->nodes[tri[2]];
        Mat2 T;
        T.col(0) = b - a;
        T.col(1) = c - a;
        const Vec2 w = T.inverse() * (p - a);
        if (w.x() >= -tol && w.y() >= -tol && w.x() + w.y() <= 1.0 + tol) return t;
    }
    return -1;
}

TensorField push_forward(const TensorField& field, const Mesh& mesh_src, const Diffeo& map, const Mesh& mesh_dst) {
    if (field.size() != mesh_src.num_triangles())
        throw std::invalid_argument("field does not match the source mesh");
    const TriangleLocator locator(mesh_src);
    TensorField out;
    out.values.reserve(mesh_dst.num_triangles());
    for (std::size_t t = 0; t < mesh_dst.num_triangles(); ++t) {
        const Vec2 x = mesh_dst.centroid(t);
        const Vec2 y = map.inverse(x);
        const int src = locator.find(y);
        if (src < 0) {
            std::ostringstream msg;
            msg << "push-forward: preimage (" << y.x() << ", " << y.y() << ") of destination centroid (" << x.x()
                << ", " << x.y() << ") of element " << t << " lies outside the source mesh";
            throw std::runtime_error(msg.str());
        }
        out.values.push_back(push_forward_tensor(field[static_cast<std::size_t>(src)], map.jacobian(y)));
    }
    return out;
}

TensorField push_forward(const std::function<Tensor2(const Vec2&)>& field, const Diffeo& map,
                         const Mesh& mesh_dst) {
    TensorField out;
    out.values.reserve(mesh_dst.num_triangles());
    for (std::size_t t = 0; t < mesh_dst.num_triangles(); ++t) {
        const Vec2 y = map.inverse(mesh_dst.centroid(t));
        out.values.push_back(push_forward_tensor(field(y), map.jacobian(y)));
    }
    return out;
}

double anisotropy(const Tensor2& t) {
    const auto [hi, lo] = t.eigenvalues();
    const double root = std::sqrt(hi / lo);
    return (root - 1.0) / (root + 1.0);
}

AnisotropyReport anisotropy(const TensorField& field) {
    field.validate();
    AnisotropyReport report;
    report.per_element.reserve(field.size());
    for (const auto& t : field.values) {
        report.per_element.push_back(anisotropy(t));
        report.max = std::max(report.max, report.per_element.back());
    }
    return report;
}

std::complex<double> beltrami_mu(const Tensor2& t) {
    if (!t.is_spd()) throw std::invalid_argument("beltrami_mu needs a positive definite tensor");
    const double denom = t.g11 + t.g22 + 2.0 * std::sqrt(t.det());
    return {(-t.g11 + t.g22) / denom, -2.0 * t.g12 / denom};
}

std::vector<double> det_sqrt(const TensorField& field) {
    std::vector<double> out;
    out.reserve(field.size());
    for (const auto& t : field.values) out.push_back(std::sqrt(t.det()));
    return out;
}

}  // namespace uaeit

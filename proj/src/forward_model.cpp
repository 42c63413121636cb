#include <stdexcept>

#include "uaeit/inverse.hpp"

namespace uaeit {

struct ForwardModel::Sensitivity {
    Eigen::VectorXd prediction;
    Eigen::MatrixXd potentials;  // nodes x solutions
};

ForwardModel::ForwardModel(const Mesh& mesh, const ElectrodeLayout& layout, const MeasurementProtocol& protocol,
                           const PixelLattice& lattice, int threads)
    : mesh_(&mesh), layout_(&layout), protocol_(&protocol), lattice_(&lattice), threads_(threads) {
    if (lattice.element_to_pixel.size() != mesh.num_triangles())
        throw std::invalid_argument("pixel lattice was built for a different mesh");
    if (protocol.electrodes != layout.count)
        throw std::invalid_argument("protocol and electrode layout disagree on the electrode count");

    // Adjoint fields: a measurement row c of P_k is itself a current pattern,
    // and its solution w satisfies c^T U = B(u, w). Reuse drive solutions
    // whenever the two coincide (always, for the adjacent protocol).
    std::vector<Eigen::VectorXd> rows;
    for (std::size_t k = 0; k < protocol.num_patterns(); ++k)
        rows.push_back(protocol.patterns.row(static_cast<Eigen::Index>(k)).transpose());
    const auto find_or_add = [&rows](const Eigen::VectorXd& c) {
        for (std::size_t s = 0; s < rows.size(); ++s)
            if (rows[s] == c) return static_cast<int>(s);
        rows.push_back(c);
        return static_cast<int>(rows.size() - 1);
    };
    for (std::size_t k = 0; k < protocol.num_patterns(); ++k) {
        const Eigen::MatrixXd& P = protocol.projectors[k];
        for (Eigen::Index r = 0; r < P.rows(); ++r) {
            row_drive_.push_back(static_cast<int>(k));
            row_measurement_.push_back(find_or_add(P.row(r).transpose()));
        }
    }
    patterns_.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(layout.count));
    for (std::size_t s = 0; s < rows.size(); ++s) patterns_.row(static_cast<Eigen::Index>(s)) = rows[s].transpose();
}

Eigen::VectorXd ForwardModel::predict(const TensorField& field) const {
    const CemSystem system(*mesh_, field, *layout_);
    return measure(*protocol_, system.solve_many(protocol_->patterns, threads_));
}

Eigen::VectorXd ForwardModel::predict(const UniformAnisoParams& params) const {
    return predict(gamma_hat(params, *lattice_));
}

Eigen::VectorXd ForwardModel::predict_isotropic(const Eigen::VectorXd& gamma) const {
    if (static_cast<std::size_t>(gamma.size()) != lattice_->size())
        throw std::invalid_argument("conductivity vector does not match the pixel lattice");
    std::vector<double> per_element;
    per_element.reserve(mesh_->num_triangles());
    for (int pixel : lattice_->element_to_pixel) per_element.push_back(gamma[pixel]);
    return predict(TensorField::isotropic(per_element));
}

ForwardModel::Sensitivity ForwardModel::solve_all(const TensorField& field) const {
    const CemSystem system(*mesh_, field, *layout_);
    const auto solutions = system.solve_many(patterns_, threads_);
    Sensitivity out;
    const std::size_t K = protocol_->num_patterns();
    out.prediction = measure(*protocol_, std::vector<CemSolution>(solutions.begin(), solutions.begin() + static_cast<std::ptrdiff_t>(K)));
    out.potentials.resize(static_cast<Eigen::Index>(mesh_->num_nodes()), static_cast<Eigen::Index>(solutions.size()));
    for (std::size_t s = 0; s < solutions.size(); ++s) out.potentials.col(static_cast<Eigen::Index>(s)) = solutions[s].u;
    return out;
}

namespace {

// Per-element gradients of every stored solution, 2 x S.
Eigen::Matrix<double, 2, Eigen::Dynamic> solution_gradients(const Mesh& mesh, std::size_t t,
                                                            const Eigen::MatrixXd& potentials,
                                                            const ElementGeometry& g) {
    const auto& tri = mesh.triangles[t];
    Eigen::Matrix<double, 3, Eigen::Dynamic> local(3, potentials.cols());
    for (int k = 0; k < 3; ++k) local.row(k) = potentials.row(tri[k]);
    return g.gradients * local;
}

}  // namespace

ForwardModel::Linearization ForwardModel::linearize(const UniformAnisoParams& params) const {
    params.validate();
    const std::size_t M = lattice_->size();
    if (params.size() != M) throw std::invalid_argument("parameter vector does not match the pixel lattice");
    const Sensitivity sens = solve_all(gamma_hat(params, *lattice_));

    const auto N = static_cast<Eigen::Index>(num_data());
    Linearization out;
    out.prediction = sens.prediction;
    out.jacobian = Eigen::MatrixXd::Zero(N, static_cast<Eigen::Index>(2 * M + 1));
    const auto lambda_col = static_cast<Eigen::Index>(2 * M);

    for (std::size_t t = 0; t < mesh_->num_triangles(); ++t) {
        const int pixel = lattice_->element_to_pixel[t];
        const double eta = params.eta[pixel];
        const double theta = params.theta[pixel];
        const ElementGeometry g = element_geometry(*mesh_, t);
        const auto G = solution_gradients(*mesh_, t, sens.potentials, g);

        const Mat2 d_eta = uniform_tensor(1.0, theta, params.lambda).matrix();
        const Mat2 d_theta = uniform_tensor_dtheta(eta, theta, params.lambda).matrix();
        const Mat2 d_lambda = uniform_tensor_dlambda(eta, theta, params.lambda).matrix();
        const Eigen::MatrixXd q_eta = G.transpose() * (d_eta * G);
        const Eigen::MatrixXd q_theta = G.transpose() * (d_theta * G);
        const Eigen::MatrixXd q_lambda = G.transpose() * (d_lambda * G);

        for (Eigen::Index n = 0; n < N; ++n) {
            const int d = row_drive_[static_cast<std::size_t>(n)];
            const int m = row_measurement_[static_cast<std::size_t>(n)];
            out.jacobian(n, pixel) -= g.area * q_eta(d, m);
            out.jacobian(n, static_cast<Eigen::Index>(M) + pixel) -= g.area * q_theta(d, m);
            out.jacobian(n, lambda_col) -= g.area * q_lambda(d, m);
        }
    }
    return out;
}

ForwardModel::Linearization ForwardModel::linearize_isotropic(const Eigen::VectorXd& gamma) const {
    const std::size_t M = lattice_->size();
    if (static_cast<std::size_t>(gamma.size()) != M)
        throw std::invalid_argument("conductivity vector does not match the pixel lattice");
    std::vector<double> per_element;
    per_element.reserve(mesh_->num_triangles());
    for (int pixel : lattice_->element_to_pixel) per_element.push_back(gamma[pixel]);
    const Sensitivity sens = solve_all(TensorField::isotropic(per_element));

    const auto N = static_cast<Eigen::Index>(num_data());
    Linearization out;
    out.prediction = sens.prediction;
    out.jacobian = Eigen::MatrixXd::Zero(N, static_cast<Eigen::Index>(M));
    for (std::size_t t = 0; t < mesh_->num_triangles(); ++t) {
        const int pixel = lattice_->element_to_pixel[t];
        const ElementGeometry g = element_geometry(*mesh_, t);
        const auto G = solution_gradients(*mesh_, t, sens.potentials, g);
        const Eigen::MatrixXd q = G.transpose() * G;
        for (Eigen::Index n = 0; n < N; ++n)
            out.jacobian(n, pixel) -=
                g.area * q(row_drive_[static_cast<std::size_t>(n)], row_measurement_[static_cast<std::size_t>(n)]);
    }
    return out;
}

Eigen::MatrixXd jacobian(const UniformAnisoParams& params, const ForwardModel& model) {
    return model.linearize(params).jacobian;
}

}  // namespace uaeit

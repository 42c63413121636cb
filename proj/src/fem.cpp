#include "uaeit/fem.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

#include "uaeit/parallel.hpp"

namespace uaeit {

ElementGeometry element_geometry(const Mesh& mesh, std::size_t t) {
    const auto& tri = mesh.triangles[t];
    const Vec2& p0 = mesh.nodes[tri[0]];
    const Vec2& p1 = mesh.nodes[tri[1]];
    const Vec2& p2 = mesh.nodes[tri[2]];
    ElementGeometry g;
    g.area = 0.5 * ((p1.x() - p0.x()) * (p2.y() - p0.y()) - (p2.x() - p0.x()) * (p1.y() - p0.y()));
    const double inv = 1.0 / (2.0 * g.area);
    g.gradients << (p1.y() - p2.y()), (p2.y() - p0.y()), (p0.y() - p1.y()),  //
        (p2.x() - p1.x()), (p0.x() - p2.x()), (p1.x() - p0.x());
    g.gradients *= inv;
    return g;
}

Eigen::Matrix3d element_stiffness(const Vec2& a, const Vec2& b, const Vec2& c, const Tensor2& gamma) {
    Mesh single;
    single.nodes = {a, b, c};
    single.triangles = {{0, 1, 2}};
    const ElementGeometry g = element_geometry(single, 0);
    return g.area * g.gradients.transpose() * gamma.matrix() * g.gradients;
}

namespace {

void add_stiffness(const Mesh& mesh, const TensorField& field, std::vector<Eigen::Triplet<double>>& triplets) {
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        const ElementGeometry g = element_geometry(mesh, t);
        const Eigen::Matrix3d k = g.area * g.gradients.transpose() * field[t].matrix() * g.gradients;
        const auto& tri = mesh.triangles[t];
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) triplets.emplace_back(tri[i], tri[j], k(i, j));
    }
}

}  // namespace

Eigen::SparseMatrix<double> assemble_stiffness(const Mesh& mesh, const TensorField& field) {
    if (field.size() != mesh.num_triangles()) throw std::invalid_argument("field does not match the mesh");
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(9 * mesh.num_triangles());
    add_stiffness(mesh, field, triplets);
    const auto n = static_cast<Eigen::Index>(mesh.num_nodes());
    Eigen::SparseMatrix<double> K(n, n);
    K.setFromTriplets(triplets.begin(), triplets.end());
    return K;
}

CemSystem::CemSystem(const Mesh& mesh, const TensorField& field, const ElectrodeLayout& layout)
    : num_nodes_(mesh.num_nodes()), num_electrodes_(layout.count) {
    if (field.size() != mesh.num_triangles()) throw std::invalid_argument("field does not match the mesh");
    field.validate();
    for (std::size_t j = 0; j < layout.count; ++j)
        if (!(layout.contact_impedance[j] > 0.0))
            throw std::invalid_argument("contact impedance of electrode " + std::to_string(j) + " must be positive");

    const std::size_t n = num_nodes_;
    const std::size_t J = num_electrodes_;
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(9 * mesh.num_triangles() + 8 * mesh.boundary_edges.size());
    add_stiffness(mesh, field, triplets);

    std::vector<double> electrode_length(J, 0.0);
    for (const auto& edge : mesh.boundary_edges) {
        if (edge.electrode < 0) continue;
        const auto j = static_cast<std::size_t>(edge.electrode);
        if (j >= J) throw std::invalid_argument("mesh electrode tag exceeds the layout electrode count");
        const int p = edge.nodes[0], q = edge.nodes[1];
        const int e = static_cast<int>(n + j);
        const double len = (mesh.nodes[q] - mesh.nodes[p]).norm();
        const double w = 1.0 / layout.contact_impedance[j];
        // exact integrals of P1 traces along a straight edge
        triplets.emplace_back(p, p, w * len / 3.0);
        triplets.emplace_back(q, q, w * len / 3.0);
        triplets.emplace_back(p, q, w * len / 6.0);
        triplets.emplace_back(q, p, w * len / 6.0);
        triplets.emplace_back(p, e, -w * len / 2.0);
        triplets.emplace_back(e, p, -w * len / 2.0);
        triplets.emplace_back(q, e, -w * len / 2.0);
        triplets.emplace_back(e, q, -w * len / 2.0);
        triplets.emplace_back(e, e, w * len);
        electrode_length[j] += len;
    }
    for (std::size_t j = 0; j < J; ++j)
        if (!(electrode_length[j] > 0.0))
            throw std::invalid_argument("electrode " + std::to_string(j) + " has no boundary edges in the mesh");

    const auto size = static_cast<Eigen::Index>(n + J);
    matrix_.resize(size, size);
    matrix_.setFromTriplets(triplets.begin(), triplets.end());

    double rho = 0.0;
    for (std::size_t j = 0; j < J; ++j) rho += matrix_.coeff(static_cast<Eigen::Index>(n + j), static_cast<Eigen::Index>(n + j));
    rho /= static_cast<double>(J);
    for (std::size_t i = 0; i < J; ++i)
        for (std::size_t j = 0; j < J; ++j)
            triplets.emplace_back(static_cast<int>(n + i), static_cast<int>(n + j), rho);
    gauged_.resize(size, size);
    gauged_.setFromTriplets(triplets.begin(), triplets.end());

    factor_.compute(gauged_);
    if (factor_.info() != Eigen::Success)
        throw std::runtime_error("factorization of the gauge-constrained electrode system failed");
}

CemSolution CemSystem::solve_current_drive(const Eigen::VectorXd& pattern) const {
    if (static_cast<std::size_t>(pattern.size()) != num_electrodes_)
        throw std::invalid_argument("current pattern length does not match the electrode count");
    if (std::abs(pattern.sum()) > 1e-12 * std::max(1.0, pattern.cwiseAbs().sum()))
        throw std::invalid_argument("current pattern does not sum to zero");
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_nodes_ + num_electrodes_));
    rhs.tail(static_cast<Eigen::Index>(num_electrodes_)) = pattern;
    const Eigen::VectorXd x = factor_.solve(rhs);
    CemSolution solution;
    solution.u = x.head(static_cast<Eigen::Index>(num_nodes_));
    solution.U = x.tail(static_cast<Eigen::Index>(num_electrodes_));
    return solution;
}

std::vector<CemSolution> CemSystem::solve_many(const Eigen::MatrixXd& patterns, int threads) const {
    std::vector<CemSolution> out(static_cast<std::size_t>(patterns.rows()));
    parallel_for(out.size(), threads, [&](std::size_t k) {
        out[k] = solve_current_drive(patterns.row(static_cast<Eigen::Index>(k)).transpose());
    });
    return out;
}

double CemSystem::relative_residual(const CemSolution& solution, const Eigen::VectorXd& pattern) const {
    Eigen::VectorXd x(static_cast<Eigen::Index>(num_nodes_ + num_electrodes_));
    x << solution.u, solution.U;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(x.size());
    rhs.tail(static_cast<Eigen::Index>(num_electrodes_)) = pattern;
    const double norm = rhs.norm();
    const double res = (gauged_ * x - rhs).norm();
    return norm > 0.0 ? res / norm : res;
}

Eigen::MatrixXd CemSystem::current_to_voltage(int threads) const {
    const auto J = static_cast<Eigen::Index>(num_electrodes_);
    Eigen::MatrixXd basis = Eigen::MatrixXd::Identity(J, J);
    basis.array() -= 1.0 / static_cast<double>(J);
    const auto solutions = solve_many(basis, threads);
    Eigen::MatrixXd G(J, J);
    for (Eigen::Index k = 0; k < J; ++k) G.col(k) = solutions[static_cast<std::size_t>(k)].U;
    return G;
}

Eigen::MatrixXd CemSystem::voltage_to_current(int threads) const {
    const auto J = static_cast<Eigen::Index>(num_electrodes_);
    const Eigen::MatrixXd mean = Eigen::MatrixXd::Constant(J, J, 1.0 / static_cast<double>(J));
    const Eigen::MatrixXd G = current_to_voltage(threads);
    const Eigen::MatrixXd shifted = G + mean;
    Eigen::MatrixXd E = shifted.ldlt().solve(Eigen::MatrixXd::Identity(J, J)) - mean;
    return E;
}

double CemSystem::power(const Eigen::VectorXd& pattern) const {
    return solve_current_drive(pattern).U.dot(pattern);
}

MeasurementProtocol adjacent_protocol(std::size_t electrodes) {
    if (electrodes < 4) throw std::invalid_argument("adjacent protocol needs at least 4 electrodes");
    const auto J = static_cast<int>(electrodes);
    MeasurementProtocol protocol;
    protocol.electrodes = electrodes;
    protocol.patterns = Eigen::MatrixXd::Zero(J, J);
    for (int n = 0; n < J; ++n) {
        const int next = (n + 1) % J;
        protocol.patterns(n, n) = 1.0;
        protocol.patterns(n, next) = -1.0;
        std::vector<std::pair<int, int>> pairs;
        for (int k = 0; k < J; ++k) {
            const int a = k, b = (k + 1) % J;
            if (a == n || a == next || b == n || b == next) continue;
            pairs.emplace_back(a, b);
        }
        Eigen::MatrixXd P = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(pairs.size()), J);
        for (std::size_t r = 0; r < pairs.size(); ++r) {
            P(static_cast<Eigen::Index>(r), pairs[r].first) = 1.0;
            P(static_cast<Eigen::Index>(r), pairs[r].second) = -1.0;
        }
        protocol.projectors.push_back(std::move(P));
        protocol.pairs.push_back(std::move(pairs));
    }
    return protocol;
}

Eigen::VectorXd measure(const MeasurementProtocol& protocol, const std::vector<CemSolution>& solutions) {
    if (solutions.size() != protocol.num_patterns())
        throw std::invalid_argument("one solution per current pattern is required");
    const auto L = static_cast<Eigen::Index>(protocol.per_pattern());
    Eigen::VectorXd V(static_cast<Eigen::Index>(protocol.size()));
    for (std::size_t k = 0; k < solutions.size(); ++k)
        V.segment(static_cast<Eigen::Index>(k) * L, L) = protocol.projectors[k] * solutions[k].U;
    return V;
}

DataVector simulate_measurements(const Mesh& mesh, const TensorField& field, const ElectrodeLayout& layout,
                                 const MeasurementProtocol& protocol, double noise_fraction, std::uint64_t seed,
                                 int threads) {
    if (!(noise_fraction >= 0.0)) throw std::invalid_argument("noise fraction must be nonnegative");
    const CemSystem system(mesh, field, layout);
    DataVector data;
    data.clean = measure(protocol, system.solve_many(protocol.patterns, threads));
    data.noise_fraction = noise_fraction;
    data.seed = seed;
    data.noise_std = noise_fraction * data.clean.cwiseAbs().maxCoeff();
    data.values = data.clean;
    if (data.noise_std > 0.0) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (Eigen::Index m = 0; m < data.values.size(); ++m) data.values[m] += data.noise_std * normal(rng);
    }
    return data;
}

void write_data_csv(const std::filesystem::path& path, const DataVector& data, const MeasurementProtocol& protocol,
                    const ElectrodeLayout& layout) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << std::setprecision(17);
    out << "# J=" << protocol.electrodes << " K=" << protocol.num_patterns() << " L=" << protocol.per_pattern()
        << " N=" << protocol.size() << " noise_fraction=" << data.noise_fraction << " seed=" << data.seed << " z=";
    for (std::size_t j = 0; j < layout.count; ++j) out << (j ? "," : "") << layout.contact_impedance[j];
    out << "\npattern,measurement,value\n";
    const std::size_t L = protocol.per_pattern();
    for (Eigen::Index m = 0; m < data.values.size(); ++m)
        out << static_cast<std::size_t>(m) / L << ',' << static_cast<std::size_t>(m) % L << ',' << data.values[m]
            << '\n';
}

DataVector read_data_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    DataVector data;
    std::vector<double> values;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream fields(line.substr(1));
            std::string token;
            while (fields >> token) {
                const auto eq = token.find('=');
                if (eq == std::string::npos) continue;
                const std::string key = token.substr(0, eq), value = token.substr(eq + 1);
                if (key == "noise_fraction") data.noise_fraction = std::stod(value);
                if (key == "seed") data.seed = std::stoull(value);
            }
            continue;
        }
        if (line.rfind("pattern", 0) == 0) continue;
        const auto last = line.rfind(',');
        values.push_back(std::stod(line.substr(last + 1)));
    }
    data.values = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    return data;
}

}  // namespace uaeit

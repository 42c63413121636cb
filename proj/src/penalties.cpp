#include <cmath>
#include <stdexcept>

#include "uaeit/inverse.hpp"

namespace uaeit {

void RegWeights::validate() const {
    if (alpha0 < 0.0 || alpha1 < 0.0 || beta0 < 0.0 || beta1 < 0.0 || beta2 < 0.0)
        throw std::invalid_argument("regularization weights must be nonnegative");
    if (beta2 > 0.0 && !(nu > 0.0)) throw std::invalid_argument("nu must be positive when beta2 > 0");
}

BarrierSchedule BarrierSchedule::geometric(double start, double end, std::size_t stages) {
    if (stages == 0) throw std::invalid_argument("barrier schedule needs at least one stage");
    if (!(start > 0.0 && end > 0.0)) throw std::invalid_argument("geometric barrier schedule needs positive endpoints");
    if (stages == 1) return {{start}};
    if (!(end < start)) throw std::invalid_argument("barrier schedule must decrease");
    BarrierSchedule schedule;
    const double ratio = std::log(end / start) / static_cast<double>(stages - 1);
    for (std::size_t j = 0; j < stages; ++j) schedule.xi.push_back(start * std::exp(ratio * static_cast<double>(j)));
    schedule.xi.back() = end;
    return schedule;
}

bool BarrierSchedule::active() const {
    for (double x : xi)
        if (x != 0.0) return true;
    return false;
}

void BarrierSchedule::validate() const {
    if (xi.empty()) throw std::invalid_argument("barrier schedule is empty");
    if (!active()) return;
    for (std::size_t j = 0; j < xi.size(); ++j) {
        if (!(xi[j] > 0.0)) throw std::invalid_argument("active barrier schedule needs positive weights");
        if (j > 0 && !(xi[j] < xi[j - 1])) throw std::invalid_argument("barrier schedule must strictly decrease");
    }
}

double penalty_eta(const Eigen::VectorXd& eta, const NeighborGraph& graph, double alpha0, double alpha1) {
    if (static_cast<std::size_t>(eta.size()) != graph.size())
        throw std::invalid_argument("penalty vector does not match the neighbour graph");
    double diff = 0.0;
    for (std::size_t i = 0; i < graph.size(); ++i)
        for (int j : graph.neighbors[i]) {
            const double d = eta[static_cast<Eigen::Index>(i)] - eta[j];
            diff += d * d;
        }
    return alpha0 * eta.squaredNorm() + alpha1 * diff;
}

Eigen::VectorXd penalty_eta_gradient(const Eigen::VectorXd& eta, const NeighborGraph& graph, double alpha0,
                                     double alpha1) {
    Eigen::VectorXd g = 2.0 * alpha0 * eta;
    for (std::size_t i = 0; i < graph.size(); ++i)
        for (int j : graph.neighbors[i])
            g[static_cast<Eigen::Index>(i)] += 4.0 * alpha1 * (eta[static_cast<Eigen::Index>(i)] - eta[j]);
    return g;
}

Eigen::SparseMatrix<double> penalty_eta_hessian(const NeighborGraph& graph, double alpha0, double alpha1) {
    const auto m = static_cast<Eigen::Index>(graph.size());
    std::vector<Eigen::Triplet<double>> triplets;
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto& nbrs = graph.neighbors[static_cast<std::size_t>(i)];
        triplets.emplace_back(i, i, 2.0 * alpha0 + 4.0 * alpha1 * static_cast<double>(nbrs.size()));
        for (int j : nbrs) triplets.emplace_back(i, j, -4.0 * alpha1);
    }
    Eigen::SparseMatrix<double> H(m, m);
    H.setFromTriplets(triplets.begin(), triplets.end());
    return H;
}

double penalty_theta(const Eigen::VectorXd& theta, const NeighborGraph& graph, double beta0, double beta1) {
    if (static_cast<std::size_t>(theta.size()) != graph.size())
        throw std::invalid_argument("penalty vector does not match the neighbour graph");
    double diff = 0.0;
    for (std::size_t i = 0; i < graph.size(); ++i)
        for (int j : graph.neighbors[i]) diff += 2.0 - 2.0 * std::cos(theta[static_cast<Eigen::Index>(i)] - theta[j]);
    return beta0 * theta.squaredNorm() + beta1 * diff;
}

Eigen::VectorXd penalty_theta_gradient(const Eigen::VectorXd& theta, const NeighborGraph& graph, double beta0,
                                       double beta1) {
    Eigen::VectorXd g = 2.0 * beta0 * theta;
    for (std::size_t i = 0; i < graph.size(); ++i)
        for (int j : graph.neighbors[i])
            g[static_cast<Eigen::Index>(i)] += 4.0 * beta1 * std::sin(theta[static_cast<Eigen::Index>(i)] - theta[j]);
    return g;
}

Eigen::SparseMatrix<double> penalty_theta_gn_hessian(const Eigen::VectorXd& theta, const NeighborGraph& graph,
                                                     double beta0, double beta1) {
    const auto m = static_cast<Eigen::Index>(graph.size());
    std::vector<Eigen::Triplet<double>> triplets;
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto& nbrs = graph.neighbors[static_cast<std::size_t>(i)];
        triplets.emplace_back(i, i, 2.0 * beta0 + 4.0 * beta1 * static_cast<double>(nbrs.size()));
        for (int j : nbrs) triplets.emplace_back(i, j, -4.0 * beta1 * std::cos(theta[i] - theta[j]));
    }
    Eigen::SparseMatrix<double> H(m, m);
    H.setFromTriplets(triplets.begin(), triplets.end());
    return H;
}

double penalty_lambda(double lambda, double beta2, double nu) {
    if (!(lambda > 0.0)) throw std::invalid_argument("penalty_lambda needs lambda > 0");
    if (beta2 == 0.0) return 0.0;
    const double t = std::log(lambda);
    return beta2 * (t + t * t / (nu * nu));
}

double barrier(const Eigen::VectorXd& eta, double xi) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        if (!(eta[i] > 0.0)) throw std::domain_error("barrier evaluated at an infeasible point");
        sum += 1.0 / eta[i];
    }
    return xi * sum;
}

Eigen::VectorXd barrier_gradient(const Eigen::VectorXd& eta, double xi) {
    return -xi * eta.array().square().inverse().matrix();
}

}  // namespace uaeit

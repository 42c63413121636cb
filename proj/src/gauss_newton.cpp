#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "uaeit/inverse.hpp"

namespace uaeit {

namespace {

// Largest admissible |log lambda|; TensorField::validate rejects ratios above 1e6.
constexpr double kMaxLogLambda = 13.8;

double misfit_of(const Eigen::VectorXd& prediction, const Eigen::VectorXd& data) {
    if (prediction.size() != data.size())
        throw std::invalid_argument("data vector length does not match the measurement protocol");
    return (prediction - data).squaredNorm();
}

bool positive(const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (!(v[i] > 0.0) || !std::isfinite(v[i])) return false;
    return true;
}

// Optimization problem in the solver's own coordinates x.
struct Problem {
    std::function<bool(const Eigen::VectorXd&)> feasible;
    std::function<ObjectiveTerms(const Eigen::VectorXd&, double xi)> terms;
    // Gradient and Gauss-Newton Hessian of the augmented objective.
    std::function<std::pair<Eigen::VectorXd, Eigen::MatrixXd>(const Eigen::VectorXd&, double xi)> model;
    std::function<double(const Eigen::VectorXd&)> lambda_of;
};

void add_sparse(Eigen::MatrixXd& H, const Eigen::SparseMatrix<double>& S, Eigen::Index offset) {
    for (int k = 0; k < S.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(S, k); it; ++it)
            H(offset + it.row(), offset + it.col()) += it.value();
}

void add_barrier_hessian(Eigen::MatrixXd& H, const Eigen::VectorXd& eta, double xi) {
    if (xi == 0.0) return;
    for (Eigen::Index i = 0; i < eta.size(); ++i) H(i, i) += 2.0 * xi / (eta[i] * eta[i] * eta[i]);
}

void run_gauss_newton(const Problem& problem, Eigen::VectorXd& x, const BarrierSchedule& schedule,
                      const GaussNewtonSettings& settings, ReconState& state) {
    if (!problem.feasible(x)) throw std::invalid_argument("initial guess is infeasible");
    state.lambda_trace.push_back(problem.lambda_of(x));
    int iteration = 0;

    for (std::size_t stage = 0; stage < schedule.xi.size(); ++stage) {
        const double xi = schedule.xi[stage];
        double current = problem.terms(x, xi).total();

        for (int inner = 0; inner < settings.max_inner_iterations; ++inner) {
            if (iteration >= settings.max_total_iterations) {
                state.hit_iteration_cap = true;
                state.message = "iteration cap reached";
                return;
            }
            auto [g, H] = problem.model(x, xi);
            H.diagonal().array() += settings.damping * std::max(H.trace(), 1e-300);
            const Eigen::VectorXd d = H.ldlt().solve(-g);
            const double slope = g.dot(d);
            if (!d.allFinite()) throw std::runtime_error("Gauss-Newton step is not finite");

            if (slope >= 0.0) {
                // Not a descent direction: the quadratic model is already stationary.
                break;
            }
            double step = 1.0;
            int backtracks = 0;
            while (!problem.feasible(x + step * d) && backtracks < settings.max_backtracks) {
                step *= settings.backtrack;
                ++backtracks;
            }
            ObjectiveTerms trial_terms;
            bool accepted = false;
            while (backtracks <= settings.max_backtracks) {
                const Eigen::VectorXd trial = x + step * d;
                if (problem.feasible(trial)) {
                    trial_terms = problem.terms(trial, xi);
                    if (trial_terms.total() <= current + settings.armijo * step * slope) {
                        accepted = true;
                        break;
                    }
                }
                step *= settings.backtrack;
                ++backtracks;
            }
            if (!accepted) {
                if (-slope <= 1e-10 * std::abs(current)) break;  // already at a stationary point to round-off
                state.converged = false;
                state.message = "line search failed at stage " + std::to_string(stage);
                return;
            }

            x += step * d;
            ++iteration;
            const double previous = current;
            current = trial_terms.total();
            IterationRecord record;
            record.iteration = iteration;
            record.stage = static_cast<int>(stage);
            record.xi = xi;
            record.terms = trial_terms;
            record.objective = current;
            record.lambda = problem.lambda_of(x);
            record.step = step;
            record.backtracks = backtracks;
            state.history.push_back(record);
            state.lambda_trace.push_back(record.lambda);

            const double decrease = (previous - current) / std::max(std::abs(previous), 1e-300);
            if (decrease < settings.relative_decrease_tol || step * d.norm() < settings.step_tol) break;
        }
    }
    if (state.message.empty()) state.message = "completed barrier schedule";
}

UniformAnisoParams unpack(const Eigen::VectorXd& x, Eigen::Index m) {
    UniformAnisoParams p;
    p.eta = x.head(m);
    p.theta = x.segment(m, m);
    p.lambda = std::exp(x[2 * m]);
    return p;
}

}  // namespace

ObjectiveTerms objective(const UniformAnisoParams& params, const Eigen::VectorXd& data, const ForwardModel& model,
                         const NeighborGraph& graph, const RegWeights& weights, double xi) {
    ObjectiveTerms t;
    t.misfit = misfit_of(model.predict(params), data);
    t.penalty_eta = penalty_eta(params.eta, graph, weights.alpha0, weights.alpha1);
    t.penalty_theta = penalty_theta(params.theta, graph, weights.beta0, weights.beta1);
    t.penalty_lambda = penalty_lambda(params.lambda, weights.beta2, weights.nu);
    t.barrier = xi == 0.0 ? 0.0 : barrier(params.eta, xi);
    return t;
}

ObjectiveTerms objective_isotropic(const Eigen::VectorXd& gamma, const Eigen::VectorXd& data,
                                   const ForwardModel& model, const NeighborGraph& graph, const RegWeights& weights,
                                   double xi) {
    ObjectiveTerms t;
    t.misfit = misfit_of(model.predict_isotropic(gamma), data);
    t.penalty_eta = penalty_eta(gamma, graph, weights.alpha0, weights.alpha1);
    t.barrier = xi == 0.0 ? 0.0 : barrier(gamma, xi);
    return t;
}

Eigen::VectorXd objective_gradient(const UniformAnisoParams& params, const Eigen::VectorXd& data,
                                   const ForwardModel& model, const NeighborGraph& graph, const RegWeights& weights,
                                   double xi) {
    const auto lin = model.linearize(params);
    const auto m = static_cast<Eigen::Index>(params.size());
    Eigen::VectorXd g = 2.0 * lin.jacobian.transpose() * (lin.prediction - data);
    g.head(m) += penalty_eta_gradient(params.eta, graph, weights.alpha0, weights.alpha1);
    if (xi != 0.0) g.head(m) += barrier_gradient(params.eta, xi);
    g.segment(m, m) += penalty_theta_gradient(params.theta, graph, weights.beta0, weights.beta1);
    if (weights.beta2 != 0.0) {
        const double t = std::log(params.lambda);
        g[2 * m] += weights.beta2 * (1.0 + 2.0 * t / (weights.nu * weights.nu)) / params.lambda;
    }
    return g;
}

ReconState gauss_newton_reconstruct(const Eigen::VectorXd& data, const ForwardModel& model,
                                    const NeighborGraph& graph, const RegWeights& weights,
                                    const BarrierSchedule& schedule, const GaussNewtonSettings& settings,
                                    const std::optional<UniformAnisoParams>& initial) {
    weights.validate();
    schedule.validate();
    const auto m = static_cast<Eigen::Index>(model.num_pixels());
    if (graph.size() != model.num_pixels()) throw std::invalid_argument("neighbour graph does not match the lattice");
    if (static_cast<std::size_t>(data.size()) != model.num_data())
        throw std::invalid_argument("data vector length does not match the measurement protocol");

    const UniformAnisoParams start = initial ? *initial : UniformAnisoParams::isotropic_unit(model.num_pixels());
    if (start.size() != model.num_pixels()) throw std::invalid_argument("initial guess does not match the lattice");
    start.validate();

    Eigen::VectorXd x(2 * m + 1);
    x << start.eta, start.theta, std::log(start.lambda);

    Problem problem;
    problem.feasible = [m](const Eigen::VectorXd& y) {
        return positive(y.head(m)) && y.allFinite() && std::abs(y[2 * m]) < kMaxLogLambda;
    };
    problem.terms = [&, m](const Eigen::VectorXd& y, double xi) {
        return objective(unpack(y, m), data, model, graph, weights, xi);
    };
    problem.lambda_of = [m](const Eigen::VectorXd& y) { return std::exp(y[2 * m]); };
    problem.model = [&, m](const Eigen::VectorXd& y, double xi) {
        const UniformAnisoParams p = unpack(y, m);
        auto lin = model.linearize(p);
        // Chain rule to log(lambda).
        lin.jacobian.col(2 * m) *= p.lambda;
        const Eigen::VectorXd residual = lin.prediction - data;
        Eigen::VectorXd g = 2.0 * lin.jacobian.transpose() * residual;
        Eigen::MatrixXd H = 2.0 * lin.jacobian.transpose() * lin.jacobian;

        g.head(m) += penalty_eta_gradient(p.eta, graph, weights.alpha0, weights.alpha1);
        add_sparse(H, penalty_eta_hessian(graph, weights.alpha0, weights.alpha1), 0);
        if (xi != 0.0) {
            g.head(m) += barrier_gradient(p.eta, xi);
            add_barrier_hessian(H, p.eta, xi);
        }
        g.segment(m, m) += penalty_theta_gradient(p.theta, graph, weights.beta0, weights.beta1);
        add_sparse(H, penalty_theta_gn_hessian(p.theta, graph, weights.beta0, weights.beta1), m);
        if (weights.beta2 != 0.0) {
            const double t = y[2 * m];
            const double nu2 = weights.nu * weights.nu;
            g[2 * m] += weights.beta2 * (1.0 + 2.0 * t / nu2);
            H(2 * m, 2 * m) += 2.0 * weights.beta2 / nu2;
        }
        return std::make_pair(g, H);
    };

    ReconState state;
    state.anisotropic = true;
    run_gauss_newton(problem, x, schedule, settings, state);
    state.params = unpack(x, m).canonical();
    return state;
}

ReconState isotropic_reconstruct(const Eigen::VectorXd& data, const ForwardModel& model, const NeighborGraph& graph,
                                 const RegWeights& weights, const BarrierSchedule& schedule,
                                 const GaussNewtonSettings& settings, const std::optional<Eigen::VectorXd>& initial) {
    weights.validate();
    schedule.validate();
    const auto m = static_cast<Eigen::Index>(model.num_pixels());
    if (graph.size() != model.num_pixels()) throw std::invalid_argument("neighbour graph does not match the lattice");
    if (static_cast<std::size_t>(data.size()) != model.num_data())
        throw std::invalid_argument("data vector length does not match the measurement protocol");

    Eigen::VectorXd x = initial ? *initial : Eigen::VectorXd::Ones(m);
    if (x.size() != m) throw std::invalid_argument("initial guess does not match the lattice");

    Problem problem;
    problem.feasible = [](const Eigen::VectorXd& y) { return positive(y); };
    problem.terms = [&](const Eigen::VectorXd& y, double xi) {
        return objective_isotropic(y, data, model, graph, weights, xi);
    };
    problem.lambda_of = [](const Eigen::VectorXd&) { return 1.0; };
    problem.model = [&](const Eigen::VectorXd& y, double xi) {
        const auto lin = model.linearize_isotropic(y);
        Eigen::VectorXd g = 2.0 * lin.jacobian.transpose() * (lin.prediction - data);
        Eigen::MatrixXd H = 2.0 * lin.jacobian.transpose() * lin.jacobian;
        g += penalty_eta_gradient(y, graph, weights.alpha0, weights.alpha1);
        add_sparse(H, penalty_eta_hessian(graph, weights.alpha0, weights.alpha1), 0);
        if (xi != 0.0) {
            g += barrier_gradient(y, xi);
            add_barrier_hessian(H, y, xi);
        }
        return std::make_pair(g, H);
    };

    ReconState state;
    state.anisotropic = false;
    run_gauss_newton(problem, x, schedule, settings, state);
    state.gamma = x;
    state.params.eta = x;
    state.params.theta = Eigen::VectorXd::Zero(m);
    state.params.lambda = 1.0;
    return state;
}

void write_recon_csv(const std::filesystem::path& path, const ReconState& state) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out.precision(17);
    if (state.anisotropic) {
        out << "# lambda= " << state.params.lambda << "\n";
        out << "pixel,eta,theta\n";
        for (Eigen::Index i = 0; i < state.params.eta.size(); ++i)
            out << i << ',' << state.params.eta[i] << ',' << state.params.theta[i] << '\n';
    } else {
        out << "pixel,gamma\n";
        for (Eigen::Index i = 0; i < state.gamma.size(); ++i) out << i << ',' << state.gamma[i] << '\n';
    }
}

void write_run_log(const std::filesystem::path& path, const ReconState& state) {
    nlohmann::json log;
    log["mode"] = state.anisotropic ? "anisotropic" : "isotropic";
    log["converged"] = state.converged;
    log["hit_iteration_cap"] = state.hit_iteration_cap;
    log["message"] = state.message;
    log["lambda"] = state.params.lambda;
    log["lambda_trace"] = state.lambda_trace;
    nlohmann::json iterations = nlohmann::json::array();
    for (const auto& r : state.history) {
        iterations.push_back({{"iteration", r.iteration},
                              {"stage", r.stage},
                              {"xi", r.xi},
                              {"objective", r.objective},
                              {"misfit", r.terms.misfit},
                              {"penalty_eta", r.terms.penalty_eta},
                              {"penalty_theta", r.terms.penalty_theta},
                              {"penalty_lambda", r.terms.penalty_lambda},
                              {"barrier", r.terms.barrier},
                              {"lambda", r.lambda},
                              {"step", r.step},
                              {"backtracks", r.backtracks}});
    }
    log["iterations"] = iterations;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << log.dump(2) << '\n';
}

}  // namespace uaeit

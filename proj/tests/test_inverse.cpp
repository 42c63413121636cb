#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "uaeit/inverse.hpp"

using namespace uaeit;
using std::numbers::pi;

namespace {

NeighborGraph chain(std::size_t n) {
    NeighborGraph g;
    g.neighbors.resize(n);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        g.neighbors[i].push_back(static_cast<int>(i + 1));
        g.neighbors[i + 1].push_back(static_cast<int>(i));
    }
    return g;
}

Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Eigen::VectorXd v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

template <class F>
Eigen::VectorXd central_difference(F f, const Eigen::VectorXd& x, double h) {
    Eigen::VectorXd g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Eigen::VectorXd p = x, m = x;
        p[i] += h;
        m[i] -= h;
        g[i] = (f(p) - f(m)) / (2.0 * h);
    }
    return g;
}

double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (a - b).norm() / b.norm(); }

// Small disk problem shared by the forward-map tests.
struct Small {
    BoundaryCurve curve = build_boundary(DomainSpec::disk(), 1024);
    ElectrodeLayout layout = place_electrodes(curve, 16, 0.5);
    Mesh mesh;
    PixelLattice lattice;
    NeighborGraph graph;
    MeasurementProtocol protocol = adjacent_protocol(16);

    Small(std::size_t elements, std::size_t pixels) {
        mesh = triangulate(curve, layout, elements);
        lattice = build_pixel_lattice(mesh, pixels);
        graph = NeighborGraph::from_lattice(lattice);
    }

    UniformAnisoParams random_params(std::mt19937_64& rng) const {
        UniformAnisoParams p;
        p.eta = random_vector(rng, static_cast<Eigen::Index>(lattice.size()), 0.6, 1.8);
        p.theta = random_vector(rng, static_cast<Eigen::Index>(lattice.size()), -1.5, 1.5);
        p.lambda = std::uniform_real_distribution<double>(1.3, 3.0)(rng);
        return p;
    }
};

}  // namespace

TEST_CASE("eta penalty") {
    const NeighborGraph g = chain(5);
    CHECK(penalty_eta(Eigen::VectorXd::Constant(5, 2.0), g, 0.3, 7.0) == doctest::Approx(0.3 * 5 * 4.0));
    const NeighborGraph pair = chain(2);
    CHECK(penalty_eta(Eigen::Vector2d(1.0, 3.0), pair, 0.0, 1.0) == 8.0);

    std::mt19937_64 rng(1);
    const Eigen::VectorXd eta = random_vector(rng, 5, 0.5, 2.0);
    const auto f = [&](const Eigen::VectorXd& x) { return penalty_eta(x, g, 0.2, 1.5); };
    const Eigen::VectorXd grad = penalty_eta_gradient(eta, g, 0.2, 1.5);
    CHECK(relative_error(grad, central_difference(f, eta, 1e-5)) < 1e-8);
    // quadratic form: gradient = H eta, value = eta^T H eta / 2
    const Eigen::SparseMatrix<double> H = penalty_eta_hessian(g, 0.2, 1.5);
    CHECK((H * eta - grad).norm() <= 1e-13 * grad.norm());
    CHECK(0.5 * eta.dot(H * eta) == doctest::Approx(f(eta)).epsilon(1e-13));
}

TEST_CASE("theta penalty") {
    const NeighborGraph pair = chain(2);
    CHECK(penalty_theta(Eigen::Vector2d(0.0, pi), pair, 0.0, 1.0) == doctest::Approx(8.0).epsilon(1e-15));
    const NeighborGraph g = chain(6);
    CHECK(penalty_theta(Eigen::VectorXd::Constant(6, 0.9), g, 0.0, 3.0) == 0.0);

    std::mt19937_64 rng(2);
    const Eigen::VectorXd theta = random_vector(rng, 6, -3.0, 3.0);
    const Eigen::VectorXd shifted = theta.array() + 2.0 * pi;
    CHECK(penalty_theta(shifted, g, 0.0, 1.0) == doctest::Approx(penalty_theta(theta, g, 0.0, 1.0)).epsilon(1e-12));

    const auto f = [&](const Eigen::VectorXd& x) { return penalty_theta(x, g, 0.4, 1.3); };
    CHECK(relative_error(penalty_theta_gradient(theta, g, 0.4, 1.3), central_difference(f, theta, 1e-5)) < 1e-8);
    const Eigen::MatrixXd H = Eigen::MatrixXd(penalty_theta_gn_hessian(theta, g, 0.4, 1.3));
    CHECK((H - H.transpose()).norm() == 0.0);
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H).eigenvalues().minCoeff() >= -1e-12);
}

TEST_CASE("lambda penalty") {
    CHECK(penalty_lambda(1.0, 3.0, 0.7) == 0.0);
    CHECK(penalty_lambda(5.0, 0.0, 1.0) == 0.0);
    CHECK(penalty_lambda(std::exp(1.0), 1.0, 1.0) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK_THROWS(penalty_lambda(0.0, 1.0, 1.0));
    CHECK_THROWS(penalty_lambda(-1.0, 1.0, 1.0));
    // minimizer at log lambda = -nu^2 / 2, located by grid search
    const double nu = 0.8;
    double best_t = 0.0, best = 1e300;
    for (int k = -4000; k <= 4000; ++k) {
        const double t = k * 1e-3;
        const double v = penalty_lambda(std::exp(t), 1.0, nu);
        if (v < best) {
            best = v;
            best_t = t;
        }
    }
    CHECK(std::abs(best_t + 0.5 * nu * nu) <= 1e-3);
}

TEST_CASE("barrier") {
    CHECK(barrier(Eigen::VectorXd::Ones(437), 1e-5) == doctest::Approx(4.37e-3).epsilon(1e-12));
    CHECK(barrier(Eigen::VectorXd::Ones(10), 0.0) == 0.0);
    std::mt19937_64 rng(3);
    const Eigen::VectorXd eta = random_vector(rng, 8, 0.3, 2.0);
    const auto f = [&](const Eigen::VectorXd& x) { return barrier(x, 0.7); };
    CHECK(relative_error(barrier_gradient(eta, 0.7), central_difference(f, eta, 1e-6)) < 1e-8);
    Eigen::VectorXd bad = eta;
    bad[3] = 0.0;
    CHECK_THROWS_AS(barrier(bad, 1e-5), std::domain_error);
}

TEST_CASE("barrier schedule") {
    const BarrierSchedule s = BarrierSchedule::geometric(1e-5, 1e-12, 8);
    REQUIRE(s.xi.size() == 8);
    CHECK(s.xi.front() == 1e-5);
    CHECK(s.xi.back() == 1e-12);
    for (std::size_t j = 1; j < 8; ++j) CHECK(s.xi[j] < s.xi[j - 1]);
    CHECK(s.active());
    CHECK_NOTHROW(s.validate());
    CHECK_FALSE(BarrierSchedule::inactive(3).active());
    CHECK_NOTHROW(BarrierSchedule::inactive(3).validate());
    CHECK_THROWS(BarrierSchedule{{1e-5, 1e-5}}.validate());
    CHECK_THROWS(BarrierSchedule{{1e-5, -1e-6}}.validate());
    CHECK_THROWS(RegWeights{-1.0}.validate());
}

TEST_CASE("adjoint Jacobian") {
    const Small s(500, 24);
    const ForwardModel model(s.mesh, s.layout, s.protocol, s.lattice, 2);
    std::mt19937_64 rng(4);
    const UniformAnisoParams p = s.random_params(rng);
    const auto lin = model.linearize(p);
    REQUIRE(lin.jacobian.rows() == 208);
    REQUIRE(lin.jacobian.cols() == static_cast<Eigen::Index>(2 * s.lattice.size() + 1));
    CHECK((lin.prediction - model.predict(p)).norm() == 0.0);

    SUBCASE("central finite differences") {
        const auto M = static_cast<Eigen::Index>(s.lattice.size());
        double worst = 0.0;
        for (Eigen::Index c = 0; c < 2 * M + 1; ++c) {
            const double h = 1e-6 * (c < M ? p.eta[c] : c == 2 * M ? p.lambda : 1.0);
            UniformAnisoParams a = p, b = p;
            if (c < M) {
                a.eta[c] += h;
                b.eta[c] -= h;
            } else if (c < 2 * M) {
                a.theta[c - M] += h;
                b.theta[c - M] -= h;
            } else {
                a.lambda += h;
                b.lambda -= h;
            }
            const Eigen::VectorXd fd = (model.predict(a) - model.predict(b)) / (2.0 * h);
            worst = std::max(worst, relative_error(lin.jacobian.col(c), fd));
        }
        CHECK(worst < 1e-4);
    }
    SUBCASE("theta columns vanish at lambda = 1") {
        UniformAnisoParams iso = p;
        iso.lambda = 1.0;
        const Eigen::MatrixXd J = model.linearize(iso).jacobian;
        const auto M = static_cast<Eigen::Index>(s.lattice.size());
        CHECK(J.middleCols(M, M).norm() < 1e-8 * J.norm());
        // at lambda = 1 the eta block is the isotropic Jacobian
        const Eigen::MatrixXd Jiso = model.linearize_isotropic(iso.eta).jacobian;
        CHECK((J.leftCols(M) - Jiso).norm() <= 1e-10 * Jiso.norm());
    }
    SUBCASE("thread count does not change the result") {
        const ForwardModel serial(s.mesh, s.layout, s.protocol, s.lattice, 1);
        const auto other = serial.linearize(p);
        CHECK(other.jacobian == lin.jacobian);
        CHECK(other.prediction == lin.prediction);
    }
}

TEST_CASE("objective") {
    const Small s(500, 24);
    const ForwardModel model(s.mesh, s.layout, s.protocol, s.lattice);
    std::mt19937_64 rng(5);
    const UniformAnisoParams truth = s.random_params(rng);
    const Eigen::VectorXd data =
        simulate_measurements(s.mesh, gamma_hat(truth, s.lattice), s.layout, s.protocol, 0.0, 1).values;

    SUBCASE("self-consistent data") {
        const ObjectiveTerms t = objective(truth, data, model, s.graph, RegWeights{}, 0.0);
        CHECK(t.total() <= 1e-18 * data.squaredNorm());
        // shifting the data by a constant adds N c^2 at a zero-residual state
        const double c = 0.01;
        const Eigen::VectorXd shifted = data.array() + c;
        const double m = objective(truth, shifted, model, s.graph, RegWeights{}, 0.0).misfit;
        CHECK(m == doctest::Approx(t.misfit + 208 * c * c).epsilon(1e-9));
    }
    SUBCASE("terms add up") {
        const RegWeights w{1e-3, 2e-3, 3e-3, 4e-3, 5e-3, 1.0};
        const UniformAnisoParams p = s.random_params(rng);
        const ObjectiveTerms t = objective(p, data, model, s.graph, w, 1e-4);
        CHECK(t.penalty_eta == penalty_eta(p.eta, s.graph, w.alpha0, w.alpha1));
        CHECK(t.penalty_theta == penalty_theta(p.theta, s.graph, w.beta0, w.beta1));
        CHECK(t.penalty_lambda == penalty_lambda(p.lambda, w.beta2, w.nu));
        CHECK(t.barrier == barrier(p.eta, 1e-4));
    }
    SUBCASE("infeasible state is rejected") {
        UniformAnisoParams bad = truth;
        bad.eta[0] = -0.1;
        CHECK_THROWS(objective(bad, data, model, s.graph, RegWeights{}, 1e-5));
    }
    SUBCASE("gradient of the augmented objective") {
        const RegWeights w{1e-3, 1e-2, 1e-3, 5e-3, 1e-3, 1.0};
        const auto M = static_cast<Eigen::Index>(s.lattice.size());
        for (int k = 0; k < 5; ++k) {
            const UniformAnisoParams p = s.random_params(rng);
            Eigen::VectorXd x(2 * M + 1);
            x << p.eta, p.theta, p.lambda;
            const auto f = [&](const Eigen::VectorXd& y) {
                UniformAnisoParams q;
                q.eta = y.head(M);
                q.theta = y.segment(M, M);
                q.lambda = y[2 * M];
                return objective(q, data, model, s.graph, w, 1e-4).total();
            };
            const Eigen::VectorXd g = objective_gradient(p, data, model, s.graph, w, 1e-4);
            CHECK(relative_error(g, central_difference(f, x, 1e-6)) < 1e-4);
        }
    }
}

TEST_CASE("micro-problem: zero-weight minimum is attained at the generating parameters") {
    const Small s(300, 9);
    REQUIRE(s.lattice.size() == 9);
    const ForwardModel model(s.mesh, s.layout, s.protocol, s.lattice);
    UniformAnisoParams truth;
    truth.eta = (Eigen::VectorXd(9) << 1.0, 1.3, 0.8, 1.1, 1.5, 0.9, 1.2, 0.7, 1.0).finished();
    truth.theta = (Eigen::VectorXd(9) << 0.2, 0.3, 0.1, 0.4, 0.2, 0.0, 0.3, 0.5, 0.2).finished();
    truth.lambda = 2.0;
    const Eigen::VectorXd data =
        simulate_measurements(s.mesh, gamma_hat(truth, s.lattice), s.layout, s.protocol, 0.0, 1).values;
    const ObjectiveTerms at_truth = objective(truth, data, model, s.graph, RegWeights{}, 0.0);
    CHECK(at_truth.total() <= 1e-20 * data.squaredNorm());

    // grid-search oracle over lambda and a uniform eta scale: the minimum sits at the truth
    double best = 1e300, best_lambda = 0.0, best_scale = 0.0;
    for (double lambda = 1.5; lambda <= 2.5001; lambda += 0.05)
        for (double scale = 0.8; scale <= 1.2001; scale += 0.02) {
            UniformAnisoParams q = truth;
            q.lambda = lambda;
            q.eta *= scale;
            const double v = objective(q, data, model, s.graph, RegWeights{}, 0.0).total();
            if (v < best) {
                best = v;
                best_lambda = lambda;
                best_scale = scale;
            }
        }
    CHECK(best_lambda == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(best_scale == doctest::Approx(1.0).epsilon(1e-9));

    // multi-start Gauss-Newton reaches the same minimum value
    GaussNewtonSettings settings;
    settings.max_inner_iterations = 60;
    settings.max_total_iterations = 60;
    settings.relative_decrease_tol = 1e-14;
    settings.step_tol = 1e-14;
    std::mt19937_64 rng(6);
    const double initial = objective(UniformAnisoParams::isotropic_unit(9), data, model, s.graph, RegWeights{}, 0.0).total();
    double best_final = 1e300;
    UniformAnisoParams best_params;
    for (int start = 0; start < 4; ++start) {
        UniformAnisoParams x0 = UniformAnisoParams::isotropic_unit(9);
        if (start > 0) {
            x0.eta = random_vector(rng, 9, 0.8, 1.2);
            x0.theta = random_vector(rng, 9, -0.5, 0.8);
            x0.lambda = 1.0 + 0.5 * start;
        }
        const ReconState st =
            gauss_newton_reconstruct(data, model, s.graph, RegWeights{}, BarrierSchedule::inactive(), settings, x0);
        const double v = objective(st.params, data, model, s.graph, RegWeights{}, 0.0).total();
        if (v < best_final) {
            best_final = v;
            best_params = st.params;
        }
    }
    CHECK(best_final <= 1e-10 * initial);
    CHECK(best_params.lambda == doctest::Approx(2.0).epsilon(1e-3));
    CHECK(relative_error(best_params.eta, truth.eta) < 1e-3);
}

TEST_CASE("Gauss-Newton run properties") {
    const Small s(500, 24);
    const ForwardModel model(s.mesh, s.layout, s.protocol, s.lattice);
    std::mt19937_64 rng(8);
    UniformAnisoParams truth = s.random_params(rng);
    // swapped representative generates the data; the result must be canonical anyway
    truth.lambda = 0.5;
    const Eigen::VectorXd data =
        simulate_measurements(s.mesh, gamma_hat(truth, s.lattice), s.layout, s.protocol, 0.005, 9).values;
    const RegWeights w{1e-8, 1e-4, 1e-8, 5e-6, 0.0, 1.0};
    const ReconState st = gauss_newton_reconstruct(data, model, s.graph, w,
                                                   BarrierSchedule::geometric(1e-5, 1e-12, 8), GaussNewtonSettings{});
    CHECK(st.converged);
    CHECK(st.params.lambda >= 1.0);
    for (Eigen::Index i = 0; i < st.params.theta.size(); ++i) {
        CHECK(st.params.theta[i] >= -pi / 2.0);
        CHECK(st.params.theta[i] < pi / 2.0);
        CHECK(st.params.eta[i] > 0.0);
    }
    CHECK(st.lambda_trace.size() == st.history.size() + 1);
    CHECK(st.history.size() <= 60);
    for (std::size_t k = 0; k < st.history.size(); ++k) {
        CHECK(st.history[k].lambda > 0.0);
        CHECK(st.history[k].terms.misfit >= 0.0);
        if (k > 0 && st.history[k].stage == st.history[k - 1].stage)
            CHECK(st.history[k].objective <= st.history[k - 1].objective);
    }
    CHECK(st.history.back().terms.misfit < st.history.front().terms.misfit);

    const auto dir = std::filesystem::temp_directory_path() / "uaeit_test_inverse";
    std::filesystem::create_directories(dir);
    write_recon_csv(dir / "recon.csv", st);
    write_run_log(dir / "log.json", st);
    std::ifstream csv(dir / "recon.csv");
    std::string first, header;
    std::getline(csv, first);
    std::getline(csv, header);
    CHECK(first.rfind("# lambda=", 0) == 0);
    CHECK(header == "pixel,eta,theta");
    nlohmann::json log;
    std::ifstream(dir / "log.json") >> log;
    CHECK(log["iterations"].size() == st.history.size());
    CHECK(log["lambda_trace"].size() == st.lambda_trace.size());
    std::filesystem::remove_all(dir);
}

TEST_CASE("isotropic baseline") {
    const Small s(900, 40);
    const ForwardModel model(s.mesh, s.layout, s.protocol, s.lattice);

    SUBCASE("homogeneous data give a constant reconstruction") {
        const Eigen::VectorXd data =
            simulate_measurements(s.mesh, TensorField::constant(s.mesh.num_triangles(), Tensor2::isotropic(2.0)),
                                  s.layout, s.protocol, 0.0, 1)
                .values;
        const ReconState st = isotropic_reconstruct(data, model, s.graph, RegWeights{1e-8, 1e-4},
                                                    BarrierSchedule::inactive(), GaussNewtonSettings{});
        CHECK(st.converged);
        CHECK_FALSE(st.anisotropic);
        const double mean = st.gamma.mean();
        CHECK(mean == doctest::Approx(2.0).epsilon(0.01));
        CHECK((st.gamma.array() - mean).abs().maxCoeff() <= 0.01 * mean);
    }
    SUBCASE("isotropic and anisotropic models agree at lambda = 1") {
        std::mt19937_64 rng(10);
        const Eigen::VectorXd gamma = random_vector(rng, static_cast<Eigen::Index>(s.lattice.size()), 0.5, 2.0);
        UniformAnisoParams p = UniformAnisoParams::isotropic_unit(s.lattice.size());
        p.eta = gamma;
        CHECK((model.predict(p) - model.predict_isotropic(gamma)).norm() <= 1e-12 * model.predict(p).norm());
    }
}

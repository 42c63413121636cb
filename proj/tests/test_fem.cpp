#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "uaeit/fem.hpp"

using namespace uaeit;
using std::numbers::pi;

namespace {

struct Setup {
    BoundaryCurve curve;
    ElectrodeLayout layout;
    Mesh mesh;

    Setup(const DomainSpec& spec, std::size_t target, double z = 1.0) {
        curve = build_boundary(spec, 2048);
        layout = place_electrodes(curve, 16, 0.5, 0.0, z);
        mesh = triangulate(curve, layout, target);
    }
};

Eigen::VectorXd pair_pattern(std::size_t J, std::size_t a, std::size_t b) {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(J));
    p[static_cast<Eigen::Index>(a)] = 1.0;
    p[static_cast<Eigen::Index>(b)] = -1.0;
    return p;
}

TensorField varied_field(const Mesh& mesh) {
    TensorField f = TensorField::constant(mesh.num_triangles(), Tensor2::isotropic(1.0));
    for (std::size_t t = 0; t < f.size(); ++t) {
        const Vec2 c = mesh.centroid(t);
        f[t] = uniform_tensor(1.0 + 0.5 * c.x() * c.x(), 0.8 * c.y(), 2.0);
    }
    return f;
}

double relative_asymmetry(const Eigen::MatrixXd& m) { return (m - m.transpose()).norm() / m.norm(); }

// Mirror-pair asymmetry of U for the drive (+1 at e0, -1 at e1) on the disk.
// Reflection across the bisector of e0, e1 maps e_k to e_{1-k} and negates the drive.
double mirror_defect(std::size_t target) {
    Setup s(DomainSpec::disk(), target);
    const CemSystem sys(s.mesh, TensorField::constant(s.mesh.num_triangles(), Tensor2::isotropic(1.0)), s.layout);
    const Eigen::VectorXd U = sys.solve_current_drive(pair_pattern(16, 0, 1)).U;
    double defect = 0.0;
    for (int k = 0; k < 16; ++k) defect = std::max(defect, std::abs(U[k] + U[((1 - k) % 16 + 16) % 16]));
    return defect / U.cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("reference P1 stiffness") {
    const Eigen::Matrix3d k = element_stiffness(Vec2(0, 0), Vec2(1, 0), Vec2(0, 1), Tensor2::isotropic(1.0));
    Eigen::Matrix3d expected;
    expected << 1.0, -0.5, -0.5, -0.5, 0.5, 0.0, -0.5, 0.0, 0.5;
    CHECK((k - expected).norm() <= 1e-15);
    // anisotropic entry: diag(2, 3) scales the x and y gradient products
    const Eigen::Matrix3d ka = element_stiffness(Vec2(0, 0), Vec2(1, 0), Vec2(0, 1), Tensor2{2.0, 0.0, 3.0});
    Eigen::Matrix3d expected_a;
    expected_a << 2.5, -1.0, -1.5, -1.0, 1.0, 0.0, -1.5, 0.0, 1.5;
    CHECK((ka - expected_a).norm() <= 1e-15);
}

TEST_CASE("assembly is linear in the conductivity and symmetric") {
    Setup s(DomainSpec::disk(), 2190);
    const TensorField f = varied_field(s.mesh);
    TensorField doubled = f;
    for (auto& t : doubled.values) t = t * 2.0;
    const Eigen::SparseMatrix<double> a = assemble_stiffness(s.mesh, f);
    const Eigen::SparseMatrix<double> b = assemble_stiffness(s.mesh, doubled);
    CHECK((b - 2.0 * a).norm() <= 1e-15 * b.norm());
    const CemSystem sys(s.mesh, f, s.layout);
    const Eigen::SparseMatrix<double> m = sys.matrix();
    const Eigen::SparseMatrix<double> mt = m.transpose();
    CHECK((m - mt).norm() <= 1e-14 * m.norm());
    // constants lie in the kernel of the ungauged form
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(m.rows());
    CHECK((m * ones).norm() <= 1e-12 * m.norm());
}

TEST_CASE("non-SPD element is rejected") {
    Setup s(DomainSpec::disk(), 400);
    TensorField f = TensorField::constant(s.mesh.num_triangles(), Tensor2::isotropic(1.0));
    f[5] = Tensor2{1.0, 3.0, 1.0};
    CHECK_THROWS_WITH_AS(CemSystem(s.mesh, f, s.layout), doctest::Contains("5"), std::invalid_argument);
}

TEST_CASE("current drive solutions") {
    Setup s(DomainSpec::ellipse(1.25, 0.8), 2190);
    const CemSystem sys(s.mesh, varied_field(s.mesh), s.layout);
    SUBCASE("zero pattern") {
        const CemSolution z = sys.solve_current_drive(Eigen::VectorXd::Zero(16));
        CHECK(z.u.cwiseAbs().maxCoeff() == 0.0);
        CHECK(z.U.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("incompatible pattern") {
        Eigen::VectorXd p = Eigen::VectorXd::Zero(16);
        p[0] = 1.0;
        CHECK_THROWS_AS(sys.solve_current_drive(p), std::invalid_argument);
    }
    SUBCASE("residual, gauge and linearity") {
        const Eigen::VectorXd p = pair_pattern(16, 3, 9);
        const CemSolution a = sys.solve_current_drive(p);
        CHECK(sys.relative_residual(a, p) < 1e-10);
        CHECK(std::abs(a.U.sum()) <= 1e-12 * a.U.norm());
        const CemSolution b = sys.solve_current_drive(-2.5 * p);
        CHECK((b.U + 2.5 * a.U).norm() <= 1e-12 * b.U.norm());
        CHECK((b.u + 2.5 * a.u).norm() <= 1e-12 * b.u.norm());
        const CemSolution neg = sys.solve_current_drive(-p);
        CHECK((a.U + neg.U).norm() <= 1e-14 * a.U.norm());
    }
}

TEST_CASE("mirror symmetry on the disk") {
    // The ring mesh is not exactly mirror symmetric, so the defect is a
    // discretization effect that must shrink under refinement.
    const double coarse = mirror_defect(2190);
    const double fine = mirror_defect(8800);
    CHECK(coarse < 2e-2);
    CHECK(fine < coarse);
}

TEST_CASE("current to voltage map") {
    SUBCASE("symmetric on all test domains") {
        for (const auto& spec : {DomainSpec::ellipse(1.25, 0.8), DomainSpec::truncated_ellipse(1.1, 0.9),
                                 DomainSpec::fourier_default(), DomainSpec::disk()}) {
            Setup s(spec, 2300);
            const CemSystem sys(s.mesh, varied_field(s.mesh), s.layout);
            const Eigen::MatrixXd G = sys.current_to_voltage(2);
            CHECK(relative_asymmetry(G) < 1e-10);
            CHECK((G * Eigen::VectorXd::Ones(16)).norm() <= 1e-10 * G.norm());
            // E is the pseudo-inverse of G on mean-zero vectors
            const Eigen::MatrixXd E = sys.voltage_to_current();
            const Eigen::MatrixXd P = Eigen::MatrixXd::Identity(16, 16) - Eigen::MatrixXd::Constant(16, 16, 1.0 / 16.0);
            CHECK((E * G - P).norm() <= 1e-8);
        }
    }
    SUBCASE("contact impedance adds series resistance") {
        // share of the Frobenius norm carried by the diagonal
        const auto dominance = [](const Eigen::MatrixXd& G) { return G.diagonal().norm() / G.norm(); };
        Setup s1(DomainSpec::disk(), 1200, 1.0);
        Setup s2(DomainSpec::disk(), 1200, 2.0);
        const TensorField f = TensorField::constant(s1.mesh.num_triangles(), Tensor2::isotropic(1.0));
        const Eigen::MatrixXd G1 = CemSystem(s1.mesh, f, s1.layout).current_to_voltage();
        const Eigen::MatrixXd G2 = CemSystem(s2.mesh, f, s2.layout).current_to_voltage();
        CHECK(dominance(G2) > dominance(G1));
        CHECK((G2.diagonal() - G1.diagonal()).minCoeff() > 0.0);
    }
}

TEST_CASE("adjacent protocol") {
    const MeasurementProtocol p16 = adjacent_protocol(16);
    CHECK(p16.num_patterns() == 16);
    CHECK(p16.per_pattern() == 13);
    CHECK(p16.size() == 208);
    for (std::size_t n = 0; n < 16; ++n) {
        const Eigen::VectorXd I = p16.patterns.row(static_cast<Eigen::Index>(n)).transpose();
        CHECK(I.sum() == 0.0);
        CHECK(I[static_cast<Eigen::Index>(n)] == 1.0);
        CHECK(I[static_cast<Eigen::Index>((n + 1) % 16)] == -1.0);
        CHECK(I.cwiseAbs().sum() == 2.0);
        REQUIRE(p16.pairs[n].size() == 13);
        for (std::size_t l = 0; l < 13; ++l) {
            const auto [a, b] = p16.pairs[n][l];
            CHECK(b == (a + 1) % 16);
            for (int driven : {static_cast<int>(n), static_cast<int>((n + 1) % 16)}) {
                CHECK(a != driven);
                CHECK(b != driven);
            }
            if (l > 0) CHECK(a > p16.pairs[n][l - 1].first);
            const Eigen::VectorXd row = p16.projectors[n].row(static_cast<Eigen::Index>(l)).transpose();
            CHECK(row[a] == 1.0);
            CHECK(row[b] == -1.0);
            CHECK(row.cwiseAbs().sum() == 2.0);
        }
    }
    const MeasurementProtocol p4 = adjacent_protocol(4);
    CHECK(p4.per_pattern() == 1);
    CHECK(p4.pairs[0][0] == std::pair<int, int>{2, 3});
    CHECK_THROWS_AS(adjacent_protocol(3), std::invalid_argument);
}

TEST_CASE("reciprocity and power") {
    Setup s(DomainSpec::ellipse(1.25, 0.8), 2190);
    const TensorField f = varied_field(s.mesh);
    const CemSystem sys(s.mesh, f, s.layout);
    for (auto [a, b, c, d] : {std::array<int, 4>{0, 1, 5, 6}, std::array<int, 4>{2, 3, 11, 12},
                              std::array<int, 4>{7, 8, 15, 0}}) {
        const double ab_cd = [&] {
            const Eigen::VectorXd U = sys.solve_current_drive(pair_pattern(16, c, d)).U;
            return U[a] - U[b];
        }();
        const double cd_ab = [&] {
            const Eigen::VectorXd U = sys.solve_current_drive(pair_pattern(16, a, b)).U;
            return U[c] - U[d];
        }();
        CHECK(std::abs(ab_cd - cd_ab) <= 1e-10 * std::abs(ab_cd));
    }
    std::mt19937_64 rng(2);
    std::normal_distribution<double> normal;
    for (int k = 0; k < 10; ++k) {
        Eigen::VectorXd I(16);
        for (auto& v : I) v = normal(rng);
        I.array() -= I.mean();
        const double p = sys.power(I);
        CHECK(p > 0.0);

        // exact scaling with the contact impedance scaled by 1/c
        const double scale = 3.0;
        TensorField scaled = f;
        for (auto& t : scaled.values) t = t * scale;
        ElectrodeLayout thin = s.layout;
        for (auto& z : thin.contact_impedance) z /= scale;
        CHECK(CemSystem(s.mesh, scaled, thin).power(I) == doctest::Approx(p / scale).epsilon(1e-10));
        if (k == 0) CHECK(CemSystem(s.mesh, scaled, s.layout).power(I) < p);
    }
}

TEST_CASE("simulated measurements") {
    Setup s(DomainSpec::disk(), 2190);
    const MeasurementProtocol protocol = adjacent_protocol(16);
    const TensorField unit = TensorField::constant(s.mesh.num_triangles(), Tensor2::isotropic(1.0));

    SUBCASE("noise-free determinism") {
        const DataVector a = simulate_measurements(s.mesh, unit, s.layout, protocol, 0.0, 1);
        const DataVector b = simulate_measurements(s.mesh, unit, s.layout, protocol, 0.0, 2, 4);
        CHECK(a.values.size() == 208);
        CHECK(a.values == b.values);
        CHECK(a.values == a.clean);
    }
    SUBCASE("rotational symmetry of clean data") {
        const DataVector a = simulate_measurements(s.mesh, unit, s.layout, protocol, 0.0, 1);
        // pair (a, a+1) under drive n matches pair (a-n, a-n+1) under drive 0
        const auto rotation_defect = [&](const Eigen::VectorXd& v) {
            double worst = 0.0;
            for (std::size_t n = 1; n < 16; ++n)
                for (std::size_t l = 0; l < 13; ++l) {
                    const int a0 = (protocol.pairs[n][l].first - static_cast<int>(n) + 16) % 16;
                    std::size_t l0 = 0;
                    while (protocol.pairs[0][l0].first != a0) ++l0;
                    worst = std::max(worst, std::abs(v[static_cast<Eigen::Index>(13 * n + l)] -
                                                     v[static_cast<Eigen::Index>(l0)]));
                }
            return worst / v.cwiseAbs().maxCoeff();
        };
        const double worst = rotation_defect(a.clean);
        // discretization level: the same check on a finer mesh must do better
        Setup fine(DomainSpec::disk(), 8800);
        const DataVector b = simulate_measurements(
            fine.mesh, TensorField::constant(fine.mesh.num_triangles(), Tensor2::isotropic(1.0)), fine.layout,
            protocol, 0.0, 1);
        const double worst_fine = rotation_defect(b.clean);
        CHECK(worst < 1e-2);
        CHECK(worst_fine < worst);
    }
    SUBCASE("noise level") {
        Setup small(DomainSpec::disk(), 300);
        const TensorField f = TensorField::constant(small.mesh.num_triangles(), Tensor2::isotropic(1.0));
        const int replicates = 10000;
        double sum = 0.0, sum2 = 0.0, expected = 0.0;
        for (int r = 0; r < replicates; ++r) {
            const DataVector d = simulate_measurements(small.mesh, f, small.layout, protocol, 0.01,
                                                       static_cast<std::uint64_t>(1000 + r));
            const double e = d.values[17] - d.clean[17];
            sum += e;
            sum2 += e * e;
            expected = 0.01 * d.clean.cwiseAbs().maxCoeff();
            if (r == 0) CHECK(d.noise_std == doctest::Approx(expected).epsilon(1e-14));
        }
        const double mean = sum / replicates;
        const double sd = std::sqrt(sum2 / replicates - mean * mean);
        CHECK(std::abs(sd - expected) <= 0.05 * expected);
    }
    SUBCASE("csv round trip") {
        const DataVector d = simulate_measurements(s.mesh, unit, s.layout, protocol, 0.01, 77);
        const auto path = std::filesystem::temp_directory_path() / "uaeit_test_data.csv";
        write_data_csv(path, d, protocol, s.layout);
        const DataVector back = read_data_csv(path);
        CHECK(back.values == d.values);
        CHECK(back.seed == 77);
        CHECK(back.noise_fraction == 0.01);
        std::filesystem::remove(path);
    }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "uaeit/harness.hpp"

using namespace uaeit;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigDir = UAEIT_CONFIG_DIR;

// Small ellipse-to-disk experiment that reconstructs in a few seconds.
ExperimentConfig small_config() {
    ExperimentConfig c;
    c.name = "small";
    c.true_domain = DomainSpec::ellipse(1.25, 0.8);
    c.model_domain = DomainSpec::disk();
    c.phantom.inclusions = {{Vec2(0.45, 0.25), 0.3, 1.0}, {Vec2(-0.5, -0.15), 0.3, -0.5}};
    c.simulation_elements = 900;
    c.seed = 42;
    ModeSettings iso;
    iso.mesh_elements = 600;
    iso.pixels = 40;
    iso.weights = RegWeights{1e-8, 1e-4};
    c.modes[ReconMode::isotropic_correct] = iso;
    iso.schedule = BarrierSchedule::geometric(1e-5, 1e-8, 3);
    c.modes[ReconMode::isotropic_mismodeled] = iso;
    ModeSettings an = iso;
    an.weights = RegWeights{1e-8, 1e-4, 1e-8, 5e-6};
    an.schedule = BarrierSchedule::geometric(1e-5, 1e-12, 8);
    c.modes[ReconMode::anisotropic] = an;
    c.mode = ReconMode::isotropic_correct;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("uaeit_test_harness_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("shipped configs load and round-trip") {
    for (const char* name : {"case1_ellipse.json", "case2_truncated_ellipse.json", "case3_fourier.json"}) {
        const ExperimentConfig c = ExperimentConfig::load(kConfigDir / name);
        CHECK_NOTHROW(c.validate());
        CHECK(c.electrodes == 16);
        CHECK(c.noise_fraction == 0.01);
        CHECK(c.contact_impedance == 1.0);
        CHECK(c.modes.size() == 3);
        const ExperimentConfig back = ExperimentConfig::from_json(c.to_json());
        CHECK(back.hash() == c.hash());
        CHECK(c.hash().size() == 16);
        const auto& an = c.settings(ReconMode::anisotropic);
        CHECK(an.weights.alpha0 == 1e-8);
        CHECK(an.weights.beta2 == 0.0);
        CHECK(an.schedule.xi.front() == 1e-5);
        CHECK(an.schedule.xi.back() == 1e-12);
        CHECK_FALSE(c.settings(ReconMode::isotropic_correct).schedule.active());
    }
}

TEST_CASE("config hash tracks every field") {
    const ExperimentConfig base = small_config();
    const std::string h = base.hash();
    CHECK(small_config().hash() == h);
    std::vector<ExperimentConfig> variants(10, base);
    variants[0].seed += 1;
    variants[1].noise_fraction = 0.02;
    variants[2].phantom.inclusions[0].center.x() += 1e-9;
    variants[3].true_domain.a = 1.3;
    variants[4].modes[ReconMode::anisotropic].weights.beta1 = 6e-6;
    variants[5].modes[ReconMode::isotropic_correct].pixels = 41;
    variants[6].gauss_newton.max_total_iterations = 61;
    variants[7].locality_perturbation.radius = 0.2;
    variants[8].name = "other";
    variants[9].contact_impedance = 2.0;
    for (const auto& v : variants) CHECK(v.hash() != h);
}

TEST_CASE("config errors") {
    nlohmann::json j = small_config().to_json();
    j["electrodes"]["coverage"] = 1.5;
    CHECK_THROWS(ExperimentConfig::from_json(j));
    j = small_config().to_json();
    j["mode"] = "sideways";
    CHECK_THROWS(ExperimentConfig::from_json(j));
    j = small_config().to_json();
    j["modes"].erase("isotropic_correct");
    CHECK_THROWS(ExperimentConfig::from_json(j));
    CHECK_THROWS(ExperimentConfig::load(kConfigDir / "missing.json"));
}

TEST_CASE("seed changes noise only") {
    const ExperimentConfig c = small_config();
    const Scenario sc = build_scenario(c, ReconMode::isotropic_correct);
    const DataVector a = simulate(c, sc, 1);
    const DataVector b = simulate(c, sc, 2);
    const DataVector a2 = simulate(c, sc, 1, 4);
    CHECK(a.clean == b.clean);
    CHECK(a.values != b.values);
    CHECK(a.values == a2.values);
}

TEST_CASE("scenario geometry") {
    const ExperimentConfig c = small_config();
    const Scenario correct = build_scenario(c, ReconMode::isotropic_correct);
    CHECK_FALSE(correct.mismodeled);
    CHECK(correct.true_mesh.num_nodes() != correct.model_mesh.num_nodes());
    const Scenario mis = build_scenario(c, ReconMode::anisotropic);
    CHECK(mis.mismodeled);
    // model electrodes keep the true arc length
    for (std::size_t j = 0; j < 16; ++j)
        CHECK(mis.model_layout.lengths[j] == doctest::Approx(mis.true_layout.lengths[j]).epsilon(1e-12));
    CHECK(mis.model_mesh.total_area() == doctest::Approx(std::numbers::pi).epsilon(0.01));
    const Scenario crime = build_scenario(c, ReconMode::anisotropic, true);
    CHECK(crime.true_mesh.num_nodes() == crime.model_mesh.num_nodes());
}

TEST_CASE("field export") {
    const BoundaryCurve curve = build_boundary(DomainSpec::disk(), 1024);
    const Mesh mesh = triangulate(curve, place_electrodes(curve, 16, 0.5), 800);
    const fs::path dir = scratch("export");

    SUBCASE("constant field is uniform mid-gray") {
        export_field_image(std::vector<double>(mesh.num_triangles(), 3.0), mesh, dir / "c.csv", dir / "c.pgm");
        const std::string pgm = slurp(dir / "c.pgm");
        const std::string header = "P5\n256 256\n255\n";
        REQUIRE(pgm.size() == header.size() + 256 * 256);
        CHECK(pgm.substr(0, header.size()) == header);
        std::size_t inside = 0;
        for (std::size_t k = header.size(); k < pgm.size(); ++k) {
            const auto v = static_cast<unsigned char>(pgm[k]);
            CHECK((v == 128 || v == 0));
            inside += v == 128;
        }
        // disk fills pi/4 of its bounding square
        CHECK(static_cast<double>(inside) / (256.0 * 256.0) == doctest::Approx(std::numbers::pi / 4.0).epsilon(0.02));
    }
    SUBCASE("CSV round trip is bitwise") {
        std::vector<double> values(mesh.num_triangles());
        for (std::size_t t = 0; t < values.size(); ++t) values[t] = std::sin(0.37 * t) / 3.0 + 1e-17 * t;
        export_field_image(values, mesh, dir / "v.csv", dir / "v.pgm");
        CHECK(read_field_csv(dir / "v.csv") == values);
        const std::string pgm = slurp(dir / "v.pgm");
        unsigned char lo = 255, hi = 0;
        for (std::size_t k = 15; k < pgm.size(); ++k) hi = std::max(hi, static_cast<unsigned char>(pgm[k]));
        for (std::size_t k = 15; k < pgm.size(); ++k) lo = std::min(lo, static_cast<unsigned char>(pgm[k]));
        CHECK(hi == 255);
        CHECK(lo == 0);
    }
    SUBCASE("size mismatch") {
        CHECK_THROWS(export_field_image(std::vector<double>(3, 1.0), mesh, dir / "x.csv", dir / "x.pgm"));
    }
    fs::remove_all(dir);
}

TEST_CASE("image metrics") {
    const BoundaryCurve curve = build_boundary(DomainSpec::disk(), 1024);
    const Mesh mesh = triangulate(curve, place_electrodes(curve, 16, 0.5), 4000);
    const Inclusion bright{Vec2(0.4, 0.3), 0.25, 1.0}, dark{Vec2(-0.4, -0.2), 0.25, -0.5};
    std::vector<double> two(mesh.num_triangles()), flat(mesh.num_triangles(), 1.0), rim(mesh.num_triangles());
    for (std::size_t t = 0; t < two.size(); ++t) {
        const Vec2 c = mesh.centroid(t);
        two[t] = 1.0 + bright.value(c) + dark.value(c);
        rim[t] = c.norm() > 0.9 ? 2.0 : 1.0;
    }

    SUBCASE("blob count and centroids") {
        const auto blobs = find_blobs(rasterize(two, mesh, 128));
        REQUIRE(blobs.size() == 2);
        for (const auto& b : blobs) {
            const Vec2 target = b.sign > 0 ? bright.center : dark.center;
            CHECK((b.centroid - target).norm() < 0.03);
        }
        CHECK(find_blobs(rasterize(flat, mesh, 64)).empty());
    }
    SUBCASE("boundary artifact energy") {
        CHECK(boundary_artifact_energy(flat, mesh) == 0.0);
        // oracle with the analytic distance 1 - |x| to the unit circle
        double area = 0.0, mean = 0.0;
        for (std::size_t t = 0; t < rim.size(); ++t) {
            area += mesh.signed_area(t);
            mean += mesh.signed_area(t) * rim[t];
        }
        mean /= area;
        double near = 0.0, total = 0.0;
        for (std::size_t t = 0; t < rim.size(); ++t) {
            const double e = mesh.signed_area(t) * (rim[t] - mean) * (rim[t] - mean);
            total += e;
            if (1.0 - mesh.centroid(t).norm() < 0.15) near += e;
        }
        CHECK(boundary_artifact_energy(rim, mesh) == doctest::Approx(near / total).epsilon(1e-2));
        CHECK(boundary_artifact_energy(two, mesh) < 0.05);
    }
    SUBCASE("locality fraction") {
        std::vector<double> delta(mesh.num_triangles());
        for (std::size_t t = 0; t < delta.size(); ++t) delta[t] = bright.value(mesh.centroid(t));
        Vec2 peak;
        CHECK(locality_fraction(delta, mesh, 0.3, &peak) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK((peak - bright.center).norm() < 0.05);
        // spread-out difference is not local
        CHECK(locality_fraction(flat, mesh, 0.3) < 0.15);
    }
    SUBCASE("expected image") {
        const BoundaryCurve ellipse = build_boundary(DomainSpec::ellipse(1.25, 0.8), 2048);
        // disk to disk is the identity
        CHECK((expected_image(Vec2(0.3, -0.2), DomainSpec::disk(), curve, curve) - Vec2(0.3, -0.2)).norm() < 1e-3);
        // boundary points on the symmetry axes map to the axes
        CHECK((expected_image(Vec2(1.25, 0.0), DomainSpec::ellipse(1.25, 0.8), ellipse, curve) - Vec2(1, 0)).norm() <
              1e-3);
        CHECK((expected_image(Vec2(0.0, 0.4), DomainSpec::ellipse(1.25, 0.8), ellipse, curve) - Vec2(0, 0.5)).norm() <
              1e-3);
    }
}

TEST_CASE("experiment runs") {
    const ExperimentConfig c = small_config();
    const fs::path dir = scratch("runs");

    RunOptions serial;
    const ExperimentResult a = run_experiment(c, serial, dir / "a");
    REQUIRE(a.report.success);
    RunOptions parallel;
    parallel.threads = 4;
    const ExperimentResult b = run_experiment(c, parallel, dir / "b");
    REQUIRE(b.report.success);

    CHECK(a.report.metrics == b.report.metrics);
    CHECK(a.report.run_id == b.report.run_id);
    for (const char* f : {"data.csv", "recon.csv", "image.csv"}) CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    for (const auto& f : a.report.manifest) CHECK(fs::exists(dir / "a" / f));
    CHECK(a.report.metrics["data_misfit"].get<double>() < a.report.metrics["initial_misfit"].get<double>());

    // rerunning on the exported data reproduces the reconstruction
    RunOptions reuse;
    reuse.data_path = dir / "a" / "data.csv";
    const ExperimentResult c2 = run_experiment(c, reuse, dir / "c");
    CHECK(slurp(dir / "a" / "recon.csv") == slurp(dir / "c" / "recon.csv"));

    // correct geometry fits the same data better than the mismodeled disk
    RunOptions mis;
    mis.mode = ReconMode::isotropic_mismodeled;
    const ExperimentResult m = run_experiment(c, mis);
    CHECK(m.report.metrics["data_misfit"].get<double>() > a.report.metrics["data_misfit"].get<double>());

    // stage-tagged failures
    RunOptions bad_data;
    bad_data.data_path = dir / "nowhere.csv";
    const ExperimentResult f = run_experiment(c, bad_data);
    CHECK_FALSE(f.report.success);
    CHECK(f.report.stage == "simulate");
    ExperimentConfig broken = c;
    broken.coverage = 2.0;
    const ExperimentResult g = run_experiment(broken, serial);
    CHECK_FALSE(g.report.success);
    CHECK(g.report.stage == "config");

    const RunReport back = RunReport::from_json(a.report.to_json());
    CHECK(back.to_json() == a.report.to_json());
    fs::remove_all(dir);
}

TEST_CASE("locality with a zero perturbation") {
    ExperimentConfig c = small_config();
    c.mode = ReconMode::anisotropic;
    c.locality_perturbation.amplitude = 0.0;
    LocalityResult r;
    const RunReport report = verify_locality(c, 2, &r);
    // identical data and seed, so the difference image is exactly zero
    CHECK(report.metrics["anisotropic"]["fraction"].get<double>() == 0.0);
    CHECK(report.metrics["isotropic_mismodeled"]["fraction"].get<double>() == 0.0);
}

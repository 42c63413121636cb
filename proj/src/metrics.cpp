#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <queue>
#include <sstream>
#include <stdexcept>

#include "uaeit/harness.hpp"

namespace uaeit {

std::vector<double> pixel_to_elements(const Eigen::VectorXd& pixels, const PixelLattice& lattice) {
    if (static_cast<std::size_t>(pixels.size()) != lattice.size())
        throw std::invalid_argument("pixel vector does not match the lattice");
    std::vector<double> out;
    out.reserve(lattice.element_to_pixel.size());
    for (int p : lattice.element_to_pixel) out.push_back(pixels[p]);
    return out;
}

bool Raster::inside(int ix, int iy) const {
    return ix >= 0 && iy >= 0 && ix < width && iy < height &&
           !std::isnan(values[static_cast<std::size_t>(iy) * static_cast<std::size_t>(width) + static_cast<std::size_t>(ix)]);
}

Vec2 Raster::center(int ix, int iy) const { return origin + cell * Vec2(ix + 0.5, iy + 0.5); }

Raster rasterize(const std::vector<double>& values, const Mesh& mesh, int resolution) {
    if (values.size() != mesh.num_triangles()) throw std::invalid_argument("field does not match the mesh");
    if (resolution < 2) throw std::invalid_argument("raster resolution must be at least 2");
    Eigen::AlignedBox2d box;
    for (const auto& p : mesh.nodes) box.extend(p);
    Raster r;
    r.width = r.height = resolution;
    r.cell = box.sizes().maxCoeff() / resolution;
    r.origin = box.center() - 0.5 * r.cell * Vec2(resolution, resolution);
    r.values.assign(static_cast<std::size_t>(resolution) * static_cast<std::size_t>(resolution),
                    std::numeric_limits<double>::quiet_NaN());
    const TriangleLocator locator(mesh);
    for (int iy = 0; iy < resolution; ++iy)
        for (int ix = 0; ix < resolution; ++ix) {
            const int t = locator.find(r.center(ix, iy));
            if (t >= 0) r.values[static_cast<std::size_t>(iy * resolution + ix)] = values[static_cast<std::size_t>(t)];
        }
    return r;
}

void export_field_image(const std::vector<double>& values, const Mesh& mesh, const std::filesystem::path& csv_path,
                        const std::filesystem::path& pgm_path, int raster) {
    if (values.size() != mesh.num_triangles()) throw std::invalid_argument("field does not match the mesh");
    {
        std::ofstream csv(csv_path);
        if (!csv) throw std::runtime_error("cannot open " + csv_path.string());
        csv.precision(17);
        csv << "element,value\n";
        for (std::size_t e = 0; e < values.size(); ++e) csv << e << ',' << values[e] << '\n';
    }
    const Raster r = rasterize(values, mesh, raster);
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double range = *hi - *lo;
    std::ofstream pgm(pgm_path, std::ios::binary);
    if (!pgm) throw std::runtime_error("cannot open " + pgm_path.string());
    pgm << "P5\n" << r.width << ' ' << r.height << "\n255\n";
    // Image rows run top to bottom, the raster bottom to top.
    for (int iy = r.height - 1; iy >= 0; --iy)
        for (int ix = 0; ix < r.width; ++ix) {
            unsigned char level = 0;
            if (r.inside(ix, iy)) {
                const double v = r.values[static_cast<std::size_t>(iy * r.width + ix)];
                level = range > 0.0 ? static_cast<unsigned char>(std::lround(255.0 * (v - *lo) / range)) : 128;
            }
            pgm.put(static_cast<char>(level));
        }
}

std::vector<double> read_field_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "element,value") throw std::runtime_error("unexpected field CSV header in " + path.string());
    std::vector<double> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw std::runtime_error("malformed field CSV line: " + line);
        if (std::stoul(line.substr(0, comma)) != out.size()) throw std::runtime_error("field CSV rows out of order");
        out.push_back(std::strtod(line.c_str() + comma + 1, nullptr));
    }
    return out;
}

std::vector<Blob> find_blobs(const Raster& raster) {
    std::vector<double> inside;
    for (double v : raster.values)
        if (!std::isnan(v)) inside.push_back(v);
    if (inside.empty()) return {};
    std::nth_element(inside.begin(), inside.begin() + static_cast<std::ptrdiff_t>(inside.size() / 2), inside.end());
    const double median = inside[inside.size() / 2];

    double max_dev = 0.0, min_dev = 0.0;
    for (double v : raster.values)
        if (!std::isnan(v)) {
            max_dev = std::max(max_dev, v - median);
            min_dev = std::min(min_dev, v - median);
        }
    const double scale = std::max(max_dev, -min_dev);
    if (!(scale > 0.0)) return {};

    const int w = raster.width, h = raster.height;
    std::vector<int> label(raster.values.size(), -1);
    std::vector<Blob> blobs;
    for (int sign : {1, -1}) {
        const double extreme = sign > 0 ? max_dev : -min_dev;
        if (!(extreme > 0.0)) continue;
        const auto selected = [&](int ix, int iy) {
            if (!raster.inside(ix, iy)) return false;
            const double d = sign * (raster.values[static_cast<std::size_t>(iy * w + ix)] - median);
            return d > 0.5 * extreme;
        };
        for (int iy = 0; iy < h; ++iy)
            for (int ix = 0; ix < w; ++ix) {
                if (label[static_cast<std::size_t>(iy * w + ix)] >= 0 || !selected(ix, iy)) continue;
                Blob blob;
                blob.sign = sign;
                double weight = 0.0;
                Vec2 moment = Vec2::Zero();
                std::queue<std::pair<int, int>> queue;
                queue.emplace(ix, iy);
                label[static_cast<std::size_t>(iy * w + ix)] = static_cast<int>(blobs.size());
                while (!queue.empty()) {
                    const auto [cx, cy] = queue.front();
                    queue.pop();
                    const double d = sign * (raster.values[static_cast<std::size_t>(cy * w + cx)] - median);
                    blob.peak = std::max(blob.peak, d);
                    ++blob.pixels;
                    weight += d;
                    moment += d * raster.center(cx, cy);
                    const int nbrs[4][2] = {{cx + 1, cy}, {cx - 1, cy}, {cx, cy + 1}, {cx, cy - 1}};
                    for (const auto& n : nbrs) {
                        if (!selected(n[0], n[1])) continue;
                        int& l = label[static_cast<std::size_t>(n[1] * w + n[0])];
                        if (l >= 0) continue;
                        l = static_cast<int>(blobs.size());
                        queue.emplace(n[0], n[1]);
                    }
                }
                blob.centroid = moment / weight;
                blobs.push_back(blob);
            }
    }
    std::vector<Blob> kept;
    for (const auto& b : blobs)
        if (b.peak >= 0.25 * scale) kept.push_back(b);
    return kept;
}

double boundary_artifact_energy(const std::vector<double>& values, const Mesh& mesh, double band) {
    if (values.size() != mesh.num_triangles()) throw std::invalid_argument("field does not match the mesh");
    double area = 0.0, mean = 0.0;
    for (std::size_t t = 0; t < values.size(); ++t) {
        area += mesh.signed_area(t);
        mean += mesh.signed_area(t) * values[t];
    }
    mean /= area;
    double total = 0.0, near = 0.0;
    for (std::size_t t = 0; t < values.size(); ++t) {
        const double e = mesh.signed_area(t) * (values[t] - mean) * (values[t] - mean);
        total += e;
        if (mesh.distance_to_boundary(mesh.centroid(t)) < band) near += e;
    }
    return total > 0.0 ? near / total : 0.0;
}

double locality_fraction(const std::vector<double>& delta, const Mesh& mesh, double radius, Vec2* peak) {
    if (delta.size() != mesh.num_triangles()) throw std::invalid_argument("field does not match the mesh");
    std::size_t arg = 0;
    for (std::size_t t = 1; t < delta.size(); ++t)
        if (std::abs(delta[t]) > std::abs(delta[arg])) arg = t;
    const Vec2 center = mesh.centroid(arg);
    if (peak) *peak = center;
    double total = 0.0, near = 0.0;
    for (std::size_t t = 0; t < delta.size(); ++t) {
        const double e = mesh.signed_area(t) * delta[t] * delta[t];
        total += e;
        if ((mesh.centroid(t) - center).norm() < radius) near += e;
    }
    return total > 0.0 ? near / total : 0.0;
}

namespace {

// Arclength of the boundary point at polar angle phi (curve starts at angle 0).
double arclength_at_angle(const BoundaryCurve& curve, double phi) {
    const double two_pi = 2.0 * std::numbers::pi;
    phi = std::fmod(phi, two_pi);
    if (phi < 0.0) phi += two_pi;
    double prev_angle = 0.0, prev_s = 0.0;
    for (std::size_t i = 1; i <= curve.size(); ++i) {
        const bool closing = i == curve.size();
        const Vec2& p = closing ? curve.samples[0].point : curve.samples[i].point;
        double angle = std::atan2(p.y(), p.x());
        if (angle < 0.0) angle += two_pi;
        if (closing || angle < prev_angle) angle = two_pi;
        const double s = closing ? curve.total_length : curve.samples[i].s;
        if (phi <= angle) {
            const double f = angle > prev_angle ? (phi - prev_angle) / (angle - prev_angle) : 0.0;
            return prev_s + f * (s - prev_s);
        }
        prev_angle = angle;
        prev_s = s;
    }
    return curve.total_length;
}

}  // namespace

Vec2 expected_image(const Vec2& x, const DomainSpec& true_domain, const BoundaryCurve& true_curve,
                    const BoundaryCurve& model_curve) {
    const double r = x.norm();
    if (r == 0.0) return Vec2::Zero();
    const double phi = std::atan2(x.y(), x.x());
    const double rho = r / true_domain.radius(phi);
    const double fraction = arclength_at_angle(true_curve, phi) / true_curve.total_length;
    return rho * model_curve.point_at(fraction * model_curve.total_length);
}

}  // namespace uaeit

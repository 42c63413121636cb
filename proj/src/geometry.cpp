#include "uaeit/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace uaeit {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap(double s, double period) {
    double r = std::fmod(s, period);
    if (r < 0.0) r += period;
    if (r >= period) r -= period;
    return r;
}

double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

bool segments_intersect(const Vec2& p1, const Vec2& p2, const Vec2& q1, const Vec2& q2) {
    const double d1 = cross(p2 - p1, q1 - p1);
    const double d2 = cross(p2 - p1, q2 - p1);
    const double d3 = cross(q2 - q1, p1 - q1);
    const double d4 = cross(q2 - q1, p2 - q1);
    return ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) &&
           ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0));
}

double ellipse_radius(double a, double b, double phi) {
    const double c = b * std::cos(phi);
    const double s = a * std::sin(phi);
    return a * b / std::sqrt(c * c + s * s);
}

// Arclength of the truncated-ellipse boundary where the smooth-min radius
// deviates from the sharp minimum, split evenly between the two corners.
double rounded_length_per_corner(const DomainSpec& spec, double exponent) {
    constexpr int n = 8192;
    constexpr double tol = 1e-4;
    double rounded = 0.0;
    Vec2 prev = spec.radius_with_exponent(0.0, exponent) * Vec2(1.0, 0.0);
    for (int k = 1; k <= n; ++k) {
        const double phi = kTwoPi * k / n;
        const double mid = kTwoPi * (k - 0.5) / n;
        const Vec2 cur = spec.radius_with_exponent(phi, exponent) * Vec2(std::cos(phi), std::sin(phi));
        const double sharp = spec.radius_with_exponent(mid, std::numeric_limits<double>::infinity());
        const double blended = spec.radius_with_exponent(mid, exponent);
        if (1.0 - blended / sharp > tol) rounded += (cur - prev).norm();
        prev = cur;
    }
    return 0.5 * rounded;
}

}  // namespace

std::string to_string(DomainKind kind) {
    switch (kind) {
        case DomainKind::disk: return "disk";
        case DomainKind::ellipse: return "ellipse";
        case DomainKind::truncated_ellipse: return "truncated_ellipse";
        case DomainKind::fourier: return "fourier";
    }
    return "unknown";
}

DomainKind domain_kind_from_string(const std::string& name) {
    if (name == "disk") return DomainKind::disk;
    if (name == "ellipse") return DomainKind::ellipse;
    if (name == "truncated_ellipse") return DomainKind::truncated_ellipse;
    if (name == "fourier") return DomainKind::fourier;
    throw std::invalid_argument("unknown domain kind '" + name + "'");
}

DomainSpec DomainSpec::disk(double radius) {
    DomainSpec spec;
    spec.kind = DomainKind::disk;
    spec.a = spec.b = radius;
    return spec;
}

DomainSpec DomainSpec::ellipse(double a, double b) {
    DomainSpec spec;
    spec.kind = DomainKind::ellipse;
    spec.a = a;
    spec.b = b;
    return spec;
}

DomainSpec DomainSpec::truncated_ellipse(double a, double b, double cut) {
    DomainSpec spec;
    spec.kind = DomainKind::truncated_ellipse;
    spec.a = a;
    spec.b = b;
    spec.cut = cut;
    spec.calibrate_corners();
    return spec;
}

DomainSpec DomainSpec::fourier(std::vector<double> cos_coeffs, std::vector<double> sin_coeffs) {
    DomainSpec spec;
    spec.kind = DomainKind::fourier;
    spec.fourier_cos = std::move(cos_coeffs);
    spec.fourier_sin = std::move(sin_coeffs);
    return spec;
}

DomainSpec DomainSpec::fourier_default() {
    return fourier({0.0, 0.12, 0.05}, {-0.04, 0.0, 0.0});
}

double DomainSpec::radius_with_exponent(double phi, double exponent) const {
    switch (kind) {
        case DomainKind::disk: return a;
        case DomainKind::ellipse: return ellipse_radius(a, b, phi);
        case DomainKind::fourier: {
            double r = 1.0;
            for (std::size_t k = 0; k < fourier_cos.size(); ++k)
                r += fourier_cos[k] * std::cos(static_cast<double>(k + 1) * phi);
            for (std::size_t k = 0; k < fourier_sin.size(); ++k)
                r += fourier_sin[k] * std::sin(static_cast<double>(k + 1) * phi);
            return r;
        }
        case DomainKind::truncated_ellipse: {
            const double re = ellipse_radius(a, b, phi);
            const double c = std::cos(phi);
            if (c >= 0.0) return re;
            const double rc = cut * a / c;
            if (!std::isfinite(exponent)) return std::min(re, rc);
            // (re^-p + rc^-p)^(-1/p), evaluated relative to the smaller radius
            const double lo = std::min(re, rc);
            const double hi = std::max(re, rc);
            return lo * std::pow(1.0 + std::pow(lo / hi, exponent), -1.0 / exponent);
        }
    }
    return 0.0;
}

double DomainSpec::radius(double phi) const {
    if (kind == DomainKind::truncated_ellipse && corner_exponent <= 0.0) {
        throw std::logic_error("truncated ellipse corners not calibrated");
    }
    return radius_with_exponent(phi, corner_exponent);
}

void DomainSpec::calibrate_corners() {
    if (kind != DomainKind::truncated_ellipse) return;
    if (!(corner_rounding > 0.0 && corner_rounding < 0.25))
        throw std::invalid_argument("corner_rounding must lie in (0, 0.25)");
    if (!(cut < 0.0 && cut > -1.0))
        throw std::invalid_argument("truncation chord must satisfy -1 < cut < 0");
    // Approximate perimeter of the sharp curve for the target corner length.
    double perimeter = 0.0;
    {
        constexpr int n = 8192;
        const double inf = std::numeric_limits<double>::infinity();
        Vec2 prev = radius_with_exponent(0.0, inf) * Vec2(1.0, 0.0);
        for (int k = 1; k <= n; ++k) {
            const double phi = kTwoPi * k / n;
            const Vec2 cur = radius_with_exponent(phi, inf) * Vec2(std::cos(phi), std::sin(phi));
            perimeter += (cur - prev).norm();
            prev = cur;
        }
    }
    const double target = corner_rounding * perimeter;
    double lo = std::log(2.0), hi = std::log(1e5);
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        // rounded length shrinks as the exponent grows
        if (rounded_length_per_corner(*this, std::exp(mid)) > target)
            lo = mid;
        else
            hi = mid;
    }
    corner_exponent = std::exp(0.5 * (lo + hi));
}

void DomainSpec::validate() const {
    switch (kind) {
        case DomainKind::disk:
            if (!(a > 0.0)) throw std::invalid_argument("disk radius must be positive");
            break;
        case DomainKind::ellipse:
        case DomainKind::truncated_ellipse:
            if (!(a > 0.0 && b > 0.0))
                throw std::invalid_argument("ellipse semi-axes must be positive");
            if (kind == DomainKind::truncated_ellipse && corner_exponent <= 0.0)
                throw std::invalid_argument("truncated ellipse corners not calibrated");
            break;
        case DomainKind::fourier:
            break;
    }
    constexpr int n = 4096;
    for (int k = 0; k < n; ++k) {
        const double phi = kTwoPi * k / n;
        const double r = radius(phi);
        if (!(r > 0.0) || !std::isfinite(r)) {
            std::ostringstream msg;
            msg << "nonpositive boundary radius r(" << phi << ") = " << r;
            throw std::invalid_argument(msg.str());
        }
    }
}

Vec2 BoundaryCurve::point_at(double s) const {
    const double t = wrap(s, total_length);
    const std::size_t n = samples.size();
    const double ds = total_length / static_cast<double>(n);
    std::size_t i = std::min(static_cast<std::size_t>(t / ds), n - 1);
    // samples are equally spaced in arclength, but guard against rounding
    while (i > 0 && samples[i].s > t) --i;
    while (i + 1 < n && samples[i + 1].s <= t) ++i;
    const BoundarySample& p = samples[i];
    const BoundarySample& q = samples[(i + 1) % n];
    const double q_s = (i + 1 == n) ? total_length : q.s;
    const double w = (t - p.s) / (q_s - p.s);
    return (1.0 - w) * p.point + w * q.point;
}

Vec2 BoundaryCurve::normal_at(double s) const {
    const double t = wrap(s, total_length);
    const std::size_t n = samples.size();
    const double ds = total_length / static_cast<double>(n);
    const std::size_t i = std::min(static_cast<std::size_t>(t / ds), n - 1);
    const Vec2 d = samples[(i + 1) % n].point - samples[i].point;
    return Vec2(d.y(), -d.x()).normalized();
}

bool is_simple_closed(const std::vector<Vec2>& polygon) {
    const std::size_t n = polygon.size();
    if (n < 3) return false;
    std::vector<Eigen::AlignedBox2d> boxes(n);
    for (std::size_t i = 0; i < n; ++i) {
        boxes[i].extend(polygon[i]);
        boxes[i].extend(polygon[(i + 1) % n]);
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 2; j < n; ++j) {
            if (i == 0 && j == n - 1) continue;  // adjacent through closure
            if (!boxes[i].intersects(boxes[j])) continue;
            if (segments_intersect(polygon[i], polygon[(i + 1) % n], polygon[j], polygon[(j + 1) % n]))
                return false;
        }
    }
    return true;
}

BoundaryCurve build_boundary(const DomainSpec& input, std::size_t n_samples) {
    if (n_samples < 64) throw std::invalid_argument("build_boundary needs at least 64 samples");
    DomainSpec spec = input;
    if (spec.kind == DomainKind::truncated_ellipse && spec.corner_exponent <= 0.0)
        spec.calibrate_corners();
    spec.validate();

    const std::size_t n_dense = std::max<std::size_t>(16 * n_samples, 16384);
    std::vector<double> cumulative(n_dense + 1, 0.0);
    Vec2 prev = spec.point(0.0);
    for (std::size_t k = 1; k <= n_dense; ++k) {
        const Vec2 cur = spec.point(kTwoPi * static_cast<double>(k) / static_cast<double>(n_dense));
        cumulative[k] = cumulative[k - 1] + (cur - prev).norm();
        prev = cur;
    }

    BoundaryCurve curve;
    curve.total_length = cumulative.back();
    curve.samples.resize(n_samples);
    const double dphi = kTwoPi / static_cast<double>(n_dense);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double s = curve.total_length * static_cast<double>(i) / static_cast<double>(n_samples);
        while (k + 1 < n_dense && cumulative[k + 1] <= s) ++k;
        const double w = (s - cumulative[k]) / (cumulative[k + 1] - cumulative[k]);
        const double phi = (static_cast<double>(k) + w) * dphi;
        curve.samples[i] = {spec.point(phi), s};
    }

    std::vector<Vec2> polygon;
    polygon.reserve(n_samples);
    for (const auto& sample : curve.samples) polygon.push_back(sample.point);
    if (!is_simple_closed(polygon))
        throw std::invalid_argument("boundary curve of " + to_string(spec.kind) + " self-intersects");

    const double ds = curve.total_length / static_cast<double>(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double chord = (polygon[(i + 1) % n_samples] - polygon[i]).norm();
        if (std::abs(chord - ds) > 0.01 * ds) {
            std::ostringstream msg;
            msg << "boundary resolution too coarse near sample " << i << " (chord " << chord
                << ", arclength " << ds << ")";
            throw std::invalid_argument(msg.str());
        }
    }
    return curve;
}

double ElectrodeLayout::coverage() const {
    double covered = 0.0;
    for (double l : lengths) covered += l;
    return covered / total_length;
}

double ElectrodeLayout::midpoint(std::size_t j) const {
    return wrap(starts[j] + 0.5 * lengths[j], total_length);
}

bool ElectrodeLayout::contains(std::size_t j, double s) const {
    return wrap(s - starts[j], total_length) < lengths[j];
}

int ElectrodeLayout::electrode_at(double s) const {
    for (std::size_t j = 0; j < count; ++j)
        if (contains(j, s)) return static_cast<int>(j);
    return -1;
}

ElectrodeLayout place_electrodes(const BoundaryCurve& curve, std::size_t count, double coverage,
                                 double offset, double contact_impedance) {
    if (count < 2) throw std::invalid_argument("place_electrodes needs at least 2 electrodes");
    if (!(coverage > 0.0 && coverage < 1.0))
        throw std::invalid_argument("electrode coverage must lie in (0, 1)");
    if (!(contact_impedance > 0.0))
        throw std::invalid_argument("contact impedance must be positive");

    const double S = curve.total_length;
    const double pitch = S / static_cast<double>(count);
    const double length = coverage * pitch;

    ElectrodeLayout layout;
    layout.count = count;
    layout.total_length = S;
    layout.lengths.assign(count, length);
    layout.contact_impedance.assign(count, contact_impedance);
    layout.starts.resize(count);
    for (std::size_t j = 0; j < count; ++j)
        layout.starts[j] = wrap(offset + static_cast<double>(j) * pitch - 0.5 * length, S);

    for (std::size_t j = 0; j < count; ++j) {
        const std::size_t next = (j + 1) % count;
        const double gap = wrap(layout.starts[next] - layout.starts[j], S) - layout.lengths[j];
        if (!(gap > 0.0)) throw std::invalid_argument("electrode arcs overlap");
    }
    return layout;
}

double Mesh::signed_area(std::size_t t) const {
    const auto& tri = triangles[t];
    return 0.5 * cross(nodes[tri[1]] - nodes[tri[0]], nodes[tri[2]] - nodes[tri[0]]);
}

Vec2 Mesh::centroid(std::size_t t) const {
    const auto& tri = triangles[t];
    return (nodes[tri[0]] + nodes[tri[1]] + nodes[tri[2]]) / 3.0;
}

double Mesh::total_area() const {
    double area = 0.0;
    for (std::size_t t = 0; t < triangles.size(); ++t) area += signed_area(t);
    return area;
}

std::size_t Mesh::num_edges() const {
    std::vector<std::pair<int, int>> edges;
    edges.reserve(3 * triangles.size());
    for (const auto& tri : triangles)
        for (int k = 0; k < 3; ++k) {
            const int a = tri[k], b = tri[(k + 1) % 3];
            edges.emplace_back(std::min(a, b), std::max(a, b));
        }
    std::sort(edges.begin(), edges.end());
    return static_cast<std::size_t>(std::unique(edges.begin(), edges.end()) - edges.begin());
}

double Mesh::mesh_size() const {
    return std::sqrt(total_area() / static_cast<double>(triangles.size()));
}

double Mesh::distance_to_boundary(const Vec2& p) const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& edge : boundary_edges) {
        const Vec2& a = nodes[edge.nodes[0]];
        const Vec2& b = nodes[edge.nodes[1]];
        const Vec2 d = b - a;
        const double w = std::clamp((p - a).dot(d) / d.squaredNorm(), 0.0, 1.0);
        best = std::min(best, (p - (a + w * d)).norm());
    }
    return best;
}

std::vector<double> Mesh::electrode_lengths(std::size_t count) const {
    std::vector<double> lengths(count, 0.0);
    for (const auto& edge : boundary_edges) {
        if (edge.electrode < 0) continue;
        if (static_cast<std::size_t>(edge.electrode) >= count)
            throw std::out_of_range("boundary edge tagged with unknown electrode");
        lengths[edge.electrode] += (nodes[edge.nodes[1]] - nodes[edge.nodes[0]]).norm();
    }
    return lengths;
}

void Mesh::validate() const {
    for (std::size_t t = 0; t < triangles.size(); ++t) {
        for (int k : triangles[t])
            if (k < 0 || static_cast<std::size_t>(k) >= nodes.size())
                throw std::runtime_error("triangle " + std::to_string(t) + " references a missing node");
        if (!(signed_area(t) > 0.0))
            throw std::runtime_error("triangle " + std::to_string(t) + " has nonpositive area");
    }
    // directed half-edges: interior edges appear once in each direction
    std::vector<std::pair<int, int>> half;
    half.reserve(3 * triangles.size());
    for (const auto& tri : triangles)
        for (int k = 0; k < 3; ++k) half.emplace_back(tri[k], tri[(k + 1) % 3]);
    std::sort(half.begin(), half.end());
    if (std::adjacent_find(half.begin(), half.end()) != half.end())
        throw std::runtime_error("mesh is not conforming: duplicated directed edge");

    std::vector<std::pair<int, int>> open;
    for (const auto& e : half)
        if (!std::binary_search(half.begin(), half.end(), std::make_pair(e.second, e.first)))
            open.push_back(e);
    if (open.size() != boundary_edges.size())
        throw std::runtime_error("boundary edge list does not match the open edges of the mesh");
    for (std::size_t i = 0; i < boundary_edges.size(); ++i) {
        const auto& e = boundary_edges[i];
        if (!std::binary_search(open.begin(), open.end(), std::make_pair(e.nodes[0], e.nodes[1])))
            throw std::runtime_error("boundary edge " + std::to_string(i) + " is not on the mesh boundary");
        const auto& next = boundary_edges[(i + 1) % boundary_edges.size()];
        if (e.nodes[1] != next.nodes[0])
            throw std::runtime_error("boundary edges do not form a single closed loop");
    }
}

Vec2 PixelLattice::pixel_center(std::size_t active) const {
    const auto [ix, iy] = grid_coords(active);
    return origin + pixel_size * Vec2(ix + 0.5, iy + 0.5);
}

std::array<int, 2> PixelLattice::grid_coords(std::size_t active) const {
    const int g = active_pixels[active];
    return {g % nx, g / nx};
}

std::array<int, 2> PixelLattice::locate(const Vec2& p) const {
    const Vec2 rel = (p - origin) / pixel_size;
    return {static_cast<int>(std::floor(rel.x())), static_cast<int>(std::floor(rel.y()))};
}

PixelLattice build_pixel_lattice(const Mesh& mesh, std::size_t target_m) {
    if (target_m == 0) throw std::invalid_argument("pixel lattice needs at least one pixel");
    if (target_m > mesh.num_triangles())
        throw std::invalid_argument("requested " + std::to_string(target_m) +
                                    " pixels but the mesh has only " +
                                    std::to_string(mesh.num_triangles()) + " elements");
    Eigen::AlignedBox2d box;
    for (const auto& p : mesh.nodes) box.extend(p);
    const Vec2 extent = box.sizes();
    const double longest = std::max(extent.x(), extent.y());

    std::vector<Vec2> centroids(mesh.num_triangles());
    for (std::size_t t = 0; t < centroids.size(); ++t) centroids[t] = mesh.centroid(t);

    const int max_n = 4 * static_cast<int>(std::sqrt(static_cast<double>(mesh.num_triangles()))) + 8;
    for (int n = 1; n <= max_n; ++n) {
        PixelLattice lattice;
        lattice.pixel_size = longest / n;
        lattice.nx = std::max(1, static_cast<int>(std::ceil(extent.x() / lattice.pixel_size - 1e-9)));
        lattice.ny = std::max(1, static_cast<int>(std::ceil(extent.y() / lattice.pixel_size - 1e-9)));
        lattice.origin = box.center() - 0.5 * lattice.pixel_size * Vec2(lattice.nx, lattice.ny);

        std::vector<int> grid_of(centroids.size());
        std::vector<char> used(static_cast<std::size_t>(lattice.nx) * lattice.ny, 0);
        for (std::size_t t = 0; t < centroids.size(); ++t) {
            auto [ix, iy] = lattice.locate(centroids[t]);
            ix = std::clamp(ix, 0, lattice.nx - 1);
            iy = std::clamp(iy, 0, lattice.ny - 1);
            grid_of[t] = iy * lattice.nx + ix;
            used[grid_of[t]] = 1;
        }
        std::vector<int> active_of(used.size(), -1);
        for (std::size_t g = 0; g < used.size(); ++g) {
            if (!used[g]) continue;
            active_of[g] = static_cast<int>(lattice.active_pixels.size());
            lattice.active_pixels.push_back(static_cast<int>(g));
        }
        if (lattice.active_pixels.size() < target_m) continue;
        lattice.element_to_pixel.resize(centroids.size());
        for (std::size_t t = 0; t < centroids.size(); ++t)
            lattice.element_to_pixel[t] = active_of[grid_of[t]];
        return lattice;
    }
    throw std::runtime_error("could not build a pixel lattice with " + std::to_string(target_m) +
                             " pixels");
}

NeighborGraph NeighborGraph::from_lattice(const PixelLattice& lattice) {
    std::vector<int> active_of(static_cast<std::size_t>(lattice.nx) * lattice.ny, -1);
    for (std::size_t i = 0; i < lattice.size(); ++i) active_of[lattice.active_pixels[i]] = static_cast<int>(i);
    NeighborGraph graph;
    graph.neighbors.resize(lattice.size());
    constexpr int dx[4] = {-1, 1, 0, 0};
    constexpr int dy[4] = {0, 0, -1, 1};
    for (std::size_t i = 0; i < lattice.size(); ++i) {
        const auto [ix, iy] = lattice.grid_coords(i);
        for (int k = 0; k < 4; ++k) {
            const int jx = ix + dx[k], jy = iy + dy[k];
            if (jx < 0 || jy < 0 || jx >= lattice.nx || jy >= lattice.ny) continue;
            const int j = active_of[jy * lattice.nx + jx];
            if (j >= 0) graph.neighbors[i].push_back(j);
        }
        std::sort(graph.neighbors[i].begin(), graph.neighbors[i].end());
    }
    return graph;
}

}  // namespace uaeit

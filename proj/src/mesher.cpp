// Ring ("zipper") triangulation of star-shaped domains.
//
// Interior nodes sit on homothetic copies of the boundary polygon at radii
// k / n_rings; neighbouring rings are stitched by merging their nodes in
// boundary-parameter order, and the innermost ring is fanned to the origin.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>

#include "uaeit/geometry.hpp"

namespace uaeit {

namespace {

struct MeshPlan {
    std::vector<double> boundary_s;
    int n_rings = 0;
    std::vector<int> ring_sizes;  // index k = 1..n_rings, the last one is the boundary
    std::size_t elements = 0;
};

struct Ring {
    std::vector<int> ids;
    std::vector<double> u;  // boundary parameter s / S, increasing, span < 1
};

double positive_step(double from, double to) {
    double d = std::fmod(to - from, 1.0);
    if (d <= 0.0) d += 1.0;
    return d;
}

void zip(const Ring& inner, const Ring& outer, std::vector<std::array<int, 3>>& triangles) {
    const std::size_t p = inner.ids.size();
    const std::size_t q = outer.ids.size();

    std::vector<double> a(p + 1), b(q + 1);
    a[0] = inner.u[0];
    for (std::size_t k = 1; k <= p; ++k) a[k] = a[k - 1] + positive_step(inner.u[(k - 1) % p], inner.u[k % p]);

    std::size_t j0 = 0;
    double best = 2.0;
    for (std::size_t j = 0; j < q; ++j) {
        double d = std::fmod(std::abs(outer.u[j] - a[0]), 1.0);
        d = std::min(d, 1.0 - d);
        if (d < best) {
            best = d;
            j0 = j;
        }
    }
    b[0] = outer.u[j0] + std::round(a[0] - outer.u[j0]);
    for (std::size_t k = 1; k <= q; ++k)
        b[k] = b[k - 1] + positive_step(outer.u[(j0 + k - 1) % q], outer.u[(j0 + k) % q]);

    std::size_t ia = 0, jb = 0;
    while (ia < p || jb < q) {
        const int ai = inner.ids[ia % p];
        const int bj = outer.ids[(j0 + jb) % q];
        const bool advance_inner = (jb == q) || (ia < p && a[ia + 1] < b[jb + 1]);
        if (advance_inner) {
            triangles.push_back({ai, bj, inner.ids[(ia + 1) % p]});
            ++ia;
        } else {
            triangles.push_back({ai, bj, outer.ids[(j0 + jb + 1) % q]});
            ++jb;
        }
    }
}

double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

double triangle_area(const std::vector<Vec2>& nodes, const std::array<int, 3>& t) {
    return 0.5 * cross(nodes[t[1]] - nodes[t[0]], nodes[t[2]] - nodes[t[0]]);
}

void smooth(Mesh& mesh, std::size_t n_fixed, int sweeps) {
    const std::size_t n = mesh.nodes.size();
    std::vector<std::vector<int>> adjacent(n), incident(n);
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        const auto& tri = mesh.triangles[t];
        for (int k = 0; k < 3; ++k) {
            incident[tri[k]].push_back(static_cast<int>(t));
            adjacent[tri[k]].push_back(tri[(k + 1) % 3]);
            adjacent[tri[k]].push_back(tri[(k + 2) % 3]);
        }
    }
    for (auto& list : adjacent) {
        std::sort(list.begin(), list.end());
        list.erase(std::unique(list.begin(), list.end()), list.end());
    }
    for (int sweep = 0; sweep < sweeps; ++sweep) {
        for (std::size_t v = n_fixed; v < n; ++v) {
            Vec2 mean = Vec2::Zero();
            for (int w : adjacent[v]) mean += mesh.nodes[w];
            mean /= static_cast<double>(adjacent[v].size());
            const Vec2 old = mesh.nodes[v];
            double min_before = std::numeric_limits<double>::infinity();
            for (int t : incident[v]) min_before = std::min(min_before, triangle_area(mesh.nodes, mesh.triangles[t]));
            mesh.nodes[v] = mean;
            double min_after = std::numeric_limits<double>::infinity();
            for (int t : incident[v]) min_after = std::min(min_after, triangle_area(mesh.nodes, mesh.triangles[t]));
            if (!(min_after > 0.0) || min_after < 0.5 * min_before) mesh.nodes[v] = old;
        }
    }
}

}  // namespace

Mesh triangulate(const BoundaryCurve& curve, const ElectrodeLayout& layout, std::size_t target_elements) {
    if (target_elements < 100) throw std::invalid_argument("triangulate needs target_elements >= 100");
    if (std::abs(layout.total_length - curve.total_length) > 1e-9 * curve.total_length)
        throw std::invalid_argument("electrode layout was built for a different boundary curve");

    const double S = curve.total_length;
    double mean_radius = 0.0;
    for (const auto& sample : curve.samples) mean_radius += sample.point.norm();
    mean_radius /= static_cast<double>(curve.size());
    if (!(mean_radius > 0.0)) throw std::runtime_error("degenerate boundary curve");

    std::vector<double> breaks;
    for (std::size_t j = 0; j < layout.count; ++j) {
        breaks.push_back(layout.starts[j]);
        breaks.push_back(std::fmod(layout.starts[j] + layout.lengths[j], S));
    }
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end(),
                             [&](double x, double y) { return std::abs(x - y) < 1e-12 * S; }),
                 breaks.end());
    if (breaks.empty()) breaks.push_back(0.0);

    // Triangles ~ n_boundary * n_rings. The boundary count is split over the
    // electrode/gap arcs by largest remainder so every total is reachable;
    // among near-isotropic ring counts keep the plan closest to the target.
    std::vector<double> arc_lengths;
    for (std::size_t k = 0; k < breaks.size(); ++k)
        arc_lengths.push_back(((k + 1 < breaks.size()) ? breaks[k + 1] : breaks[0] + S) - breaks[k]);
    const auto plan = [&](std::size_t nb, int n_rings) {
        MeshPlan out;
        std::vector<int> pieces(arc_lengths.size());
        std::vector<std::pair<double, std::size_t>> remainders;
        std::size_t used = 0;
        for (std::size_t k = 0; k < arc_lengths.size(); ++k) {
            const double exact = static_cast<double>(nb) * arc_lengths[k] / S;
            pieces[k] = std::max(1, static_cast<int>(std::floor(exact)));
            used += static_cast<std::size_t>(pieces[k]);
            remainders.emplace_back(exact - std::floor(exact), k);
        }
        std::stable_sort(remainders.begin(), remainders.end(),
                         [](const auto& x, const auto& y) { return x.first > y.first; });
        for (std::size_t r = 0; used < nb; r = (r + 1) % remainders.size(), ++used) ++pieces[remainders[r].second];
        for (std::size_t k = 0; k < arc_lengths.size(); ++k)
            for (int i = 0; i < pieces[k]; ++i)
                out.boundary_s.push_back(breaks[k] + arc_lengths[k] * i / pieces[k]);
        const std::size_t n_boundary = out.boundary_s.size();
        out.n_rings = n_rings;
        out.ring_sizes.assign(static_cast<std::size_t>(n_rings + 1), 0);
        for (int k = 1; k < n_rings; ++k)
            out.ring_sizes[static_cast<std::size_t>(k)] =
                std::max(3, static_cast<int>(std::lround(static_cast<double>(n_boundary) * k / n_rings)));
        out.ring_sizes.back() = static_cast<int>(n_boundary);
        out.elements = static_cast<std::size_t>(out.ring_sizes[1]);
        for (int k = 1; k < n_rings; ++k)
            out.elements += static_cast<std::size_t>(out.ring_sizes[static_cast<std::size_t>(k)] +
                                                     out.ring_sizes[static_cast<std::size_t>(k + 1)]);
        return out;
    };
    const auto miss = [&](const MeshPlan& p) {
        return p.elements > target_elements ? p.elements - target_elements : target_elements - p.elements;
    };
    const double h0 = std::sqrt(S * mean_radius / static_cast<double>(target_elements));
    const auto nb0 = static_cast<std::size_t>(std::lround(S / h0));
    std::optional<MeshPlan> best;
    for (std::size_t nb = std::max<std::size_t>(arc_lengths.size(), nb0 * 3 / 4); nb <= nb0 * 4 / 3 + 1; ++nb) {
        const double rings = mean_radius * static_cast<double>(nb) / S;
        for (int n_rings = std::max(2, static_cast<int>(std::floor(rings))); n_rings <= static_cast<int>(std::ceil(rings));
             ++n_rings) {
            MeshPlan candidate = plan(nb, n_rings);
            if (!best || miss(candidate) < miss(*best)) best = std::move(candidate);
        }
    }
    const std::vector<double>& boundary_s = best->boundary_s;
    const std::size_t nb = boundary_s.size();
    if (nb < 6) throw std::runtime_error("boundary discretization produced too few nodes");
    const int n_rings = best->n_rings;

    Mesh mesh;
    // Boundary nodes first so they stay fixed during smoothing.
    Ring outer;
    for (std::size_t i = 0; i < nb; ++i) {
        outer.ids.push_back(static_cast<int>(mesh.nodes.size()));
        outer.u.push_back(boundary_s[i] / S);
        mesh.nodes.push_back(curve.point_at(boundary_s[i]));
    }

    std::vector<Ring> rings(static_cast<std::size_t>(n_rings));
    const int center = static_cast<int>(mesh.nodes.size());
    mesh.nodes.push_back(Vec2::Zero());
    for (int k = 1; k < n_rings; ++k) {
        const double rho = static_cast<double>(k) / n_rings;
        const int m = best->ring_sizes[static_cast<std::size_t>(k)];
        const double stagger = 0.5 * (k % 2);
        Ring& ring = rings[static_cast<std::size_t>(k)];
        for (int i = 0; i < m; ++i) {
            const double u = std::fmod((i + stagger) / m + outer.u[0], 1.0);
            ring.ids.push_back(static_cast<int>(mesh.nodes.size()));
            ring.u.push_back(u);
            mesh.nodes.push_back(rho * curve.point_at(u * S));
        }
        // keep u increasing from the first entry
        for (std::size_t i = 1; i < ring.u.size(); ++i)
            if (ring.u[i] < ring.u[i - 1]) ring.u[i] += 1.0;
    }
    const Ring& first = rings[1];
    for (std::size_t i = 0; i < first.ids.size(); ++i)
        mesh.triangles.push_back({center, first.ids[i], first.ids[(i + 1) % first.ids.size()]});
    for (int k = 1; k + 1 < n_rings; ++k) zip(rings[k], rings[k + 1], mesh.triangles);
    zip(rings[static_cast<std::size_t>(n_rings - 1)], outer, mesh.triangles);

    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        if (!(triangle_area(mesh.nodes, mesh.triangles[t]) > 0.0))
            throw std::runtime_error("meshing failed: inverted triangle " + std::to_string(t) +
                                     " (domain too far from star-shaped?)");
    }

    smooth(mesh, nb, 8);

    for (std::size_t i = 0; i < nb; ++i) {
        BoundaryEdge edge;
        edge.nodes = {static_cast<int>(i), static_cast<int>((i + 1) % nb)};
        edge.s0 = boundary_s[i];
        edge.s1 = (i + 1 < nb) ? boundary_s[i + 1] : boundary_s[0] + S;
        edge.electrode = layout.electrode_at(std::fmod(0.5 * (edge.s0 + edge.s1), S));
        mesh.boundary_edges.push_back(edge);
    }

    mesh.validate();
    return mesh;
}

}  // namespace uaeit

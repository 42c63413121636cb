#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace uaeit {

using Vec2 = Eigen::Vector2d;

enum class DomainKind { disk, ellipse, truncated_ellipse, fourier };

std::string to_string(DomainKind kind);
DomainKind domain_kind_from_string(const std::string& name);

/// Star-shaped test domain described by its polar radius function r(phi).
///
/// All four kinds are star-shaped with respect to the origin, so the boundary
/// is the curve phi -> r(phi) (cos phi, sin phi), traversed counterclockwise.
struct DomainSpec {
    DomainKind kind = DomainKind::disk;
    double a = 1.0;  // disk radius, or horizontal semi-axis
    double b = 1.0;  // vertical semi-axis
    /// Chord abscissa of the truncated ellipse as a fraction of `a` (x = cut * a).
    double cut = -0.65;
    /// Arclength fraction of the boundary spanned by each rounded corner.
    double corner_rounding = 0.02;
    /// Fourier radius coefficients, index k-1 holds the k-th harmonic.
    std::vector<double> fourier_cos;
    std::vector<double> fourier_sin;

    static DomainSpec disk(double radius = 1.0);
    static DomainSpec ellipse(double a, double b);
    static DomainSpec truncated_ellipse(double a, double b, double cut = -0.65);
    static DomainSpec fourier(std::vector<double> cos_coeffs, std::vector<double> sin_coeffs);
    /// r(phi) = 1 + 0.12 cos 2phi + 0.05 cos 3phi - 0.04 sin phi
    static DomainSpec fourier_default();

    double radius(double phi) const;
    Vec2 point(double phi) const { return radius(phi) * Vec2(std::cos(phi), std::sin(phi)); }

    /// Throws std::invalid_argument on nonpositive radii or bad parameters.
    void validate() const;

    /// Smooth-min exponent blending the ellipse and the chord. Set by
    /// calibrate_corners() so that each corner spans corner_rounding * S.
    double corner_exponent = 0.0;
    void calibrate_corners();

    double radius_with_exponent(double phi, double exponent) const;
};

struct BoundarySample {
    Vec2 point;
    double s = 0.0;
};

/// Closed boundary polyline sampled at equal arclength spacing, starting at
/// polar angle zero and running counterclockwise.
struct BoundaryCurve {
    std::vector<BoundarySample> samples;
    double total_length = 0.0;

    std::size_t size() const { return samples.size(); }
    /// Linear interpolation along the sampled polyline; s is taken modulo S.
    Vec2 point_at(double s) const;
    /// Unit outward normal of the polyline segment containing s.
    Vec2 normal_at(double s) const;
};

BoundaryCurve build_boundary(const DomainSpec& spec, std::size_t n_samples);

/// Sampled segment-intersection test over non-adjacent polyline segments.
bool is_simple_closed(const std::vector<Vec2>& polygon);

struct ElectrodeLayout {
    std::size_t count = 0;
    std::vector<double> starts;   // arclength start of each arc, in [0, S)
    std::vector<double> lengths;  // arc lengths
    std::vector<double> contact_impedance;
    double total_length = 0.0;

    double coverage() const;
    double midpoint(std::size_t j) const;
    /// True when s lies in the half-open arc of electrode j (modulo S).
    bool contains(std::size_t j, double s) const;
    /// Electrode containing s, or -1.
    int electrode_at(double s) const;
};

/// J equal arcs of length coverage * S / J, midpoints at offset + j * S / J.
ElectrodeLayout place_electrodes(const BoundaryCurve& curve, std::size_t count, double coverage,
                                 double offset = 0.0, double contact_impedance = 1.0);

struct BoundaryEdge {
    std::array<int, 2> nodes{};
    double s0 = 0.0;  // arclength of nodes[0]
    double s1 = 0.0;  // arclength of nodes[1], may exceed S on the closing edge
    int electrode = -1;
};

struct Mesh {
    std::vector<Vec2> nodes;
    std::vector<std::array<int, 3>> triangles;  // counterclockwise
    std::vector<BoundaryEdge> boundary_edges;   // counterclockwise loop

    std::size_t num_nodes() const { return nodes.size(); }
    std::size_t num_triangles() const { return triangles.size(); }
    double signed_area(std::size_t t) const;
    Vec2 centroid(std::size_t t) const;
    double total_area() const;
    std::size_t num_edges() const;
    /// Typical edge length sqrt(area / triangles).
    double mesh_size() const;
    /// Distance from p to the boundary polygon.
    double distance_to_boundary(const Vec2& p) const;
    /// Electrode arclength covered by tagged boundary edges, per electrode.
    std::vector<double> electrode_lengths(std::size_t count) const;

    /// Throws std::runtime_error describing the first violated mesh invariant.
    void validate() const;
};

/// Ring-based triangulation of a star-shaped domain. Electrode arc endpoints
/// are boundary nodes; the element count tracks target_elements within 25%.
Mesh triangulate(const BoundaryCurve& curve, const ElectrodeLayout& layout,
                 std::size_t target_elements);

/// Regular square-pixel lattice over the mesh bounding box.
struct PixelLattice {
    Vec2 origin;  // lower-left corner of the grid
    double pixel_size = 0.0;
    int nx = 0;
    int ny = 0;
    std::vector<int> active_pixels;    // grid index iy * nx + ix
    std::vector<int> element_to_pixel; // triangle -> active pixel index

    std::size_t size() const { return active_pixels.size(); }
    Vec2 pixel_center(std::size_t active) const;
    std::array<int, 2> grid_coords(std::size_t active) const;
    /// Grid index containing p (may be outside the grid).
    std::array<int, 2> locate(const Vec2& p) const;
};

/// Smallest grid whose pixels hold at least target_m element centroids.
PixelLattice build_pixel_lattice(const Mesh& mesh, std::size_t target_m);

/// 4-point nearest-neighbour system on the active pixels.
struct NeighborGraph {
    std::vector<std::vector<int>> neighbors;

    std::size_t size() const { return neighbors.size(); }
    static NeighborGraph from_lattice(const PixelLattice& lattice);
};

}  // namespace uaeit

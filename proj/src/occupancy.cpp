#include "sketchmass/occupancy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "json.hpp"
#include "sketchmass/binary_io.hpp"
#include "sketchmass/errors.hpp"
#include "sketchmass/file_util.hpp"
#include "sketchmass/parallel.hpp"
#include "sketchmass/rng.hpp"

namespace sketchmass {

namespace {

// Coordinates rotated so that `axis` becomes the last component.
Vec3 to_ray_frame(const Vec3& p, int axis) {
    switch (axis) {
        case 0: return {p.y(), p.z(), p.x()};
        case 1: return {p.z(), p.x(), p.y()};
        default: return p;
    }
}

double cross2(double ax, double ay, double bx, double by) { return ax * by - ay * bx; }

float to_f32_within(double v, double bound) {
    float f = static_cast<float>(v);
    while (f > bound) f = std::nextafter(f, 0.0f);
    while (f < -bound) f = std::nextafter(f, 0.0f);
    return f;
}

}  // namespace

void validate(const SamplingConfig& config) {
    if (config.n_points < 1) throw ConfigError("sampling needs at least one point");
    if (!(config.padding >= 0.0)) throw ConfigError("padding must be non-negative");
}

std::vector<Vec3> sample_points_uniform(const SamplingConfig& config, std::string_view shape_id) {
    validate(config);
    const CounterRng rng(config.seed, shape_id, "points");
    const double half = 0.5 + config.padding;
    std::vector<Vec3> pts(config.n_points);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
            const double u = rng.uniform(3 * i + k);
            pts[i][k] = to_f32_within(-half + 2.0 * half * u, half);
        }
    }
    return pts;
}

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    // Closest point by Voronoi region classification.
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0 && d2 <= 0) return ap.norm();
    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0 && d4 <= d3) return bp.norm();
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0 && d1 >= 0 && d3 <= 0) return (p - (a + d1 / (d1 - d3) * ab)).norm();
    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0 && d5 <= d6) return cp.norm();
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0 && d2 >= 0 && d6 <= 0) return (p - (a + d2 / (d2 - d6) * ac)).norm();
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
        return (p - (b + (d4 - d3) / ((d4 - d3) + (d5 - d6)) * (c - b))).norm();
    }
    const double denom = 1.0 / (va + vb + vc);
    return (p - (a + ab * (vb * denom) + ac * (vc * denom))).norm();
}

double winding_number(const TriangleMesh& mesh, const Vec3& p) {
    // Signed solid angles (Van Oosterom and Strackee).
    double total = 0.0;
    for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
        const auto [va, vb, vc] = mesh.triangle(f);
        const Vec3 a = va - p, b = vb - p, c = vc - p;
        const double la = a.norm(), lb = b.norm(), lc = c.norm();
        const double num = a.dot(b.cross(c));
        const double den = la * lb * lc + a.dot(b) * lc + a.dot(c) * lb + b.dot(c) * la;
        total += 2.0 * std::atan2(num, den);
    }
    return total / (4.0 * std::numbers::pi);
}

bool winding_number_oracle(const TriangleMesh& mesh, const Vec3& point) {
    return winding_number(mesh, point) > 0.5;
}

ParityTester::ParityTester(const TriangleMesh& mesh, ParityOptions options)
    : mesh_(&mesh), options_(options) {
    if (options_.three_axis_vote) {
        for (int axis = 0; axis < 3; ++axis) grids_.push_back(build_grid(axis));
    } else {
        grids_.push_back(build_grid(2));
    }
}

ParityTester::AxisGrid ParityTester::build_grid(int axis) const {
    AxisGrid g;
    g.axis = axis;
    const auto& faces = mesh_->faces();
    const double margin = std::max(1e-6, 10.0 * options_.surface_guard);
    g.lo = Vec2(INFINITY, INFINITY);
    g.hi = Vec2(-INFINITY, -INFINITY);
    for (const Vec3& v : mesh_->vertices()) {
        const Vec3 q = to_ray_frame(v, axis);
        g.lo = g.lo.cwiseMin(q.head<2>());
        g.hi = g.hi.cwiseMax(q.head<2>());
    }
    if (faces.empty()) {
        g.cell_start.assign(2, 0);
        return g;
    }
    g.lo.array() -= margin;
    g.hi.array() += margin;
    const int side = std::clamp(static_cast<int>(std::ceil(std::sqrt(static_cast<double>(faces.size())))), 1, 256);
    g.nx = g.ny = side;
    const Vec2 size = g.hi - g.lo;
    auto cell_of = [&](double u, double lo, double extent, int n) {
        return std::clamp(static_cast<int>((u - lo) / extent * n), 0, n - 1);
    };

    std::vector<std::array<int, 4>> spans(faces.size());
    std::vector<std::uint32_t> counts(static_cast<std::size_t>(side) * side + 1, 0);
    for (std::size_t f = 0; f < faces.size(); ++f) {
        Vec2 tlo(INFINITY, INFINITY), thi(-INFINITY, -INFINITY);
        for (auto vi : faces[f]) {
            const Vec3 q = to_ray_frame(mesh_->vertex(vi), axis);
            tlo = tlo.cwiseMin(q.head<2>());
            thi = thi.cwiseMax(q.head<2>());
        }
        auto& s = spans[f];
        s = {cell_of(tlo.x() - margin, g.lo.x(), size.x(), side), cell_of(thi.x() + margin, g.lo.x(), size.x(), side),
             cell_of(tlo.y() - margin, g.lo.y(), size.y(), side), cell_of(thi.y() + margin, g.lo.y(), size.y(), side)};
        for (int y = s[2]; y <= s[3]; ++y)
            for (int x = s[0]; x <= s[1]; ++x) ++counts[static_cast<std::size_t>(y) * side + x + 1];
    }
    std::partial_sum(counts.begin(), counts.end(), counts.begin());
    g.cell_start = counts;
    g.cell_tris.resize(counts.back());
    std::vector<std::uint32_t> fill(counts.begin(), counts.end() - 1);
    for (std::size_t f = 0; f < faces.size(); ++f) {
        const auto& s = spans[f];
        for (int y = s[2]; y <= s[3]; ++y)
            for (int x = s[0]; x <= s[1]; ++x)
                g.cell_tris[fill[static_cast<std::size_t>(y) * side + x]++] = static_cast<std::uint32_t>(f);
    }
    return g;
}

std::span<const std::uint32_t> ParityTester::cell(const AxisGrid& g, const Vec3& p) const {
    const Vec3 q = to_ray_frame(p, g.axis);
    if (g.cell_tris.empty() || q.x() < g.lo.x() || q.y() < g.lo.y() || q.x() > g.hi.x() || q.y() > g.hi.y()) {
        return {};
    }
    const Vec2 size = g.hi - g.lo;
    const int x = std::clamp(static_cast<int>((q.x() - g.lo.x()) / size.x() * g.nx), 0, g.nx - 1);
    const int y = std::clamp(static_cast<int>((q.y() - g.lo.y()) / size.y() * g.ny), 0, g.ny - 1);
    const std::size_t c = static_cast<std::size_t>(y) * g.nx + x;
    return std::span<const std::uint32_t>(g.cell_tris).subspan(g.cell_start[c], g.cell_start[c + 1] - g.cell_start[c]);
}

ParityTester::Cast ParityTester::cast(const AxisGrid& g, const Vec3& p) const {
    const Vec3 q = to_ray_frame(p, g.axis);
    int crossings = 0;
    for (const auto f : cell(g, p)) {
        const auto tri = mesh_->triangle(f);
        const Vec3 a = to_ray_frame(tri[0], g.axis), b = to_ray_frame(tri[1], g.axis),
                   c = to_ray_frame(tri[2], g.axis);
        const double area = cross2(b.x() - a.x(), b.y() - a.y(), c.x() - a.x(), c.y() - a.y());
        const double scale = (b - a).head<2>().squaredNorm() + (c - a).head<2>().squaredNorm();
        if (std::abs(area) <= 1e-14 * scale) continue;  // parallel to the ray
        const double w0 = cross2(b.x() - q.x(), b.y() - q.y(), c.x() - q.x(), c.y() - q.y()) / area;
        const double w1 = cross2(c.x() - q.x(), c.y() - q.y(), a.x() - q.x(), a.y() - q.y()) / area;
        const double w2 = cross2(a.x() - q.x(), a.y() - q.y(), b.x() - q.x(), b.y() - q.y()) / area;
        const double tol = options_.graze_tol;
        if (w0 < -tol || w1 < -tol || w2 < -tol) continue;
        const double hit = (w0 * a.z() + w1 * b.z() + w2 * c.z()) / (w0 + w1 + w2);
        if (hit <= q.z()) continue;
        if (w0 <= tol || w1 <= tol || w2 <= tol) return Cast::Grazing;
        ++crossings;
    }
    return (crossings % 2 == 1) ? Cast::Inside : Cast::Outside;
}

bool ParityTester::cast_robust(const AxisGrid& g, const Vec3& p) const {
    Cast c = cast(g, p);
    constexpr double golden_angle = 2.399963229728653;
    for (int k = 1; c == Cast::Grazing && k <= options_.max_retries; ++k) {
        const double u = options_.jitter * std::cos(k * golden_angle);
        const double v = options_.jitter * std::sin(k * golden_angle);
        Vec3 offset = Vec3::Zero();
        // Offset perpendicular to the ray.
        offset[(g.axis + 1) % 3] = u;
        offset[(g.axis + 2) % 3] = v;
        c = cast(g, p + offset);
    }
    if (c == Cast::Grazing) return winding_number_oracle(*mesh_, p);
    return c == Cast::Inside;
}

double ParityTester::near_surface_distance(const Vec3& p) const {
    double best = INFINITY;
    for (const auto f : cell(grids_.front(), p)) {
        const auto [a, b, c] = mesh_->triangle(f);
        best = std::min(best, point_triangle_distance(p, a, b, c));
    }
    return best < options_.surface_guard ? best : INFINITY;
}

bool ParityTester::inside(const Vec3& p) const {
    if (mesh_->empty()) return false;
    if (std::isfinite(near_surface_distance(p))) return winding_number_oracle(*mesh_, p);
    if (!options_.three_axis_vote) return cast_robust(grids_.front(), p);
    int votes = 0;
    for (const auto& g : grids_) votes += cast_robust(g, p) ? 1 : 0;
    return votes >= 2;
}

bool occupancy_zray(const TriangleMesh& mesh, const Vec3& point) { return ParityTester(mesh).inside(point); }

OccupancyField label_points(const TriangleMesh& mesh, std::span<const Vec3> points, const ParityOptions& options,
                            unsigned workers) {
    const ParityTester tester(mesh, options);
    OccupancyField field;
    field.points.assign(points.begin(), points.end());
    field.labels.resize(points.size());
    field.shape_id = mesh.id();
    parallel_for(points.size(), [&](std::size_t i) { field.labels[i] = tester.inside(points[i]) ? 1 : 0; },
                 workers);
    return field;
}

std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t k, std::uint64_t seed,
                                           std::string_view shape_id) {
    if (k > n) throw DataError("subsample of " + std::to_string(k) + " from " + std::to_string(n) + " rows");
    const CounterRng rng(seed, shape_id, "subsample");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(i, n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

OccupancyField subsample(const OccupancyField& field, std::size_t k, std::uint64_t seed, bool allow_empty) {
    if (k == 0 && !allow_empty) throw DataError("subsample size must be positive");
    const auto idx = subsample_indices(field.size(), k, seed, field.shape_id);
    OccupancyField out;
    out.shape_id = field.shape_id;
    out.seed = field.seed;
    out.padding = field.padding;
    out.points.reserve(k);
    out.labels.reserve(k);
    for (auto i : idx) {
        out.points.push_back(field.points[i]);
        out.labels.push_back(field.labels[i]);
    }
    return out;
}

void write_occ1(const std::filesystem::path& path, const OccupancyField& field) {
    if (field.labels.size() != field.points.size()) throw DataError("field points/labels length mismatch");
    std::string buf = "OCC1";
    const std::size_t n = field.size();
    buf.reserve(8 + 12 * n + (n + 7) / 8);
    binio::put_u32(buf, static_cast<std::uint32_t>(n));
    for (const Vec3& p : field.points) {
        for (int k = 0; k < 3; ++k) binio::put_f32(buf, static_cast<float>(p[k]));
    }
    std::string packed((n + 7) / 8, '\0');
    for (std::size_t i = 0; i < n; ++i) {
        if (field.labels[i]) packed[i / 8] = static_cast<char>(packed[i / 8] | (1u << (i % 8)));
    }
    buf += packed;
    write_file(path, buf);
}

OccupancyField read_occ1(const std::filesystem::path& path) {
    const std::string data = read_file(path);
    binio::Reader r(data, path.string());
    if (r.bytes(4) != "OCC1") throw DataError(path.string() + ": bad OCC1 magic");
    const std::uint32_t n = r.u32();
    if (r.remaining() != static_cast<std::size_t>(n) * 12 + (n + 7) / 8) {
        throw DataError(path.string() + ": OCC1 size does not match header");
    }
    OccupancyField f;
    f.points.resize(n);
    for (auto& p : f.points) {
        for (int k = 0; k < 3; ++k) p[k] = r.f32();
    }
    const auto packed = r.bytes((n + 7) / 8);
    f.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) f.labels[i] = (static_cast<unsigned char>(packed[i / 8]) >> (i % 8)) & 1u;
    f.shape_id = path.parent_path().filename().string();
    return f;
}

void write_occ1_sidecar(const std::filesystem::path& path, const OccupancyField& field) {
    const nlohmann::json doc{
        {"shape_id", field.shape_id}, {"seed", field.seed}, {"n", field.size()}, {"padding", field.padding}};
    write_file(path, doc.dump(2) + "\n");
}

}  // namespace sketchmass

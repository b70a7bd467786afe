#include "sketchmass/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "sketchmass/errors.hpp"

namespace sketchmass {

namespace {

// Twice-area below this is treated as zero.
constexpr double kDegenerateCross = 1e-14;

std::uint64_t edge_key(std::uint32_t a, std::uint32_t b) {
    return (static_cast<std::uint64_t>(std::min(a, b)) << 32) | std::max(a, b);
}

}  // namespace

TriangleMesh::TriangleMesh(std::vector<Vec3> vertices, std::vector<Face> faces, std::string id)
    : vertices_(std::move(vertices)), faces_(std::move(faces)), id_(std::move(id)) {
    if (!faces_.empty() && vertices_.size() < 3) {
        throw GeometryError("mesh with faces needs at least 3 vertices");
    }
    for (std::size_t f = 0; f < faces_.size(); ++f) {
        const Face& t = faces_[f];
        for (auto i : t) {
            if (i >= vertices_.size()) {
                throw GeometryError("face " + std::to_string(f) + " index " + std::to_string(i) +
                                    " out of range");
            }
        }
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) {
            throw GeometryError("face " + std::to_string(f) + " repeats a vertex");
        }
    }
    for (const Vec3& v : vertices_) {
        if (!v.allFinite()) throw GeometryError("non-finite vertex coordinate");
    }
}

TriangleMesh TriangleMesh::transformed(const std::function<Vec3(const Vec3&)>& fn) const {
    std::vector<Vec3> out;
    out.reserve(vertices_.size());
    for (const Vec3& v : vertices_) out.push_back(fn(v));
    return TriangleMesh(std::move(out), faces_, id_);
}

TriangleMesh TriangleMesh::with_id(std::string id) const {
    return TriangleMesh(vertices_, faces_, std::move(id));
}

Vec3 face_cross(const TriangleMesh& mesh, std::size_t f) {
    const auto [a, b, c] = mesh.triangle(f);
    return (b - a).cross(c - a);
}

double face_area(const TriangleMesh& mesh, std::size_t f) { return 0.5 * face_cross(mesh, f).norm(); }

Vec3 face_normal(const TriangleMesh& mesh, std::size_t f) {
    const Vec3 n = face_cross(mesh, f);
    const double len = n.norm();
    return len > kDegenerateCross ? Vec3(n / len) : Vec3::Zero();
}

bool is_degenerate_face(const TriangleMesh& mesh, std::size_t f) {
    return face_cross(mesh, f).norm() <= kDegenerateCross;
}

double surface_area(const TriangleMesh& mesh) {
    double total = 0.0;
    for (std::size_t f = 0; f < mesh.num_faces(); ++f) total += face_area(mesh, f);
    return total;
}

Aabb bounding_box(const TriangleMesh& mesh) {
    if (mesh.vertices().empty()) throw GeometryError("bounding box of an empty mesh");
    Aabb box{mesh.vertices().front(), mesh.vertices().front()};
    for (const Vec3& v : mesh.vertices()) {
        box.min = box.min.cwiseMin(v);
        box.max = box.max.cwiseMax(v);
    }
    return box;
}

TriangleMesh parse_obj(std::istream& in, std::string id) {
    std::vector<Vec3> vertices;
    std::vector<Face> faces;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag[0] == '#') continue;
        if (tag == "v") {
            double x, y, z;
            if (!(ls >> x >> y >> z)) throw ParseError("malformed vertex record", lineno);
            if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
                throw ParseError("non-finite vertex coordinate", lineno);
            }
            vertices.emplace_back(x, y, z);
        } else if (tag == "f") {
            std::vector<std::uint32_t> poly;
            std::string tok;
            while (ls >> tok) {
                // v, v/vt, v//vn or v/vt/vn: only the position index matters.
                const std::string head = tok.substr(0, tok.find('/'));
                long long idx = 0;
                try {
                    std::size_t used = 0;
                    idx = std::stoll(head, &used);
                    if (used != head.size()) throw std::invalid_argument(head);
                } catch (const std::exception&) {
                    throw ParseError("malformed face index '" + tok + "'", lineno);
                }
                const long long n = static_cast<long long>(vertices.size());
                const long long resolved = idx > 0 ? idx - 1 : n + idx;
                if (idx == 0 || resolved < 0 || resolved >= n) {
                    throw ParseError("face index " + std::to_string(idx) + " out of range", lineno);
                }
                poly.push_back(static_cast<std::uint32_t>(resolved));
            }
            if (poly.size() < 3) throw ParseError("face with fewer than 3 vertices", lineno);
            for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
                const Face t{poly[0], poly[k], poly[k + 1]};
                if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) {
                    throw ParseError("face repeats a vertex", lineno);
                }
                faces.push_back(t);
            }
        }
        // vt, vn, mtllib, usemtl, o, g, s, l: ignored.
    }
    if (faces.empty()) throw DataError("OBJ contains no faces");
    return TriangleMesh(std::move(vertices), std::move(faces), std::move(id));
}

TriangleMesh load_obj(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return parse_obj(in, path.stem().string());
}

void write_obj(std::ostream& out, const TriangleMesh& mesh) {
    char buf[96];
    for (const Vec3& v : mesh.vertices()) {
        std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
        out << buf;
    }
    for (const Face& f : mesh.faces()) {
        out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    }
}

void save_obj(const std::filesystem::path& path, const TriangleMesh& mesh) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    write_obj(out, mesh);
}

bool is_watertight(const TriangleMesh& mesh) {
    struct Use {
        int forward = 0;  // directed min -> max
        int backward = 0;
    };
    std::unordered_map<std::uint64_t, Use> edges;
    edges.reserve(mesh.num_faces() * 2);
    std::size_t used_faces = 0;
    for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
        if (is_degenerate_face(mesh, f)) continue;
        ++used_faces;
        const Face& t = mesh.faces()[f];
        for (int k = 0; k < 3; ++k) {
            const std::uint32_t a = t[k], b = t[(k + 1) % 3];
            Use& u = edges[edge_key(a, b)];
            (a < b ? u.forward : u.backward) += 1;
        }
    }
    if (used_faces == 0) return false;
    return std::all_of(edges.begin(), edges.end(),
                       [](const auto& kv) { return kv.second.forward == 1 && kv.second.backward == 1; });
}

NormalizedMesh normalize_unit_box(const TriangleMesh& mesh) {
    if (mesh.vertices().empty()) throw GeometryError("cannot normalize an empty mesh");
    const Aabb box = bounding_box(mesh);
    const double longest = box.extent().maxCoeff();
    if (!(longest > 0.0)) throw GeometryError("mesh has zero extent");
    NormalizationTransform t{-box.center(), 1.0 / longest};
    return {mesh.transformed([&](const Vec3& p) { return t.apply(p); }), t};
}

Vec3 surface_centroid(const TriangleMesh& mesh) {
    Vec3 acc = Vec3::Zero();
    double total = 0.0;
    for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
        if (is_degenerate_face(mesh, f)) continue;
        const double a = face_area(mesh, f);
        const auto [p, q, r] = mesh.triangle(f);
        acc += a * (p + q + r) / 3.0;
        total += a;
    }
    if (!(total > 0.0)) throw GeometryError("mesh has zero surface area");
    return acc / total;
}

NormalizedMesh normalize_unit_sphere(const TriangleMesh& mesh, CenterMode mode) {
    if (mesh.vertices().empty()) throw GeometryError("cannot normalize an empty mesh");
    Vec3 center = Vec3::Zero();
    if (mode == CenterMode::AreaWeighted) {
        center = surface_centroid(mesh);
    } else {
        for (const Vec3& v : mesh.vertices()) center += v;
        center /= static_cast<double>(mesh.num_vertices());
    }
    double radius = 0.0;
    for (const Vec3& v : mesh.vertices()) radius = std::max(radius, (v - center).norm());
    if (!(radius > 0.0)) throw GeometryError("mesh has zero extent");
    NormalizationTransform t{-center, 1.0 / radius};
    return {mesh.transformed([&](const Vec3& p) { return t.apply(p); }), t};
}

VolumeResult mesh_volume(const TriangleMesh& mesh) {
    // Sum of signed tetrahedra against the bounding-box center; the reference
    // point keeps the terms small.
    VolumeResult r;
    r.watertight = is_watertight(mesh);
    if (mesh.empty()) return r;
    const Vec3 ref = bounding_box(mesh).center();
    double six_v = 0.0;
    for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
        const auto [a, b, c] = mesh.triangle(f);
        six_v += (a - ref).dot((b - ref).cross(c - ref));
    }
    r.volume = std::abs(six_v) / 6.0;
    return r;
}

TriangleMesh merge(const TriangleMesh& a, const TriangleMesh& b) {
    std::vector<Vec3> verts = a.vertices();
    verts.insert(verts.end(), b.vertices().begin(), b.vertices().end());
    std::vector<Face> faces = a.faces();
    const auto off = static_cast<std::uint32_t>(a.num_vertices());
    for (const Face& f : b.faces()) faces.push_back({f[0] + off, f[1] + off, f[2] + off});
    return TriangleMesh(std::move(verts), std::move(faces), a.id());
}

void validate(const ContextMeta& meta) {
    constexpr double half_pi = std::numbers::pi / 2;
    if (!(meta.orientation_theta > -half_pi && meta.orientation_theta <= half_pi)) {
        throw DataError("orientation theta outside (-pi/2, pi/2]");
    }
    if (meta.latitude && (*meta.latitude < -90.0 || *meta.latitude > 90.0)) {
        throw DataError("latitude outside [-90, 90]");
    }
    if (meta.longitude && (*meta.longitude < -180.0 || *meta.longitude > 180.0)) {
        throw DataError("longitude outside [-180, 180]");
    }
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + path.string() + ": " + e.what());
    }
    if (!doc.is_array()) throw DataError("manifest must be a JSON array");
    std::vector<ManifestEntry> out;
    for (const auto& row : doc) {
        if (!row.contains("id") || !row.contains("path")) {
            throw DataError("manifest entry needs id and path");
        }
        ManifestEntry e;
        e.id = row.at("id").get<std::string>();
        e.path = row.at("path").get<std::string>();
        if (row.contains("lat") && !row["lat"].is_null()) e.lat = row["lat"].get<double>();
        if (row.contains("lon") && !row["lon"].is_null()) e.lon = row["lon"].get<double>();
        out.push_back(std::move(e));
    }
    return out;
}

void save_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& e : entries) {
        nlohmann::json row{{"id", e.id}, {"path", e.path}};
        if (e.lat) row["lat"] = *e.lat;
        if (e.lon) row["lon"] = *e.lon;
        doc.push_back(std::move(row));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write manifest " + path.string());
    out << doc.dump(2) << '\n';
}

TriangleMesh make_box(const Vec3& lo, const Vec3& hi, std::string id) {
    std::vector<Vec3> v;
    for (int i = 0; i < 8; ++i) {
        v.emplace_back(i & 1 ? hi.x() : lo.x(), i & 2 ? hi.y() : lo.y(), i & 4 ? hi.z() : lo.z());
    }
    // Outward CCW windings; corner index bits are (x, y, z).
    std::vector<Face> f = {
        {0, 2, 3}, {0, 3, 1},  // z-
        {4, 5, 7}, {4, 7, 6},  // z+
        {0, 1, 5}, {0, 5, 4},  // y-
        {2, 6, 7}, {2, 7, 3},  // y+
        {0, 4, 6}, {0, 6, 2},  // x-
        {1, 3, 7}, {1, 7, 5},  // x+
    };
    return TriangleMesh(std::move(v), std::move(f), std::move(id));
}

TriangleMesh make_icosphere(double radius, int subdivisions, const Vec3& center) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                           {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    for (Vec3& p : v) p.normalize();
    std::vector<Face> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                           {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                           {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                           {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    for (int s = 0; s < subdivisions; ++s) {
        std::unordered_map<std::uint64_t, std::uint32_t> mid;
        auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
            const auto key = edge_key(a, b);
            if (auto it = mid.find(key); it != mid.end()) return it->second;
            v.push_back((v[a] + v[b]).normalized());
            const auto idx = static_cast<std::uint32_t>(v.size() - 1);
            mid.emplace(key, idx);
            return idx;
        };
        std::vector<Face> next;
        next.reserve(f.size() * 4);
        for (const Face& tri : f) {
            const auto a = midpoint(tri[0], tri[1]);
            const auto b = midpoint(tri[1], tri[2]);
            const auto c = midpoint(tri[2], tri[0]);
            next.push_back({tri[0], a, c});
            next.push_back({tri[1], b, a});
            next.push_back({tri[2], c, b});
            next.push_back({a, b, c});
        }
        f = std::move(next);
    }
    for (Vec3& p : v) p = center + radius * p;
    return TriangleMesh(std::move(v), std::move(f), "icosphere");
}

}  // namespace sketchmass

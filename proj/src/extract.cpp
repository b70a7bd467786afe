#include "sketchmass/extract.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "sketchmass/errors.hpp"
#include "sketchmass/file_util.hpp"
#include "sketchmass/parallel.hpp"

namespace sketchmass {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

Vec3 corner_pos(int c) { return Vec3(c & 1, (c >> 1) & 1, (c >> 2) & 1); }

std::array<std::array<std::uint8_t, 2>, 12> make_edges() {
    std::array<std::array<std::uint8_t, 2>, 12> e{};
    for (int a = 0; a < 3; ++a) {
        const int u = (a + 1) % 3, v = (a + 2) % 3;
        for (int m = 0; m < 4; ++m) {
            const int c = ((m & 1) << u) | (((m >> 1) & 1) << v);
            e[a * 4 + m] = {static_cast<std::uint8_t>(c), static_cast<std::uint8_t>(c | (1 << a))};
        }
    }
    return e;
}

int edge_between(int c0, int c1) {
    for (int e = 0; e < 12; ++e) {
        const auto& k = kEdgeCorners[e];
        if ((k[0] == c0 && k[1] == c1) || (k[0] == c1 && k[1] == c0)) return e;
    }
    return -1;
}

bool share_face(int e1, int e2) {
    const auto& a = kEdgeCorners[e1];
    const auto& b = kEdgeCorners[e2];
    // Four corners on one face agree in some coordinate bit.
    const int all_set = a[0] & a[1] & b[0] & b[1];
    const int any_set = a[0] | a[1] | b[0] | b[1];
    return all_set != 0 || any_set != 7;
}

CubeCase build_case(int config) {
    auto inside = [&](int c) { return ((config >> c) & 1) != 0; };
    auto mid = [&](int e) -> Vec3 { return 0.5 * (corner_pos(kEdgeCorners[e][0]) + corner_pos(kEdgeCorners[e][1])); };
    std::array<int, 12> next;
    next.fill(-1);
    auto add_segment = [&](int e1, int e2, const Vec3& toward_inside, const Vec3& normal) {
        const Vec3 t = normal.cross(toward_inside);
        if ((mid(e2) - mid(e1)).dot(t) > 0) next[e1] = e2;
        else next[e2] = e1;
    };
    for (int a = 0; a < 3; ++a) {
        const int u = (a + 1) % 3, v = (a + 2) % 3;
        for (int s = 0; s < 2; ++s) {
            const int base = s << a;
            const std::array<int, 4> cyc{base, base | (1 << u), base | (1 << u) | (1 << v), base | (1 << v)};
            Vec3 normal = Vec3::Zero();
            normal[a] = s ? 1.0 : -1.0;
            std::array<int, 4> edges;
            std::vector<int> crossing;
            for (int k = 0; k < 4; ++k) {
                edges[k] = edge_between(cyc[k], cyc[(k + 1) % 4]);
                if (inside(cyc[k]) != inside(cyc[(k + 1) % 4])) crossing.push_back(k);
            }
            if (crossing.size() == 2) {
                Vec3 ci = Vec3::Zero();
                int n = 0;
                for (int c : cyc) {
                    if (inside(c)) {
                        ci += corner_pos(c);
                        ++n;
                    }
                }
                const int e1 = edges[crossing[0]], e2 = edges[crossing[1]];
                add_segment(e1, e2, ci / n - 0.5 * (mid(e1) + mid(e2)), normal);
            } else if (crossing.size() == 4) {
                // Separate the two inside corners.
                for (int k = 0; k < 4; ++k) {
                    if (!inside(cyc[k])) continue;
                    const int e1 = edges[(k + 3) % 4], e2 = edges[k];
                    add_segment(e1, e2, corner_pos(cyc[k]) - 0.5 * (mid(e1) + mid(e2)), normal);
                }
            }
        }
    }
    CubeCase out;
    std::array<bool, 12> seen{};
    for (int e = 0; e < 12; ++e) {
        if (next[e] < 0 || seen[e]) continue;
        std::vector<int> loop;
        for (int cur = e; !seen[cur]; cur = next[cur]) {
            seen[cur] = true;
            loop.push_back(cur);
        }
        // Fan from a vertex whose diagonals never join two vertices of one
        // cube face; such a diagonal could coincide with one in the
        // neighbouring cell.
        const std::size_t m = loop.size();
        std::size_t start = m;
        for (std::size_t s0 = 0; s0 < m && start == m; ++s0) {
            bool ok = true;
            for (std::size_t i = 2; i + 1 < m && ok; ++i) ok = !share_face(loop[s0], loop[(s0 + i) % m]);
            if (ok) start = s0;
        }
        if (start == m) throw std::logic_error("marching cubes: no valid fan for case " + std::to_string(config));
        for (std::size_t i = 1; i + 1 < m; ++i) {
            out.triangles.push_back({static_cast<std::uint8_t>(loop[start]),
                                     static_cast<std::uint8_t>(loop[(start + i) % m]),
                                     static_cast<std::uint8_t>(loop[(start + i + 1) % m])});
        }
    }
    return out;
}

void format_float(std::string& out, double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, static_cast<float>(v));
    out.append(buf, r.ptr);
}

/// Contents of the bracketed array following `key`.
std::string array_body(const std::string& text, const std::string& key) {
    const auto k = text.find(key);
    if (k == std::string::npos) throw ParseError("usda: missing " + key, 0);
    const auto open = text.find('[', k);
    const auto close = text.find(']', open);
    if (open == std::string::npos || close == std::string::npos) throw ParseError("usda: unterminated " + key, 0);
    return text.substr(open + 1, close - open - 1);
}

std::vector<double> numbers(const std::string& body) {
    std::vector<double> out;
    std::string cleaned = body;
    for (char& ch : cleaned)
        if (ch == ',' || ch == '(' || ch == ')') ch = ' ';
    std::istringstream in(cleaned);
    std::string tok;
    while (in >> tok) {
        double v = 0;
        const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (r.ec != std::errc{} || r.ptr != tok.data() + tok.size()) throw ParseError("usda: bad number '" + tok + "'", 0);
        out.push_back(v);
    }
    return out;
}

}  // namespace

const std::array<std::array<std::uint8_t, 2>, 12> kEdgeCorners = make_edges();

ScalarGrid::ScalarGrid(int res, double pad) : resolution(res), padding(pad) {
    validate();
    values.assign(static_cast<std::size_t>(res) * res * res, 0.0);
}

void ScalarGrid::validate() const {
    if (resolution < 2 || resolution > 256) throw ConfigError("grid resolution must be in [2, 256]");
    if (!(padding >= 0) || !std::isfinite(padding)) throw ConfigError("grid padding must be non-negative");
}

Vec3 ScalarGrid::center(int i, int j, int k) const {
    const double h = voxel_size(), lo = -half_extent();
    return Vec3(lo + (i + 0.5) * h, lo + (j + 0.5) * h, lo + (k + 0.5) * h);
}

std::vector<Vec3> ScalarGrid::centers() const {
    std::vector<Vec3> out;
    out.reserve(values.size());
    for (int k = 0; k < resolution; ++k)
        for (int j = 0; j < resolution; ++j)
            for (int i = 0; i < resolution; ++i) out.push_back(center(i, j, k));
    return out;
}

ScalarGrid to_scalar_grid(const VoxelGrid& grid) {
    ScalarGrid out(grid.resolution(), grid.padding());
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = grid.occupancy()[i] ? 1.0 : 0.0;
    return out;
}

VoxelGrid threshold_grid(const ScalarGrid& grid, double threshold) {
    VoxelGrid out(grid.resolution, grid.padding);
    for (std::size_t i = 0; i < grid.values.size(); ++i) out.occupancy()[i] = grid.values[i] >= threshold ? 1 : 0;
    return out;
}

ScalarGrid eval_grid(const FieldFunction& field, int resolution, double padding, std::size_t chunk, unsigned workers) {
    if (chunk == 0 || chunk > kMaxChunk) throw ConfigError("chunk size must be in [1, 65536]");
    ScalarGrid grid(resolution, padding);
    const auto pts = grid.centers();
    const std::size_t chunks = (pts.size() + chunk - 1) / chunk;
    parallel_for(
        chunks,
        [&](std::size_t c) {
            const std::size_t start = c * chunk, m = std::min(chunk, pts.size() - start);
            field(std::span<const Vec3>(pts).subspan(start, m), std::span<double>(grid.values).subspan(start, m));
        },
        workers);
    return grid;
}

ScalarGrid eval_grid(const OccupancyNetwork& net, const Tensor& c, int resolution, double padding, std::size_t chunk,
                     unsigned workers) {
    if (c.rank() != 2 || c.dim(0) != 1) throw DataError("eval_grid expects a single conditioning row");
    const FieldFunction f = [&](std::span<const Vec3> points, std::span<double> out) {
        const auto logits = decode_points(net, c, points);
        for (std::size_t i = 0; i < points.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-logits[i]));
    };
    return eval_grid(f, resolution, padding, chunk, workers);
}

const std::array<CubeCase, 256>& marching_cubes_table() {
    static const std::array<CubeCase, 256> table = [] {
        std::array<CubeCase, 256> t;
        for (int c = 0; c < 256; ++c) t[c] = build_case(c);
        return t;
    }();
    return table;
}

MarchingCubesResult marching_cubes(const ScalarGrid& grid, double threshold, unsigned workers) {
    grid.validate();
    if (grid.values.size() != static_cast<std::size_t>(grid.resolution) * grid.resolution * grid.resolution)
        throw DataError("grid value count does not match its resolution");
    if (!(threshold > 0 && threshold < 1)) throw ConfigError("iso threshold must lie in (0, 1)");
    const auto& table = marching_cubes_table();
    const int r = grid.resolution;
    const int n = r + 2;  // lattice nodes including the zero border
    auto value = [&](int i, int j, int k) {
        if (i < 1 || j < 1 || k < 1 || i > r || j > r || k > r) return 0.0;
        return grid.at(i - 1, j - 1, k - 1);
    };
    auto edge_id = [&](int i, int j, int k, int axis) {
        return ((static_cast<std::uint64_t>(k) * n + j) * n + i) * 3 + axis;
    };

    // Triangles as global lattice-edge ids, one list per z-slab.
    std::vector<std::vector<std::uint64_t>> slabs(static_cast<std::size_t>(n - 1));
    parallel_for(
        slabs.size(),
        [&](std::size_t ks) {
            const int k = static_cast<int>(ks);
            auto& out = slabs[ks];
            for (int j = 0; j + 1 < n; ++j) {
                for (int i = 0; i + 1 < n; ++i) {
                    int config = 0;
                    for (int c = 0; c < 8; ++c) {
                        if (value(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1)) >= threshold) config |= 1 << c;
                    }
                    if (config == 0 || config == 255) continue;
                    for (const auto& tri : table[config].triangles) {
                        for (std::uint8_t e : tri) {
                            const int c0 = kEdgeCorners[e][0];
                            const int axis = e / 4;
                            out.push_back(edge_id(i + (c0 & 1), j + ((c0 >> 1) & 1), k + ((c0 >> 2) & 1), axis));
                        }
                    }
                }
            }
        },
        workers);

    const double h = grid.voxel_size(), lo = -grid.half_extent();
    auto node_pos = [&](int i, int j, int k) {
        return Vec3(lo + (i - 0.5) * h, lo + (j - 0.5) * h, lo + (k - 0.5) * h);
    };
    std::unordered_map<std::uint64_t, std::uint32_t> ids;
    std::vector<Vec3> vertices;
    std::vector<Face> faces;
    for (const auto& slab : slabs) {
        for (std::size_t t = 0; t < slab.size(); t += 3) {
            Face f{};
            for (int q = 0; q < 3; ++q) {
                const std::uint64_t id = slab[t + q];
                auto [it, fresh] = ids.try_emplace(id, static_cast<std::uint32_t>(vertices.size()));
                if (fresh) {
                    const int axis = static_cast<int>(id % 3);
                    std::uint64_t node = id / 3;
                    const int i = static_cast<int>(node % n);
                    node /= n;
                    const int j = static_cast<int>(node % n);
                    const int k = static_cast<int>(node / n);
                    const int i1 = i + (axis == 0), j1 = j + (axis == 1), k1 = k + (axis == 2);
                    const double v0 = value(i, j, k), v1 = value(i1, j1, k1);
                    // Kept off the lattice nodes so no triangle collapses to zero area.
                    const double s = std::clamp((threshold - v0) / (v1 - v0), 1e-4, 1.0 - 1e-4);
                    vertices.push_back(node_pos(i, j, k) + s * (node_pos(i1, j1, k1) - node_pos(i, j, k)));
                }
                f[q] = it->second;
            }
            faces.push_back(f);
        }
    }
    MarchingCubesResult result;
    result.empty = faces.empty();
    result.mesh = TriangleMesh(std::move(vertices), std::move(faces), "iso");
    return result;
}

std::string usda_string(const TriangleMesh& mesh) {
    std::string s =
        "#usda 1.0\n"
        "(\n"
        "    defaultPrim = \"Mesh\"\n"
        "    metersPerUnit = 1\n"
        "    upAxis = \"Z\"\n"
        ")\n"
        "\n"
        "def Mesh \"Mesh\"\n"
        "{\n"
        "    int[] faceVertexCounts = [";
    for (std::size_t f = 0; f < mesh.num_faces(); ++f) s += f ? ", 3" : "3";
    s += "]\n    int[] faceVertexIndices = [";
    bool first = true;
    for (const auto& f : mesh.faces()) {
        for (auto v : f) {
            if (!first) s += ", ";
            s += std::to_string(v);
            first = false;
        }
    }
    s += "]\n    point3f[] points = [";
    for (std::size_t i = 0; i < mesh.num_vertices(); ++i) {
        const Vec3& p = mesh.vertices()[i];
        s += i ? ", (" : "(";
        format_float(s, p.x());
        s += ", ";
        format_float(s, p.y());
        s += ", ";
        format_float(s, p.z());
        s += ")";
    }
    s += "]\n}\n";
    return s;
}

void export_usda(const std::filesystem::path& path, const TriangleMesh& mesh) { write_file(path, usda_string(mesh)); }

TriangleMesh parse_usda(const std::string& text, std::string id) {
    if (text.rfind("#usda 1.0", 0) != 0) throw ParseError("usda: missing header", 1);
    const auto counts = numbers(array_body(text, "faceVertexCounts"));
    const auto indices = numbers(array_body(text, "faceVertexIndices"));
    const auto coords = numbers(array_body(text, "points"));
    for (double c : counts)
        if (c != 3) throw ParseError("usda: only triangles are supported", 0);
    if (indices.size() != counts.size() * 3 || coords.size() % 3 != 0) throw ParseError("usda: inconsistent arrays", 0);
    std::vector<Vec3> v;
    for (std::size_t i = 0; i < coords.size(); i += 3) {
        v.emplace_back(static_cast<float>(coords[i]), static_cast<float>(coords[i + 1]),
                       static_cast<float>(coords[i + 2]));
    }
    std::vector<Face> f;
    for (std::size_t i = 0; i < indices.size(); i += 3) {
        Face face{};
        for (int q = 0; q < 3; ++q) {
            const double x = indices[i + q];
            if (x < 0 || x >= static_cast<double>(v.size()) || x != std::floor(x))
                throw ParseError("usda: face index out of range", 0);
            face[q] = static_cast<std::uint32_t>(x);
        }
        f.push_back(face);
    }
    return TriangleMesh(std::move(v), std::move(f), std::move(id));
}

TriangleMesh import_usda(const std::filesystem::path& path) {
    return parse_usda(read_file(path), path.stem().string());
}

Reconstruction reconstruct(const OccupancyNetwork& net, const SketchImage& sketch, const std::array<double, 4>& context,
                           const ReconstructOptions& options) {
    Reconstruction r;
    auto t0 = Clock::now();
    const Tensor c = inference_condition(net, {&sketch}, {context});
    r.times.encoding_ms = ms_since(t0);
    t0 = Clock::now();
    r.grid = eval_grid(net, c, options.resolution, options.padding, options.chunk, options.workers);
    r.times.point_evaluation_ms = ms_since(t0);
    t0 = Clock::now();
    auto mc = marching_cubes(r.grid, options.threshold, options.workers);
    r.times.mesh_reconstruction_ms = ms_since(t0);
    r.mesh = std::move(mc.mesh);
    r.empty = mc.empty;
    r.watertight = !r.empty && is_watertight(r.mesh);
    return r;
}

nlohmann::ordered_json reconstruction_report(const Reconstruction& r) {
    nlohmann::ordered_json j;
    j["stage_ms"]["encoding"] = r.times.encoding_ms;
    j["stage_ms"]["point_evaluation"] = r.times.point_evaluation_ms;
    j["stage_ms"]["mesh_reconstruction"] = r.times.mesh_reconstruction_ms;
    j["vertices"] = r.mesh.num_vertices();
    j["faces"] = r.mesh.num_faces();
    j["watertight"] = r.watertight;
    j["empty"] = r.empty;
    return j;
}

}  // namespace sketchmass

#include "sketchmass/toygen.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "sketchmass/alignment.hpp"
#include "sketchmass/errors.hpp"
#include "sketchmass/file_util.hpp"
#include "sketchmass/rng.hpp"

namespace sketchmass {

namespace {

using Tri = std::array<std::uint32_t, 3>;

double cross2(const Vec2& a, const Vec2& b, const Vec2& c) {
    return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

double polygon_area(std::span<const Vec2> p) {
    double a = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Vec2& u = p[i];
        const Vec2& v = p[(i + 1) % p.size()];
        a += u.x() * v.y() - v.x() * u.y();
    }
    return 0.5 * a;
}

std::vector<Vec2> rect(double w, double d, double cx = 0, double cy = 0) {
    return {{cx - w / 2, cy - d / 2}, {cx + w / 2, cy - d / 2}, {cx + w / 2, cy + d / 2}, {cx - w / 2, cy + d / 2}};
}

/// Incremental mesh assembly from rings of vertices at given heights.
struct Builder {
    std::vector<Vec3> v;
    std::vector<Face> f;

    std::uint32_t ring(std::span<const Vec2> poly, double z) {
        const auto base = static_cast<std::uint32_t>(v.size());
        for (const auto& p : poly) v.emplace_back(p.x(), p.y(), z);
        return base;
    }
    // Walls between two rings of equal size; outward for CCW rings when
    // `lower` sits below `upper`.
    void walls(std::uint32_t lower, std::uint32_t upper, std::uint32_t n, bool flip) {
        for (std::uint32_t i = 0; i < n; ++i) {
            const std::uint32_t j = (i + 1) % n;
            if (!flip) {
                f.push_back({lower + i, lower + j, upper + j});
                f.push_back({lower + i, upper + j, upper + i});
            } else {
                f.push_back({lower + i, upper + j, lower + j});
                f.push_back({lower + i, upper + i, upper + j});
            }
        }
    }
    void cap(std::uint32_t base, std::span<const Vec2> poly, bool up) {
        for (const auto& t : triangulate_polygon(poly)) {
            if (up) f.push_back({base + t[0], base + t[1], base + t[2]});
            else f.push_back({base + t[0], base + t[2], base + t[1]});
        }
    }
    // Band between an outer and an inner ring with matching corner counts.
    void band(std::uint32_t outer, std::uint32_t inner, std::uint32_t n, bool up) {
        for (std::uint32_t i = 0; i < n; ++i) {
            const std::uint32_t j = (i + 1) % n;
            if (up) {
                f.push_back({outer + i, outer + j, inner + j});
                f.push_back({outer + i, inner + j, inner + i});
            } else {
                f.push_back({outer + i, inner + j, outer + j});
                f.push_back({outer + i, inner + i, inner + j});
            }
        }
    }
};

std::vector<Vec2> l_polygon(const std::vector<double>& fp) {
    const double w = fp[0], d = fp[1], ww = fp[2], wd = fp[3];
    // Full width along the bottom, wing rising on the left.
    std::vector<Vec2> p{{0, 0}, {w, 0}, {w, wd}, {ww, wd}, {ww, d}, {0, d}};
    for (auto& q : p) q -= Vec2(w / 2, d / 2);
    return p;
}

std::vector<Vec2> u_polygon(const std::vector<double>& fp) {
    const double w = fp[0], d = fp[1], a = fp[2], b = fp[3];
    std::vector<Vec2> p{{0, 0}, {w, 0}, {w, d}, {w - a, d}, {w - a, b}, {a, b}, {a, d}, {0, d}};
    for (auto& q : p) q -= Vec2(w / 2, d / 2);
    return p;
}

std::size_t expected_params(ToyFamily f) {
    switch (f) {
        case ToyFamily::Box: return 2;
        case ToyFamily::TowerSetback: return 5;
        default: return 4;
    }
}

}  // namespace

std::string family_name(ToyFamily f) {
    switch (f) {
        case ToyFamily::Box: return "box";
        case ToyFamily::LShape: return "l-shape";
        case ToyFamily::UShape: return "u-shape";
        case ToyFamily::TowerSetback: return "tower-setback";
        case ToyFamily::Courtyard: return "courtyard";
    }
    return "box";
}

ToyFamily parse_family(const std::string& name) {
    for (ToyFamily f : all_families())
        if (family_name(f) == name) return f;
    throw ConfigError("unknown toy family '" + name + "'");
}

const std::vector<ToyFamily>& all_families() {
    static const std::vector<ToyFamily> f{ToyFamily::Box, ToyFamily::LShape, ToyFamily::UShape,
                                          ToyFamily::TowerSetback, ToyFamily::Courtyard};
    return f;
}

void ToyShapeSpec::validate() const {
    if (footprint.size() != expected_params(family))
        throw ConfigError(family_name(family) + " needs " + std::to_string(expected_params(family)) +
                          " footprint values");
    for (double x : footprint)
        if (!(x > 0) || !std::isfinite(x)) throw ConfigError("footprint extents must be positive");
    if (!(height > 0) || !std::isfinite(height) || !std::isfinite(yaw)) throw ConfigError("invalid height or yaw");
    const double w = footprint[0], d = footprint[1];
    switch (family) {
        case ToyFamily::Box: break;
        case ToyFamily::LShape:
            if (!(footprint[2] < w && footprint[3] < d)) throw ConfigError("l-shape wing must be narrower than the body");
            break;
        case ToyFamily::UShape:
            if (!(2 * footprint[2] < w && footprint[3] < d)) throw ConfigError("u-shape arms overlap");
            break;
        case ToyFamily::TowerSetback:
            if (!(footprint[2] < w && footprint[3] < d)) throw ConfigError("tower must sit strictly inside the base");
            break;
        case ToyFamily::Courtyard:
            if (!(footprint[2] < w && footprint[3] < d))
                throw ConfigError("courtyard must lie strictly inside the outer footprint");
            break;
    }
}

std::vector<std::array<std::uint32_t, 3>> triangulate_polygon(std::span<const Vec2> polygon) {
    const std::size_t n = polygon.size();
    if (n < 3) throw GeometryError("polygon needs at least 3 vertices");
    if (polygon_area(polygon) <= 0) throw GeometryError("polygon must be counter-clockwise");
    std::vector<std::uint32_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::uint32_t>(i);
    std::vector<Tri> out;
    while (idx.size() > 3) {
        bool clipped = false;
        const std::size_t m = idx.size();
        for (std::size_t i = 0; i < m && !clipped; ++i) {
            const std::uint32_t a = idx[(i + m - 1) % m], b = idx[i], c = idx[(i + 1) % m];
            if (cross2(polygon[a], polygon[b], polygon[c]) <= 1e-15) continue;
            bool empty = true;
            for (std::uint32_t q : idx) {
                if (q == a || q == b || q == c) continue;
                const Vec2& p = polygon[q];
                if (cross2(polygon[a], polygon[b], p) >= 0 && cross2(polygon[b], polygon[c], p) >= 0 &&
                    cross2(polygon[c], polygon[a], p) >= 0) {
                    empty = false;
                    break;
                }
            }
            if (!empty) continue;
            out.push_back({a, b, c});
            idx.erase(idx.begin() + static_cast<std::ptrdiff_t>(i));
            clipped = true;
        }
        if (!clipped) throw GeometryError("polygon is not simple");
    }
    out.push_back({idx[0], idx[1], idx[2]});
    return out;
}

TriangleMesh extrude_polygon(std::span<const Vec2> polygon, double z0, double z1, std::string id) {
    Builder b;
    const auto n = static_cast<std::uint32_t>(polygon.size());
    const auto lo = b.ring(polygon, z0), hi = b.ring(polygon, z1);
    b.cap(lo, polygon, false);
    b.cap(hi, polygon, true);
    b.walls(lo, hi, n, false);
    return TriangleMesh(std::move(b.v), std::move(b.f), std::move(id));
}

TriangleMesh build_toy(const ToyShapeSpec& spec, std::string id) {
    spec.validate();
    const auto& fp = spec.footprint;
    const double h = spec.height;
    TriangleMesh mesh;
    switch (spec.family) {
        case ToyFamily::Box: mesh = extrude_polygon(rect(fp[0], fp[1]), 0, h, id); break;
        case ToyFamily::LShape: mesh = extrude_polygon(l_polygon(fp), 0, h, id); break;
        case ToyFamily::UShape: mesh = extrude_polygon(u_polygon(fp), 0, h, id); break;
        case ToyFamily::TowerSetback: {
            // Base slab at 40% of the height, tower centred on the base.
            const double hb = 0.4 * h;
            const auto outer = rect(fp[0], fp[1]), tower = rect(fp[2], fp[3]);
            Builder b;
            const auto o0 = b.ring(outer, 0), o1 = b.ring(outer, hb);
            const auto t1 = b.ring(tower, hb), t2 = b.ring(tower, hb + fp[4]);
            b.cap(o0, outer, false);
            b.walls(o0, o1, 4, false);
            b.band(o1, t1, 4, true);
            b.walls(t1, t2, 4, false);
            b.cap(t2, tower, true);
            mesh = TriangleMesh(std::move(b.v), std::move(b.f), id);
            break;
        }
        case ToyFamily::Courtyard: {
            const auto outer = rect(fp[0], fp[1]), inner = rect(fp[2], fp[3]);
            Builder b;
            const auto o0 = b.ring(outer, 0), o1 = b.ring(outer, h);
            const auto i0 = b.ring(inner, 0), i1 = b.ring(inner, h);
            b.band(o0, i0, 4, false);
            b.band(o1, i1, 4, true);
            b.walls(o0, o1, 4, false);
            b.walls(i0, i1, 4, true);
            mesh = TriangleMesh(std::move(b.v), std::move(b.f), id);
            break;
        }
    }
    if (spec.yaw == 0.0) return mesh;
    TriangleMesh rotated = rotate_z(mesh, spec.yaw);
    return TriangleMesh(rotated.vertices(), rotated.faces(), std::move(id));
}

double toy_volume(const ToyShapeSpec& spec) {
    spec.validate();
    const auto& fp = spec.footprint;
    switch (spec.family) {
        case ToyFamily::Box: return fp[0] * fp[1] * spec.height;
        case ToyFamily::LShape: return polygon_area(l_polygon(fp)) * spec.height;
        case ToyFamily::UShape: return polygon_area(u_polygon(fp)) * spec.height;
        case ToyFamily::TowerSetback: return fp[0] * fp[1] * 0.4 * spec.height + fp[2] * fp[3] * fp[4];
        case ToyFamily::Courtyard: return (fp[0] * fp[1] - fp[2] * fp[3]) * spec.height;
    }
    return 0.0;
}

ToyShapeSpec random_toy_spec(ToyFamily family, std::uint64_t seed, std::uint64_t index) {
    RngStream r(CounterRng(seed, "", "toygen").fork(index));
    auto u = [&](double lo, double hi) { return lo + (hi - lo) * r.uniform(); };
    ToyShapeSpec s;
    s.family = family;
    const double w = u(1.0, 1.6);
    const double d = w / u(1.3, 2.2);
    s.height = u(0.35, 0.9);
    switch (family) {
        case ToyFamily::Box: s.footprint = {w, d}; break;
        case ToyFamily::LShape: s.footprint = {w, d, w * u(0.3, 0.5), d * u(0.35, 0.6)}; break;
        case ToyFamily::UShape: s.footprint = {w, d, w * u(0.2, 0.32), d * u(0.3, 0.55)}; break;
        case ToyFamily::TowerSetback:
            s.footprint = {w, d, w * u(0.35, 0.6), d * u(0.4, 0.7), s.height * u(0.8, 1.6)};
            break;
        case ToyFamily::Courtyard: s.footprint = {w, d, w * u(0.35, 0.6), d * u(0.3, 0.55)}; break;
    }
    s.yaw = u(-std::numbers::pi, std::numbers::pi);
    return s;
}

std::vector<ToyShape> toygen(std::size_t count, std::span<const ToyFamily> families, std::uint64_t seed) {
    if (count == 0) throw ConfigError("toygen count must be at least 1");
    if (families.empty()) throw ConfigError("toygen needs at least one family");
    std::vector<ToyShape> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        ToyShape t;
        const ToyFamily fam = families[i % families.size()];
        char buf[64];
        std::snprintf(buf, sizeof buf, "toy_%04zu_%s", i, family_name(fam).c_str());
        t.id = buf;
        t.spec = random_toy_spec(fam, seed, i);
        t.mesh = build_toy(t.spec, t.id);
        if (!is_watertight(t.mesh)) throw GeometryError("generated mesh " + t.id + " is not watertight");
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<ManifestEntry> write_toy_dataset(const std::filesystem::path& dir, const std::vector<ToyShape>& shapes) {
    std::filesystem::create_directories(dir / "meshes");
    std::vector<ManifestEntry> entries;
    nlohmann::ordered_json specs = nlohmann::ordered_json::array();
    for (const auto& s : shapes) {
        const std::string rel = "meshes/" + s.id + ".obj";
        save_obj(dir / rel, s.mesh);
        entries.push_back({s.id, rel, std::nullopt, std::nullopt});
        nlohmann::ordered_json row;
        row["id"] = s.id;
        row["family"] = family_name(s.spec.family);
        row["footprint"] = s.spec.footprint;
        row["height"] = s.spec.height;
        row["yaw"] = s.spec.yaw;
        row["checksum"] = file_checksum(dir / rel);
        specs.push_back(std::move(row));
    }
    save_manifest(dir / "manifest.json", entries);
    write_file(dir / "toyspecs.json", specs.dump(2) + "\n");
    return entries;
}

}  // namespace sketchmass

#include "sketchmass/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "sketchmass/errors.hpp"
#include "sketchmass/file_util.hpp"
#include "sketchmass/parallel.hpp"

namespace sketchmass {

namespace {

constexpr double kNear = 1e-9;
constexpr double kDeg = std::numbers::pi / 180.0;

struct DepthBuffer {
    int width, height;
    std::vector<double> depth;
    std::vector<std::int32_t> face;

    DepthBuffer(int w, int h)
        : width(w), height(h), depth(static_cast<std::size_t>(w) * h, std::numeric_limits<double>::infinity()),
          face(static_cast<std::size_t>(w) * h, -1) {}

    std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
};

std::vector<Projection> project_all(const TriangleMesh& mesh, const CameraIntrinsics& intr,
                                    const CameraExtrinsics& extr) {
    std::vector<Projection> out(mesh.num_vertices());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = project_vertex(mesh.vertex(i), intr, extr);
    return out;
}

double edge_fn(double ax, double ay, double bx, double by, double px, double py) {
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

DepthBuffer rasterize_faces(const TriangleMesh& mesh, const std::vector<Projection>& proj,
                            const CameraIntrinsics& intr) {
    DepthBuffer buf(intr.width, intr.height);
    for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
        const Face& t = mesh.faces()[f];
        const Projection& a = proj[t[0]];
        const Projection& b = proj[t[1]];
        const Projection& c = proj[t[2]];
        if (a.behind || b.behind || c.behind) continue;
        const double area = edge_fn(a.u, a.v, b.u, b.v, c.u, c.v);
        if (std::abs(area) < 1e-12) continue;
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.u, b.u, c.u}))));
        const int x1 = std::min(intr.width - 1, static_cast<int>(std::floor(std::max({a.u, b.u, c.u}))));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.v, b.v, c.v}))));
        const int y1 = std::min(intr.height - 1, static_cast<int>(std::floor(std::max({a.v, b.v, c.v}))));
        for (int y = y0; y <= y1; ++y) {
            const double py = y + 0.5;
            for (int x = x0; x <= x1; ++x) {
                const double px = x + 0.5;
                const double w0 = edge_fn(b.u, b.v, c.u, c.v, px, py) / area;
                const double w1 = edge_fn(c.u, c.v, a.u, a.v, px, py) / area;
                const double w2 = 1.0 - w0 - w1;
                if (w0 < 0 || w1 < 0 || w2 < 0) continue;
                const double z = 1.0 / (w0 / a.depth + w1 / b.depth + w2 / c.depth);
                const std::size_t i = buf.idx(x, y);
                if (z < buf.depth[i]) {
                    buf.depth[i] = z;
                    buf.face[i] = static_cast<std::int32_t>(f);
                }
            }
        }
    }
    return buf;
}

// Liang-Barsky clip of the segment to [0,w]x[0,h]; false if nothing remains.
bool clip_segment(double& u0, double& v0, double& u1, double& v1, double w, double h, double& t0, double& t1) {
    t0 = 0.0;
    t1 = 1.0;
    const double du = u1 - u0, dv = v1 - v0;
    const double p[4] = {-du, du, -dv, dv};
    const double q[4] = {u0, w - u0, v0, h - v0};
    for (int k = 0; k < 4; ++k) {
        if (p[k] == 0.0) {
            if (q[k] < 0) return false;
            continue;
        }
        const double r = q[k] / p[k];
        if (p[k] < 0) t0 = std::max(t0, r);
        else t1 = std::min(t1, r);
    }
    if (t0 > t1) return false;
    const double su = u0, sv = v0;
    u0 = su + t0 * du;
    v0 = sv + t0 * dv;
    u1 = su + t1 * du;
    v1 = sv + t1 * dv;
    return true;
}

// Visits the pixels covered by the segment, passing each pixel and the
// inverse depth interpolated at its sample point.
template <class Fn>
void walk_edge(const Projection& a, const Projection& b, int width, int height, Fn&& fn) {
    if (a.behind || b.behind) return;
    double u0 = a.u, v0 = a.v, u1 = b.u, v1 = b.v, t0, t1;
    if (!clip_segment(u0, v0, u1, v1, width, height, t0, t1)) return;
    const double iz0 = 1.0 / a.depth, iz1 = 1.0 / b.depth;
    const int steps = std::max(1, static_cast<int>(std::ceil(std::max(std::abs(u1 - u0), std::abs(v1 - v0)))));
    int last_x = -1, last_y = -1;
    for (int k = 0; k <= steps; ++k) {
        const double s = static_cast<double>(k) / steps;
        const double u = u0 + s * (u1 - u0), v = v0 + s * (v1 - v0);
        const int x = std::min(width - 1, static_cast<int>(std::floor(u)));
        const int y = std::min(height - 1, static_cast<int>(std::floor(v)));
        if (x == last_x && y == last_y) continue;
        last_x = x;
        last_y = y;
        const double t = t0 + s * (t1 - t0);
        fn(x, y, (1.0 - t) * iz0 + t * iz1);
    }
}

double depth_range(const std::vector<Projection>& proj) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& p : proj) {
        if (p.behind) continue;
        lo = std::min(lo, p.depth);
        hi = std::max(hi, p.depth);
    }
    return hi > lo ? hi - lo : 0.0;
}

struct Scene {
    std::vector<Projection> proj;
    DepthBuffer buffer;
    double bias;
};

Scene build_scene(const TriangleMesh& mesh, const CameraIntrinsics& intr, const CameraExtrinsics& extr,
                  const RenderOptions& options) {
    auto proj = project_all(mesh, intr, extr);
    auto buffer = rasterize_faces(mesh, proj, intr);
    const double bias = options.depth_bias * depth_range(proj);
    return {std::move(proj), std::move(buffer), bias};
}

bool pixel_visible(const Scene& s, const FeatureEdge& e, int x, int y, double inv_depth) {
    const std::size_t i = s.buffer.idx(x, y);
    const std::int32_t f = s.buffer.face[i];
    if (f < 0) return true;
    if (static_cast<std::uint32_t>(f) == e.face0 || static_cast<std::uint32_t>(f) == e.face1) return true;
    return 1.0 / inv_depth <= s.buffer.depth[i] + s.bias;
}

}  // namespace

void CameraIntrinsics::validate() const {
    if (!(focal > 0) || !std::isfinite(focal)) throw ConfigError("focal length must be positive");
    if (width <= 0 || height <= 0) throw ConfigError("image size must be positive");
    if (!(principal.x() >= 0 && principal.x() <= width && principal.y() >= 0 && principal.y() <= height))
        throw ConfigError("principal point outside the image");
}

void CameraExtrinsics::validate() const {
    if (((rotation.transpose() * rotation) - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9 ||
        std::abs(rotation.determinant() - 1.0) > 1e-9)
        throw DataError("camera rotation is not a proper rotation");
    if (!translation.allFinite()) throw DataError("camera translation is not finite");
}

double default_focal(double radius, double fill) {
    if (!(radius > 1.0)) throw ConfigError("camera radius must exceed 1");
    return fill * (kSketchSize / 2.0) * std::sqrt(radius * radius - 1.0);
}

Camera look_at_camera(const Vec3& eye, const Vec3& target, const Vec3& up, const CameraIntrinsics& intr) {
    const Vec3 forward = (target - eye).normalized();
    const Vec3 right_raw = forward.cross(up);
    if (right_raw.norm() < 1e-12) throw ConfigError("look-at direction parallel to up vector");
    const Vec3 right = right_raw.normalized();
    const Vec3 down = forward.cross(right);
    Camera cam;
    cam.intrinsics = intr;
    cam.extrinsics.rotation.row(0) = right;
    cam.extrinsics.rotation.row(1) = down;
    cam.extrinsics.rotation.row(2) = forward;
    cam.extrinsics.translation = -cam.extrinsics.rotation * eye;
    cam.radius = (eye - target).norm();
    return cam;
}

std::vector<Camera> orbit_cameras(const OrbitConfig& config) {
    if (config.count <= 0) throw ConfigError("camera count must be positive");
    if (!(config.radius > 1.0)) throw ConfigError("camera radius must exceed 1");
    if (!(std::abs(config.elevation_deg) < 90.0)) throw ConfigError("elevation must lie in (-90, 90) degrees");
    CameraIntrinsics intr;
    intr.focal = default_focal(config.radius, config.fill);
    std::vector<Camera> out;
    out.reserve(config.count);
    const double el = config.elevation_deg * kDeg;
    for (int k = 0; k < config.count; ++k) {
        const double az_deg = config.start_azimuth_deg + 360.0 * k / config.count;
        const double az = az_deg * kDeg;
        const Vec3 eye = config.radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
        Camera cam = look_at_camera(eye, Vec3::Zero(), Vec3::UnitZ(), intr);
        cam.azimuth_deg = az_deg;
        cam.elevation_deg = config.elevation_deg;
        cam.radius = config.radius;
        out.push_back(cam);
    }
    return out;
}

Projection project_vertex(const Vec3& point, const CameraIntrinsics& intr, const CameraExtrinsics& extr) {
    const Vec3 pc = extr.rotation * point + extr.translation;
    Projection p;
    p.depth = pc.z();
    if (pc.z() <= kNear) {
        p.behind = true;
        return p;
    }
    p.u = intr.focal * pc.x() / pc.z() + intr.principal.x();
    p.v = intr.focal * pc.y() / pc.z() + intr.principal.y();
    return p;
}

std::vector<FeatureEdge> extract_feature_edges(const TriangleMesh& mesh, const CameraExtrinsics& extr,
                                               double crease_deg) {
    struct Half {
        std::uint32_t a, b, face;
    };
    std::vector<Half> halves;
    halves.reserve(mesh.num_faces() * 3);
    for (std::uint32_t f = 0; f < mesh.num_faces(); ++f) {
        const Face& t = mesh.faces()[f];
        for (int k = 0; k < 3; ++k) {
            const std::uint32_t a = t[k], b = t[(k + 1) % 3];
            halves.push_back({std::min(a, b), std::max(a, b), f});
        }
    }
    std::sort(halves.begin(), halves.end(), [](const Half& x, const Half& y) {
        return std::tie(x.a, x.b, x.face) < std::tie(y.a, y.b, y.face);
    });

    const Vec3 eye = extr.center();
    const double cos_thresh = std::cos(crease_deg * kDeg);
    auto front = [&](std::uint32_t f) {
        return face_cross(mesh, f).dot(eye - mesh.vertex(mesh.faces()[f][0])) > 0;
    };

    std::vector<FeatureEdge> out;
    for (std::size_t i = 0; i < halves.size();) {
        std::size_t j = i;
        while (j < halves.size() && halves[j].a == halves[i].a && halves[j].b == halves[i].b) ++j;
        FeatureEdge e{halves[i].a, halves[i].b, 0, halves[i].face, halves[i].face};
        if (j - i == 1) {
            e.kinds = static_cast<std::uint8_t>(EdgeKind::Boundary) | static_cast<std::uint8_t>(EdgeKind::Silhouette);
        } else {
            e.face1 = halves[i + 1].face;
            if (front(e.face0) != front(e.face1)) e.kinds |= static_cast<std::uint8_t>(EdgeKind::Silhouette);
            if (j - i > 2) {
                e.kinds |= static_cast<std::uint8_t>(EdgeKind::Crease);
            } else if (!is_degenerate_face(mesh, e.face0) && !is_degenerate_face(mesh, e.face1)) {
                const double c = face_normal(mesh, e.face0).dot(face_normal(mesh, e.face1));
                if (c < cos_thresh) e.kinds |= static_cast<std::uint8_t>(EdgeKind::Crease);
            }
        }
        if (e.kinds != 0) out.push_back(e);
        i = j;
    }
    return out;
}

std::size_t SketchImage::count_black() const {
    return static_cast<std::size_t>(std::count(pixels.begin(), pixels.end(), std::uint8_t{0}));
}

SketchImage render_sketch(const TriangleMesh& mesh, const CameraIntrinsics& intr, const CameraExtrinsics& extr,
                          const RenderOptions& options) {
    SketchImage img;
    img.width = intr.width;
    img.height = intr.height;
    img.pixels.assign(static_cast<std::size_t>(intr.width) * intr.height, 255);
    if (mesh.empty()) return img;
    const Scene scene = build_scene(mesh, intr, extr, options);
    for (const auto& e : extract_feature_edges(mesh, extr, options.crease_deg)) {
        walk_edge(scene.proj[e.a], scene.proj[e.b], intr.width, intr.height, [&](int x, int y, double iz) {
            if (pixel_visible(scene, e, x, y, iz)) img.set(x, y, 0);
        });
    }
    return img;
}

std::vector<FeatureEdge> visible_feature_edges(const TriangleMesh& mesh, const CameraIntrinsics& intr,
                                               const CameraExtrinsics& extr, const RenderOptions& options,
                                               double min_fraction) {
    std::vector<FeatureEdge> out;
    if (mesh.empty()) return out;
    const Scene scene = build_scene(mesh, intr, extr, options);
    for (const auto& e : extract_feature_edges(mesh, extr, options.crease_deg)) {
        std::size_t total = 0, seen = 0;
        walk_edge(scene.proj[e.a], scene.proj[e.b], intr.width, intr.height, [&](int x, int y, double iz) {
            ++total;
            if (pixel_visible(scene, e, x, y, iz)) ++seen;
        });
        if (total > 0 && static_cast<double>(seen) >= min_fraction * total) out.push_back(e);
    }
    return out;
}

SketchImage render_shaded(const TriangleMesh& mesh, const CameraIntrinsics& intr, const CameraExtrinsics& extr) {
    SketchImage img;
    img.width = intr.width;
    img.height = intr.height;
    img.pixels.assign(static_cast<std::size_t>(intr.width) * intr.height, 255);
    if (mesh.empty()) return img;
    const auto proj = project_all(mesh, intr, extr);
    const DepthBuffer buf = rasterize_faces(mesh, proj, intr);
    const Vec3 eye = extr.center();
    std::vector<std::uint8_t> shade(mesh.num_faces(), 255);
    for (std::size_t f = 0; f < mesh.num_faces(); ++f) {
        if (is_degenerate_face(mesh, f)) continue;
        const auto tri = mesh.triangle(f);
        const Vec3 to_eye = (eye - (tri[0] + tri[1] + tri[2]) / 3.0).normalized();
        const double lambert = std::max(0.0, face_normal(mesh, f).dot(to_eye));
        shade[f] = static_cast<std::uint8_t>(std::lround(40.0 + 200.0 * lambert));
    }
    for (std::size_t i = 0; i < buf.face.size(); ++i) {
        if (buf.face[i] >= 0) img.pixels[i] = shade[buf.face[i]];
    }
    return img;
}

std::vector<SketchImage> render_views(const TriangleMesh& mesh, const std::vector<Camera>& cameras,
                                      const RenderOptions& options, unsigned workers) {
    std::vector<SketchImage> out(cameras.size());
    parallel_for(
        cameras.size(),
        [&](std::size_t i) { out[i] = render_sketch(mesh, cameras[i].intrinsics, cameras[i].extrinsics, options); },
        workers);
    return out;
}

std::string encode_pgm(const SketchImage& image) {
    std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
    return out;
}

SketchImage decode_pgm(const std::string& bytes) {
    std::size_t pos = 0;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&] {
        skip_space();
        const std::size_t begin = pos;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
        if (begin == pos || pos - begin > 9) throw DataError("malformed PGM header");
        return std::stoi(bytes.substr(begin, pos - begin));
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw DataError("not a binary PGM (P5)");
    pos = 2;
    const int w = read_int(), h = read_int(), maxval = read_int();
    if (maxval != 255) throw DataError("PGM maxval must be 255");
    if (w != kSketchSize || h != kSketchSize) throw DataError("sketch images must be 224x224");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
        throw DataError("malformed PGM header");
    ++pos;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    if (bytes.size() - pos != n) throw DataError("PGM payload size mismatch");
    SketchImage img;
    img.width = w;
    img.height = h;
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
    return img;
}

void write_pgm(const SketchImage& image, const std::filesystem::path& path) { write_file(path, encode_pgm(image)); }

SketchImage read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }

nlohmann::json cameras_to_json(const std::vector<Camera>& cameras) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : cameras) {
        std::vector<double> r(9), t(3);
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) r[i * 3 + j] = c.extrinsics.rotation(i, j);
            t[i] = c.extrinsics.translation[i];
        }
        arr.push_back({{"azimuth_deg", c.azimuth_deg},
                       {"elevation_deg", c.elevation_deg},
                       {"radius", c.radius},
                       {"K", {c.intrinsics.focal, c.intrinsics.principal.x(), c.intrinsics.principal.y()}},
                       {"R", r},
                       {"T", t}});
    }
    return arr;
}

std::vector<Camera> cameras_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw DataError("camera file must be a JSON array");
    std::vector<Camera> out;
    try {
        for (const auto& e : j) {
            Camera c;
            c.azimuth_deg = e.at("azimuth_deg").get<double>();
            c.elevation_deg = e.at("elevation_deg").get<double>();
            c.radius = e.at("radius").get<double>();
            const auto k = e.at("K").get<std::vector<double>>();
            const auto r = e.at("R").get<std::vector<double>>();
            const auto t = e.at("T").get<std::vector<double>>();
            if (k.size() != 3 || r.size() != 9 || t.size() != 3) throw DataError("camera entry has wrong sizes");
            c.intrinsics.focal = k[0];
            c.intrinsics.principal = Vec2(k[1], k[2]);
            for (int i = 0; i < 3; ++i) {
                for (int jj = 0; jj < 3; ++jj) c.extrinsics.rotation(i, jj) = r[i * 3 + jj];
                c.extrinsics.translation[i] = t[i];
            }
            c.intrinsics.validate();
            c.extrinsics.validate();
            out.push_back(c);
        }
    } catch (const ConfigError& ex) {
        throw DataError(std::string("invalid camera: ") + ex.what());
    } catch (const nlohmann::json::exception& ex) {
        throw DataError(std::string("malformed camera file: ") + ex.what());
    }
    return out;
}

}  // namespace sketchmass

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "sketchmass/geometry.hpp"

namespace sketchmass {

inline constexpr int kSketchSize = 224;

struct CameraIntrinsics {
    double focal = 1.0;
    Vec2 principal{kSketchSize / 2.0, kSketchSize / 2.0};
    int width = kSketchSize;
    int height = kSketchSize;

    void validate() const;
};

/// World to camera: x_cam = rotation * x_world + translation. Camera axes
/// are x right, y down, z forward.
struct CameraExtrinsics {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 center() const { return -rotation.transpose() * translation; }
    void validate() const;
};

struct Camera {
    CameraIntrinsics intrinsics;
    CameraExtrinsics extrinsics;
    double azimuth_deg = 0.0;
    double elevation_deg = 0.0;
    double radius = 0.0;
};

struct OrbitConfig {
    int count = 24;
    double elevation_deg = 30.0;
    double radius = 2.0;
    double start_azimuth_deg = 0.0;
    /// Projected radius of the unit sphere as a fraction of half the image.
    double fill = 0.8;
};

/// Focal length at which the unit sphere seen from `radius` spans
/// `fill` of the image.
double default_focal(double radius, double fill = 0.8);

Camera look_at_camera(const Vec3& eye, const Vec3& target, const Vec3& up, const CameraIntrinsics& intr);

std::vector<Camera> orbit_cameras(const OrbitConfig& config);

struct Projection {
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0;
    bool behind = false;
};

Projection project_vertex(const Vec3& point, const CameraIntrinsics& intr, const CameraExtrinsics& extr);

enum class EdgeKind : std::uint8_t { Silhouette = 1, Crease = 2, Boundary = 4 };

struct FeatureEdge {
    std::uint32_t a = 0;
    std::uint32_t b = 0;
    std::uint8_t kinds = 0;  // bit set of EdgeKind
    std::uint32_t face0 = 0;
    std::uint32_t face1 = 0;  // equals face0 for boundary edges

    bool is(EdgeKind k) const { return (kinds & static_cast<std::uint8_t>(k)) != 0; }
};

/// Silhouette edges separate front- and back-facing faces as seen from the
/// camera center; crease edges have a dihedral angle above the threshold.
std::vector<FeatureEdge> extract_feature_edges(const TriangleMesh& mesh, const CameraExtrinsics& extr,
                                               double crease_deg = 30.0);

/// 8-bit grayscale image, 255 background.
struct SketchImage {
    int width = kSketchSize;
    int height = kSketchSize;
    std::vector<std::uint8_t> pixels = std::vector<std::uint8_t>(kSketchSize * kSketchSize, 255);

    std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    void set(int x, int y, std::uint8_t v) { pixels[static_cast<std::size_t>(y) * width + x] = v; }
    std::size_t count_black() const;
};

struct RenderOptions {
    double crease_deg = 30.0;
    /// Depth bias as a fraction of the scene depth range.
    double depth_bias = 1e-3;
};

SketchImage render_sketch(const TriangleMesh& mesh, const CameraIntrinsics& intr, const CameraExtrinsics& extr,
                          const RenderOptions& options = {});

/// Lambertian companion image lit from the camera center.
SketchImage render_shaded(const TriangleMesh& mesh, const CameraIntrinsics& intr, const CameraExtrinsics& extr);

/// Feature edges with at least `min_fraction` of their pixels passing the
/// hidden-line test.
std::vector<FeatureEdge> visible_feature_edges(const TriangleMesh& mesh, const CameraIntrinsics& intr,
                                               const CameraExtrinsics& extr, const RenderOptions& options = {},
                                               double min_fraction = 0.5);

std::vector<SketchImage> render_views(const TriangleMesh& mesh, const std::vector<Camera>& cameras,
                                      const RenderOptions& options = {}, unsigned workers = 1);

std::string encode_pgm(const SketchImage& image);
SketchImage decode_pgm(const std::string& bytes);
void write_pgm(const SketchImage& image, const std::filesystem::path& path);
SketchImage read_pgm(const std::filesystem::path& path);

nlohmann::json cameras_to_json(const std::vector<Camera>& cameras);
std::vector<Camera> cameras_from_json(const nlohmann::json& j);

}  // namespace sketchmass

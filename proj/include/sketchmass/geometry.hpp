#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace sketchmass {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Face = std::array<std::uint32_t, 3>;

struct Aabb {
    Vec3 min;
    Vec3 max;

    Vec3 center() const { return 0.5 * (min + max); }
    Vec3 extent() const { return max - min; }
};

/// Indexed triangle mesh. Immutable once constructed; the constructor
/// validates face indices and rejects faces that repeat a vertex.
/// Faces wind counter-clockwise when seen from outside.
class TriangleMesh {
public:
    TriangleMesh() = default;
    TriangleMesh(std::vector<Vec3> vertices, std::vector<Face> faces, std::string id = {});

    const std::vector<Vec3>& vertices() const noexcept { return vertices_; }
    const std::vector<Face>& faces() const noexcept { return faces_; }
    const std::string& id() const noexcept { return id_; }

    bool empty() const noexcept { return faces_.empty(); }
    std::size_t num_vertices() const noexcept { return vertices_.size(); }
    std::size_t num_faces() const noexcept { return faces_.size(); }

    const Vec3& vertex(std::uint32_t i) const { return vertices_[i]; }
    std::array<Vec3, 3> triangle(std::size_t f) const {
        const Face& t = faces_[f];
        return {vertices_[t[0]], vertices_[t[1]], vertices_[t[2]]};
    }

    /// Same topology, vertices mapped through `fn`.
    TriangleMesh transformed(const std::function<Vec3(const Vec3&)>& fn) const;
    TriangleMesh with_id(std::string id) const;

private:
    std::vector<Vec3> vertices_;
    std::vector<Face> faces_;
    std::string id_;
};

/// Maps a point p to scale * (p + translation).
struct NormalizationTransform {
    Vec3 translation = Vec3::Zero();
    double scale = 1.0;

    Vec3 apply(const Vec3& p) const { return scale * (p + translation); }
    Vec3 invert(const Vec3& q) const { return q / scale - translation; }
};

struct NormalizedMesh {
    TriangleMesh mesh;
    NormalizationTransform transform;
};

enum class CenterMode { AreaWeighted, VertexMean };

struct VolumeResult {
    double volume = 0.0;
    bool watertight = false;
};

// Triangle helpers. Zero-area faces count as degenerate.
Vec3 face_cross(const TriangleMesh& mesh, std::size_t f);
double face_area(const TriangleMesh& mesh, std::size_t f);
Vec3 face_normal(const TriangleMesh& mesh, std::size_t f);
bool is_degenerate_face(const TriangleMesh& mesh, std::size_t f);
double surface_area(const TriangleMesh& mesh);
Aabb bounding_box(const TriangleMesh& mesh);

TriangleMesh parse_obj(std::istream& in, std::string id = {});
TriangleMesh load_obj(const std::filesystem::path& path);
void write_obj(std::ostream& out, const TriangleMesh& mesh);
void save_obj(const std::filesystem::path& path, const TriangleMesh& mesh);

/// Every undirected edge of a non-degenerate face is used by exactly two
/// such faces, once in each direction.
bool is_watertight(const TriangleMesh& mesh);

/// Centers the bounding box at the origin and scales its longest edge to 1.
NormalizedMesh normalize_unit_box(const TriangleMesh& mesh);

/// Centers the surface barycenter at the origin and scales the farthest
/// vertex to distance 1.
NormalizedMesh normalize_unit_sphere(const TriangleMesh& mesh,
                                     CenterMode mode = CenterMode::AreaWeighted);

Vec3 surface_centroid(const TriangleMesh& mesh);

/// Divergence-theorem volume, absolute value. `watertight` reports whether
/// the result is meaningful.
VolumeResult mesh_volume(const TriangleMesh& mesh);

/// Disjoint union of two meshes.
TriangleMesh merge(const TriangleMesh& a, const TriangleMesh& b);

/// Location and orientation metadata attached to each shape.
struct ContextMeta {
    double orientation_theta = 0.0;  // radians, (-pi/2, pi/2]
    bool native_orientation = false;  // true when alignment was skipped
    std::optional<double> latitude;
    std::optional<double> longitude;
    std::string source_filename;
};

void validate(const ContextMeta& meta);

struct ManifestEntry {
    std::string id;
    std::string path;
    std::optional<double> lat;
    std::optional<double> lon;
};

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

// Reference meshes used by tests, tools and the toy generator.
TriangleMesh make_box(const Vec3& min, const Vec3& max, std::string id = {});
TriangleMesh make_icosphere(double radius, int subdivisions, const Vec3& center = Vec3::Zero());

}  // namespace sketchmass

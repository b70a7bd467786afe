#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "sketchmass/geometry.hpp"

namespace sketchmass::testing {

/// Fresh scratch directory under the system temp dir, removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("sketchmass_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline Mat3 random_rotation(std::mt19937_64& gen) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Quaterniond q(n(gen), n(gen), n(gen), n(gen));
    q.normalize();
    return q.toRotationMatrix();
}

inline TriangleMesh unit_cube() { return make_box(Vec3(-0.5, -0.5, -0.5), Vec3(0.5, 0.5, 0.5), "cube"); }

/// Prism over a simple CCW polygon, caps fan-triangulated from vertex 0,
/// which is valid for star-shaped polygons around vertex 0.
inline TriangleMesh fan_prism(const std::vector<Vec2>& poly, double z0, double z1) {
    std::vector<Vec3> v;
    const auto n = static_cast<std::uint32_t>(poly.size());
    for (const auto& p : poly) v.emplace_back(p.x(), p.y(), z0);
    for (const auto& p : poly) v.emplace_back(p.x(), p.y(), z1);
    std::vector<Face> f;
    for (std::uint32_t i = 1; i + 1 < n; ++i) {
        f.push_back({0, i + 1, i});
        f.push_back({n, n + i, n + i + 1});
    }
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t j = (i + 1) % n;
        f.push_back({i, j, n + j});
        f.push_back({i, n + j, n + i});
    }
    return TriangleMesh(std::move(v), std::move(f), "prism");
}

}  // namespace sketchmass::testing

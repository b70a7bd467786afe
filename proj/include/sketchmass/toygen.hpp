#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sketchmass/geometry.hpp"

namespace sketchmass {

enum class ToyFamily { Box, LShape, UShape, TowerSetback, Courtyard };

std::string family_name(ToyFamily f);
ToyFamily parse_family(const std::string& name);
const std::vector<ToyFamily>& all_families();

/// Parameters of one procedural building mass. Footprint values depend on
/// the family:
///   box:           {width, depth}
///   l-shape:       {width, depth, wing width, wing depth}
///   u-shape:       {width, depth, arm width, base depth}
///   tower-setback: {width, depth, tower width, tower depth, tower height}
///   courtyard:     {width, depth, inner width, inner depth}
/// All footprints are centred on the origin before the yaw is applied.
struct ToyShapeSpec {
    ToyFamily family = ToyFamily::Box;
    std::vector<double> footprint;
    double height = 1.0;
    double yaw = 0.0;

    void validate() const;
};

TriangleMesh build_toy(const ToyShapeSpec& spec, std::string id = {});

/// Closed prism over a simple counter-clockwise polygon.
TriangleMesh extrude_polygon(std::span<const Vec2> polygon, double z0, double z1, std::string id = {});

/// Triangulation of a simple counter-clockwise polygon by ear clipping.
std::vector<std::array<std::uint32_t, 3>> triangulate_polygon(std::span<const Vec2> polygon);

/// Analytic volume of the solid described by `spec`.
double toy_volume(const ToyShapeSpec& spec);

/// Random spec of the given family with footprint aspect ratio >= 1.3 and
/// a random yaw. Deterministic in (seed, index).
ToyShapeSpec random_toy_spec(ToyFamily family, std::uint64_t seed, std::uint64_t index);

struct ToyShape {
    std::string id;
    ToyShapeSpec spec;
    TriangleMesh mesh;
};

/// `count` shapes cycling through `families`.
std::vector<ToyShape> toygen(std::size_t count, std::span<const ToyFamily> families, std::uint64_t seed);

/// Writes <dir>/meshes/<id>.obj, <dir>/manifest.json and
/// <dir>/toyspecs.json; returns the manifest entries.
std::vector<ManifestEntry> write_toy_dataset(const std::filesystem::path& dir, const std::vector<ToyShape>& shapes);

}  // namespace sketchmass

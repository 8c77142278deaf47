#pragma once

#include "orthoct/geometry.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace orthoct {

/// Randomized chest phantom: elliptical soft-tissue body, two lung
/// ellipsoids, a spine cylinder with vertebral HU modulation, air
/// background. Geometry parameters are drawn per seed from the ranges
/// below (normalized [0,1] coordinates).
struct PhantomSpec {
    uint64_t seed = 0;
    std::array<int, 3> dims{32, 32, 32};
    std::array<float, 3> spacing{2.8f, 2.8f, 2.8f};

    // HU ranges per tissue class
    float body_hu_lo = 0.f, body_hu_hi = 60.f;
    float lung_hu_lo = -850.f, lung_hu_hi = -700.f;
    float spine_hu_lo = 400.f, spine_hu_hi = 900.f;

    void validate() const;
};

/// Ellipsoid in normalized coordinates: ((u-c)/r) norms <= 1.
struct Ellipsoid {
    std::array<double, 3> center{};
    std::array<double, 3> radius{};

    bool contains(double x, double y, double z) const;
};

/// The geometry drawn for a seed; the generator paints exactly these
/// shapes, so tests can build analytic masks from them.
struct PhantomGeometry {
    Ellipsoid body;       // z radius ignored, body spans full z
    Ellipsoid lungs[2];
    std::array<double, 2> spine_center; // (x, y) normalized
    double spine_radius;
    double body_hu;
    double lung_hu[2];
    double spine_hu_base;
    double spine_hu_amplitude;
    double spine_period; // vertebral modulation period, normalized z
};

PhantomGeometry describe_phantom(const PhantomSpec& spec);
Volume generate_phantom(const PhantomSpec& spec);

/// Trilinear resampling in physical (mm) coordinates, voxel centers at
/// (i + 0.5)*spacing; coordinates outside the source clamp to the
/// edge.
Volume resample(const Volume& vol, std::array<int, 3> new_dims, std::array<float, 3> new_spacing);

/// Volume file: four text header lines (magic "CTVOL 1", dims,
/// spacing, dtype f32le) then raw little-endian float32 payload,
/// x-fastest. Distinct errors for bad magic, truncated payload
/// (partial float), and byte-count mismatch.
void save_volume(const Volume& vol, const std::string& path);
Volume load_volume(const std::string& path);

/// Projection file: magic "CTPROJ 1", axis, dims, spacing, dtype, then
/// float32 payload.
void save_projection(const Projection& proj, const std::string& path);
Projection load_projection(const std::string& path);

struct DatasetSplit {
    std::vector<int> train;
    std::vector<int> test;
};

/// Seeded shuffle then prefix split; train count = round(n*fraction).
DatasetSplit split_dataset(int n_items, double train_fraction, uint64_t seed);

struct ManifestEntry {
    std::string path;
    bool train = true;
};

/// Plain-text manifest, one "path,train|test" line per volume.
void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path);
std::vector<ManifestEntry> load_manifest(const std::string& path);

} // namespace orthoct

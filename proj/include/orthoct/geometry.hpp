#pragma once

#include "orthoct/tensor.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace orthoct {

inline constexpr float kHuMin = -1024.0f;
inline constexpr float kHuMax = 3071.0f;

/// 3-D image in Hounsfield units. Values are stored x-fastest: index
/// (x, y, z) lives at (z*ny + y)*nx + x. Axial slice z is the
/// contiguous ny-by-nx plane at offset z*ny*nx.
template <typename T>
struct VolumeT {
    std::array<int, 3> dims{0, 0, 0};          // nx, ny, nz
    std::array<float, 3> spacing{1.f, 1.f, 1.f}; // mm per axis
    std::vector<T> values;

    int64_t size() const { return int64_t(dims[0]) * dims[1] * dims[2]; }
    T& at(int x, int y, int z) { return values[(int64_t(z) * dims[1] + y) * dims[0] + x]; }
    const T& at(int x, int y, int z) const
    {
        return values[(int64_t(z) * dims[1] + y) * dims[0] + x];
    }
    static VolumeT filled(std::array<int, 3> dims, std::array<float, 3> spacing, T value);
};

using Volume = VolumeT<float>;

enum class ProjAxis { AP, LAT }; // AP integrates along y, LAT along x

/// 2-D line-integral image in HU*mm. u is the fast axis (x for AP,
/// y for LAT), v is z for both views.
template <typename T>
struct ProjectionT {
    ProjAxis axis = ProjAxis::AP;
    std::array<int, 2> dims{0, 0};             // nu, nv
    std::array<float, 2> pixel_spacing{1.f, 1.f};
    std::vector<T> values;                     // u fastest

    int64_t size() const { return int64_t(dims[0]) * dims[1]; }
    T& at(int u, int v) { return values[int64_t(v) * dims[0] + u]; }
    const T& at(int u, int v) const { return values[int64_t(v) * dims[0] + u]; }
};

using Projection = ProjectionT<float>;

const char* axis_name(ProjAxis axis);

/// Parallel-beam line integrals: sum of HU along the integration axis
/// times the spacing on that axis. Linear in the volume.
template <typename T>
ProjectionT<T> forward_project(const VolumeT<T>& vol, ProjAxis axis);

/// Exact adjoint of forward_project: the projection value times the
/// integration-axis spacing, replicated along that axis.
template <typename T>
VolumeT<T> smear(const ProjectionT<T>& proj, std::array<int, 3> dims, std::array<float, 3> spacing);

/// Two-view initialization: each projection is spread uniformly along
/// its ray path and divided by the path length (extent * spacing), so
/// a constant volume survives the round trip; the two estimates are
/// averaged.
template <typename T>
VolumeT<T> back_project(const ProjectionT<T>& ap, const ProjectionT<T>& lat,
    std::array<int, 3> dims, std::array<float, 3> spacing);

/// Affine [hu_lo, hu_hi] -> [0,1] with clamping; result is a network
/// input tensor shaped [1, nz, ny, nx].
template <typename T>
Tensor<T> normalize_volume(const VolumeT<T>& vol, T hu_lo, T hu_hi);

/// Right inverse of normalize_volume on [0,1]: maps normalized values
/// back to HU.
template <typename T>
VolumeT<T> denormalize(std::span<const T> normalized, std::array<int, 3> dims,
    std::array<float, 3> spacing, T hu_lo, T hu_hi);

/// Clamp to the representable HU range [-1024, 3071]; applied when a
/// volume enters the system.
template <typename T>
void clamp_hu(VolumeT<T>& vol);

#define ORTHOCT_GEOMETRY_DECL(T)                                                          \
    extern template struct VolumeT<T>;                                                    \
    extern template struct ProjectionT<T>;                                                \
    extern template ProjectionT<T> forward_project<T>(const VolumeT<T>&, ProjAxis);       \
    extern template VolumeT<T> smear<T>(const ProjectionT<T>&, std::array<int, 3>,        \
        std::array<float, 3>);                                                            \
    extern template VolumeT<T> back_project<T>(const ProjectionT<T>&, const ProjectionT<T>&, \
        std::array<int, 3>, std::array<float, 3>);                                        \
    extern template Tensor<T> normalize_volume<T>(const VolumeT<T>&, T, T);               \
    extern template VolumeT<T> denormalize<T>(std::span<const T>, std::array<int, 3>,     \
        std::array<float, 3>, T, T);                                                      \
    extern template void clamp_hu<T>(VolumeT<T>&);

ORTHOCT_GEOMETRY_DECL(float)
ORTHOCT_GEOMETRY_DECL(double)
#undef ORTHOCT_GEOMETRY_DECL

} // namespace orthoct

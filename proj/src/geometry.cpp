#include "orthoct/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace orthoct {

const char* axis_name(ProjAxis axis)
{
    return axis == ProjAxis::AP ? "AP" : "LAT";
}

template <typename T>
VolumeT<T> VolumeT<T>::filled(std::array<int, 3> dims, std::array<float, 3> spacing, T value)
{
    VolumeT<T> v;
    v.dims = dims;
    v.spacing = spacing;
    v.values.assign(static_cast<size_t>(int64_t(dims[0]) * dims[1] * dims[2]), value);
    return v;
}

namespace {

void check_spacing(const std::array<float, 3>& s)
{
    if (s[0] <= 0.f || s[1] <= 0.f || s[2] <= 0.f)
        throw std::invalid_argument("volume spacing must be strictly positive");
}

template <typename T>
void check_volume(const VolumeT<T>& v, const char* what)
{
    if (v.dims[0] <= 0 || v.dims[1] <= 0 || v.dims[2] <= 0)
        throw std::invalid_argument(std::string(what) + ": empty volume");
    if (static_cast<int64_t>(v.values.size()) != v.size())
        throw std::invalid_argument(std::string(what) + ": value count does not match dims");
    check_spacing(v.spacing);
}

template <typename T>
void check_proj_dims(const ProjectionT<T>& p, std::array<int, 3> dims, const char* what)
{
    const int nu = p.axis == ProjAxis::AP ? dims[0] : dims[1];
    if (p.dims[0] != nu || p.dims[1] != dims[2])
        throw std::invalid_argument(std::string(what) + ": " + axis_name(p.axis)
            + " projection dims [" + std::to_string(p.dims[0]) + "," + std::to_string(p.dims[1])
            + "] do not match volume face for dims [" + std::to_string(dims[0]) + ","
            + std::to_string(dims[1]) + "," + std::to_string(dims[2]) + "]");
}

} // namespace

template <typename T>
ProjectionT<T> forward_project(const VolumeT<T>& vol, ProjAxis axis)
{
    check_volume(vol, "forward_project");
    const auto [nx, ny, nz] = vol.dims;
    ProjectionT<T> p;
    p.axis = axis;
    if (axis == ProjAxis::AP) {
        p.dims = {nx, nz};
        p.pixel_spacing = {vol.spacing[0], vol.spacing[2]};
        p.values.assign(static_cast<size_t>(int64_t(nx) * nz), T(0));
        const T sy = static_cast<T>(vol.spacing[1]);
        for (int z = 0; z < nz; ++z)
            for (int y = 0; y < ny; ++y) {
                const T* row = vol.values.data() + (int64_t(z) * ny + y) * nx;
                T* out = p.values.data() + int64_t(z) * nx;
                for (int x = 0; x < nx; ++x)
                    out[x] += row[x] * sy;
            }
    } else {
        p.dims = {ny, nz};
        p.pixel_spacing = {vol.spacing[1], vol.spacing[2]};
        p.values.assign(static_cast<size_t>(int64_t(ny) * nz), T(0));
        const T sx = static_cast<T>(vol.spacing[0]);
        for (int z = 0; z < nz; ++z)
            for (int y = 0; y < ny; ++y) {
                const T* row = vol.values.data() + (int64_t(z) * ny + y) * nx;
                T acc = 0;
                for (int x = 0; x < nx; ++x)
                    acc += row[x];
                p.values[int64_t(z) * ny + y] = acc * sx;
            }
    }
    return p;
}

template <typename T>
VolumeT<T> smear(const ProjectionT<T>& proj, std::array<int, 3> dims, std::array<float, 3> spacing)
{
    check_spacing(spacing);
    check_proj_dims(proj, dims, "smear");
    const auto [nx, ny, nz] = dims;
    VolumeT<T> v = VolumeT<T>::filled(dims, spacing, T(0));
    if (proj.axis == ProjAxis::AP) {
        const T sy = static_cast<T>(spacing[1]);
        for (int z = 0; z < nz; ++z) {
            const T* src = proj.values.data() + int64_t(z) * nx;
            for (int y = 0; y < ny; ++y) {
                T* row = v.values.data() + (int64_t(z) * ny + y) * nx;
                for (int x = 0; x < nx; ++x)
                    row[x] = src[x] * sy;
            }
        }
    } else {
        const T sx = static_cast<T>(spacing[0]);
        for (int z = 0; z < nz; ++z)
            for (int y = 0; y < ny; ++y) {
                const T val = proj.values[int64_t(z) * ny + y] * sx;
                T* row = v.values.data() + (int64_t(z) * ny + y) * nx;
                for (int x = 0; x < nx; ++x)
                    row[x] = val;
            }
    }
    return v;
}

template <typename T>
VolumeT<T> back_project(const ProjectionT<T>& ap, const ProjectionT<T>& lat,
    std::array<int, 3> dims, std::array<float, 3> spacing)
{
    check_spacing(spacing);
    if (ap.axis != ProjAxis::AP || lat.axis != ProjAxis::LAT)
        throw std::invalid_argument("back_project: expected one AP and one LAT projection");
    check_proj_dims(ap, dims, "back_project");
    check_proj_dims(lat, dims, "back_project");
    const auto [nx, ny, nz] = dims;
    // divide each smeared view by its physical path length so constants
    // round-trip, then average the two views
    const T inv_ap = T(1) / (static_cast<T>(ny) * static_cast<T>(spacing[1]));
    const T inv_lat = T(1) / (static_cast<T>(nx) * static_cast<T>(spacing[0]));
    VolumeT<T> v = VolumeT<T>::filled(dims, spacing, T(0));
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y) {
            const T lat_val = lat.values[int64_t(z) * ny + y] * inv_lat;
            const T* ap_row = ap.values.data() + int64_t(z) * nx;
            T* row = v.values.data() + (int64_t(z) * ny + y) * nx;
            for (int x = 0; x < nx; ++x)
                row[x] = T(0.5) * (ap_row[x] * inv_ap + lat_val);
        }
    return v;
}

template <typename T>
Tensor<T> normalize_volume(const VolumeT<T>& vol, T hu_lo, T hu_hi)
{
    check_volume(vol, "normalize_volume");
    if (!(hu_lo < hu_hi))
        throw std::invalid_argument("normalize_volume: hu_lo must be < hu_hi");
    const T inv = T(1) / (hu_hi - hu_lo);
    std::vector<T> data(vol.values.size());
    for (size_t i = 0; i < data.size(); ++i)
        data[i] = std::clamp((vol.values[i] - hu_lo) * inv, T(0), T(1));
    return Tensor<T>::from_data({1, vol.dims[2], vol.dims[1], vol.dims[0]}, std::move(data));
}

template <typename T>
VolumeT<T> denormalize(std::span<const T> normalized, std::array<int, 3> dims,
    std::array<float, 3> spacing, T hu_lo, T hu_hi)
{
    if (!(hu_lo < hu_hi))
        throw std::invalid_argument("denormalize: hu_lo must be < hu_hi");
    VolumeT<T> v = VolumeT<T>::filled(dims, spacing, T(0));
    if (normalized.size() != v.values.size())
        throw std::invalid_argument("denormalize: element count " + std::to_string(normalized.size())
            + " does not match dims");
    for (size_t i = 0; i < v.values.size(); ++i)
        v.values[i] = hu_lo + normalized[i] * (hu_hi - hu_lo);
    return v;
}

template <typename T>
void clamp_hu(VolumeT<T>& vol)
{
    for (T& x : vol.values)
        x = std::clamp(x, static_cast<T>(kHuMin), static_cast<T>(kHuMax));
}

#define ORTHOCT_GEOMETRY_IMPL(T)                                                      \
    template struct VolumeT<T>;                                                       \
    template struct ProjectionT<T>;                                                   \
    template ProjectionT<T> forward_project<T>(const VolumeT<T>&, ProjAxis);          \
    template VolumeT<T> smear<T>(const ProjectionT<T>&, std::array<int, 3>,           \
        std::array<float, 3>);                                                        \
    template VolumeT<T> back_project<T>(const ProjectionT<T>&, const ProjectionT<T>&, \
        std::array<int, 3>, std::array<float, 3>);                                    \
    template Tensor<T> normalize_volume<T>(const VolumeT<T>&, T, T);                  \
    template VolumeT<T> denormalize<T>(std::span<const T>, std::array<int, 3>,        \
        std::array<float, 3>, T, T);                                                  \
    template void clamp_hu<T>(VolumeT<T>&);

ORTHOCT_GEOMETRY_IMPL(float)
ORTHOCT_GEOMETRY_IMPL(double)
#undef ORTHOCT_GEOMETRY_IMPL

} // namespace orthoct

#pragma once

#include "orthoct/geometry.hpp"
#include "orthoct/network.hpp"

#include <string>
#include <vector>

namespace orthoct {

struct BinaryMask {
    std::array<int, 3> dims{0, 0, 0};
    std::vector<uint8_t> voxels;

    int64_t size() const { return int64_t(dims[0]) * dims[1] * dims[2]; }
    int64_t count() const;
    uint8_t& at(int x, int y, int z) { return voxels[(int64_t(z) * dims[1] + y) * dims[0] + x]; }
    uint8_t at(int x, int y, int z) const
    {
        return voxels[(int64_t(z) * dims[1] + y) * dims[0] + x];
    }
    static BinaryMask empty(std::array<int, 3> dims);
};

/// PSNR peak defaults to the 2000 HU normalization window width;
/// identical inputs return the 100 dB cap.
inline constexpr double kDefaultPeak = 2000.0;
inline constexpr double kPsnrCap = 100.0;

double mae(const Volume& pred, const Volume& gt);
double psnr(const Volume& pred, const Volume& gt, double peak = kDefaultPeak);

/// Mean over axial slices of 2-D SSIM with an 11-wide Gaussian window
/// (sigma 1.5), K1=0.01, K2=0.03, dynamic range = peak. Windows are
/// evaluated where they fit entirely (valid mode), so slices must be
/// at least 11 wide.
double ssim(const Volume& pred, const Volume& gt, double peak = kDefaultPeak);

/// Pixel-domain visual information fidelity on [0,1]-normalized
/// intensities, evaluated per axial slice and averaged: 4 Gaussian
/// pyramid scales (windows 9,7,5,3), local variance statistics, noise
/// variance 2. Reference is the second argument; vif(x,x) = 1.
double vif(const Volume& pred, const Volume& gt);

/// Mean over extractor levels of the unit-normalized feature L2
/// distance, per axial slice. Symmetric, 0 iff features agree.
double perceptual_distance(const NetworkParams& extractor, const UNetConfig& extractor_cfg,
    const Volume& pred, const Volume& gt);

/// 6-connected component labeling; returns the number of components
/// and fills labels (0 = background, 1..n = component id).
int connected_components(const BinaryMask& mask, std::vector<int>& labels);

/// Largest connected component of HU > -500.
BinaryMask body_mask(const Volume& vol);

/// Voxels below hu_threshold inside the given body mask.
BinaryMask segment_lung(const Volume& vol, float hu_threshold, const BinaryMask& body);
BinaryMask segment_lung(const Volume& vol, float hu_threshold = -300.f);

/// 2|a&b| / (|a|+|b|); both empty -> 1.
double dice(const BinaryMask& a, const BinaryMask& b);

struct MetricsRow {
    std::string name;
    double mae = 0, psnr = 0, ssim = 0, vif = 0, perceptual = 0, dice = 0;
};

struct MetricsReport {
    std::vector<MetricsRow> rows; // one per volume
    MetricsRow mean;
    MetricsRow stddev;

    std::string to_csv() const; // header + rows + mean + std
};

/// Per-volume metric records plus mean/std aggregates. pred and gt are
/// paired by index; names label the CSV rows.
MetricsReport evaluate(const std::vector<Volume>& pred_set, const std::vector<Volume>& gt_set,
    const std::vector<std::string>& names, const NetworkParams& extractor,
    const UNetConfig& extractor_cfg);

} // namespace orthoct

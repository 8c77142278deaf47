#include "orthoct/metrics.hpp"

#include "orthoct/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <queue>
#include <stdexcept>

namespace orthoct {

int64_t BinaryMask::count() const
{
    int64_t n = 0;
    for (uint8_t v : voxels)
        n += v != 0;
    return n;
}

BinaryMask BinaryMask::empty(std::array<int, 3> dims)
{
    BinaryMask m;
    m.dims = dims;
    m.voxels.assign(static_cast<size_t>(int64_t(dims[0]) * dims[1] * dims[2]), 0);
    return m;
}

namespace {

void check_paired(const Volume& a, const Volume& b, const char* what)
{
    if (a.dims != b.dims)
        throw std::invalid_argument(std::string(what) + ": volume dims mismatch");
    if (static_cast<int64_t>(a.values.size()) != a.size()
        || static_cast<int64_t>(b.values.size()) != b.size())
        throw std::invalid_argument(std::string(what) + ": value count does not match dims");
}

// 2-D double image, row-major
struct Image {
    int h = 0, w = 0;
    std::vector<double> v;

    double& at(int r, int c) { return v[static_cast<size_t>(r) * w + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * w + c]; }
};

Image slice_of(const Volume& vol, int z, double scale, double shift)
{
    Image im;
    im.h = vol.dims[1];
    im.w = vol.dims[0];
    im.v.resize(static_cast<size_t>(im.h) * im.w);
    const float* src = vol.values.data() + int64_t(z) * im.h * im.w;
    for (size_t i = 0; i < im.v.size(); ++i)
        im.v[i] = double(src[i]) * scale + shift;
    return im;
}

std::vector<double> gaussian_taps(int n, double sigma)
{
    std::vector<double> t(static_cast<size_t>(n));
    const double c = (n - 1) / 2.0;
    double sum = 0;
    for (int i = 0; i < n; ++i) {
        t[static_cast<size_t>(i)] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
        sum += t[static_cast<size_t>(i)];
    }
    for (double& x : t)
        x /= sum;
    return t;
}

// separable valid-mode Gaussian filtering
Image gauss_valid(const Image& im, const std::vector<double>& taps)
{
    const int n = static_cast<int>(taps.size());
    Image tmp; // horizontal pass
    tmp.h = im.h;
    tmp.w = im.w - n + 1;
    tmp.v.resize(static_cast<size_t>(tmp.h) * tmp.w);
    for (int r = 0; r < tmp.h; ++r)
        for (int c = 0; c < tmp.w; ++c) {
            double acc = 0;
            for (int k = 0; k < n; ++k)
                acc += taps[static_cast<size_t>(k)] * im.at(r, c + k);
            tmp.at(r, c) = acc;
        }
    Image out;
    out.h = im.h - n + 1;
    out.w = tmp.w;
    out.v.resize(static_cast<size_t>(out.h) * out.w);
    for (int r = 0; r < out.h; ++r)
        for (int c = 0; c < out.w; ++c) {
            double acc = 0;
            for (int k = 0; k < n; ++k)
                acc += taps[static_cast<size_t>(k)] * tmp.at(r + k, c);
            out.at(r, c) = acc;
        }
    return out;
}

Image mul_images(const Image& a, const Image& b)
{
    Image out = a;
    for (size_t i = 0; i < out.v.size(); ++i)
        out.v[i] *= b.v[i];
    return out;
}

Image subsample2(const Image& im)
{
    Image out;
    out.h = (im.h + 1) / 2;
    out.w = (im.w + 1) / 2;
    out.v.resize(static_cast<size_t>(out.h) * out.w);
    for (int r = 0; r < out.h; ++r)
        for (int c = 0; c < out.w; ++c)
            out.at(r, c) = im.at(2 * r, 2 * c);
    return out;
}

} // namespace

double mae(const Volume& pred, const Volume& gt)
{
    check_paired(pred, gt, "mae");
    double acc = 0;
    for (size_t i = 0; i < pred.values.size(); ++i)
        acc += std::fabs(double(pred.values[i]) - double(gt.values[i]));
    return acc / static_cast<double>(pred.values.size());
}

double psnr(const Volume& pred, const Volume& gt, double peak)
{
    check_paired(pred, gt, "psnr");
    double mse = 0;
    for (size_t i = 0; i < pred.values.size(); ++i) {
        const double d = double(pred.values[i]) - double(gt.values[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(pred.values.size());
    if (mse == 0.0)
        return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double ssim(const Volume& pred, const Volume& gt, double peak)
{
    check_paired(pred, gt, "ssim");
    if (pred.dims[0] < 11 || pred.dims[1] < 11)
        throw std::invalid_argument("ssim: slices must be at least 11x11");
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    const auto taps = gaussian_taps(11, 1.5);
    double total = 0;
    for (int z = 0; z < pred.dims[2]; ++z) {
        const Image x = slice_of(pred, z, 1.0, 0.0);
        const Image y = slice_of(gt, z, 1.0, 0.0);
        const Image mx = gauss_valid(x, taps);
        const Image my = gauss_valid(y, taps);
        const Image mxx = gauss_valid(mul_images(x, x), taps);
        const Image myy = gauss_valid(mul_images(y, y), taps);
        const Image mxy = gauss_valid(mul_images(x, y), taps);
        double acc = 0;
        for (size_t i = 0; i < mx.v.size(); ++i) {
            const double ux = mx.v[i], uy = my.v[i];
            const double vx = mxx.v[i] - ux * ux;
            const double vy = myy.v[i] - uy * uy;
            const double cxy = mxy.v[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / static_cast<double>(mx.v.size());
    }
    return total / pred.dims[2];
}

namespace {

constexpr double kVifNoiseVar = 2.0;
constexpr int kVifWindows[4] = {9, 7, 5, 3};
constexpr double kVifEps = 1e-10;

// one scale's contribution to the information sums
void vif_scale(const Image& ref, const Image& dist, int window, double& num, double& den)
{
    const auto taps = gaussian_taps(window, window / 5.0);
    const Image mu1 = gauss_valid(ref, taps);
    const Image mu2 = gauss_valid(dist, taps);
    const Image m11 = gauss_valid(mul_images(ref, ref), taps);
    const Image m22 = gauss_valid(mul_images(dist, dist), taps);
    const Image m12 = gauss_valid(mul_images(ref, dist), taps);
    for (size_t i = 0; i < mu1.v.size(); ++i) {
        double s11 = std::max(0.0, m11.v[i] - mu1.v[i] * mu1.v[i]);
        double s22 = std::max(0.0, m22.v[i] - mu2.v[i] * mu2.v[i]);
        const double s12 = m12.v[i] - mu1.v[i] * mu2.v[i];
        double g = s12 / (s11 + kVifEps);
        double sv = s22 - g * s12;
        if (s11 < kVifEps) {
            g = 0;
            sv = s22;
            s11 = 0;
        }
        if (s22 < kVifEps) {
            g = 0;
            sv = 0;
        }
        if (g < 0) {
            sv = s22;
            g = 0;
        }
        sv = std::max(sv, kVifEps);
        num += std::log10(1.0 + g * g * s11 / (sv + kVifNoiseVar));
        den += std::log10(1.0 + s11 / kVifNoiseVar);
    }
}

} // namespace

double vif(const Volume& pred, const Volume& gt)
{
    check_paired(pred, gt, "vif");
    // [0,1] normalized intensities over the default HU window
    const double scale = 1.0 / 2000.0, shift = 0.5;
    double total = 0;
    for (int z = 0; z < pred.dims[2]; ++z) {
        Image dist = slice_of(pred, z, scale, shift);
        Image ref = slice_of(gt, z, scale, shift);
        for (double& x : dist.v)
            x = std::clamp(x, 0.0, 1.0);
        for (double& x : ref.v)
            x = std::clamp(x, 0.0, 1.0);
        double num = 0, den = 0;
        for (int k = 0; k < 4; ++k) {
            const int window = kVifWindows[k];
            if (k > 0) {
                const auto taps = gaussian_taps(window, window / 5.0);
                ref = subsample2(gauss_valid(ref, taps));
                dist = subsample2(gauss_valid(dist, taps));
            }
            if (ref.h < window || ref.w < window)
                break;
            vif_scale(ref, dist, window, num, den);
        }
        total += den > kVifEps ? num / den : 1.0;
    }
    return total / pred.dims[2];
}

double perceptual_distance(const NetworkParams& extractor, const UNetConfig& extractor_cfg,
    const Volume& pred, const Volume& gt)
{
    check_paired(pred, gt, "perceptual_distance");
    if (extractor_cfg.dims != 2)
        throw std::invalid_argument("perceptual_distance: extractor must be 2-D");
    const int nx = pred.dims[0], ny = pred.dims[1], nz = pred.dims[2];
    const auto norm_slice = [&](const Volume& v, int z) {
        std::vector<float> data(static_cast<size_t>(ny) * nx);
        const float* src = v.values.data() + int64_t(z) * ny * nx;
        for (size_t i = 0; i < data.size(); ++i)
            data[i] = std::clamp((src[i] + 1000.f) / 2000.f, 0.f, 1.f);
        return Tensor<float>::from_data({1, ny, nx}, std::move(data));
    };
    double total = 0;
    for (int z = 0; z < nz; ++z) {
        const auto fa = encoder_features(extractor, extractor_cfg, norm_slice(pred, z));
        const auto fb = encoder_features(extractor, extractor_cfg, norm_slice(gt, z));
        double lvl_total = 0;
        for (size_t l = 0; l < fa.size(); ++l) {
            const auto& sa = fa[l].shape();
            const int c = sa[0];
            const int64_t sp = fa[l].size() / c;
            auto va = fa[l].values();
            auto vb = fb[l].values();
            double acc = 0;
            for (int64_t s = 0; s < sp; ++s) {
                double na = 0, nb = 0;
                for (int ch = 0; ch < c; ++ch) {
                    na += double(va[ch * sp + s]) * va[ch * sp + s];
                    nb += double(vb[ch * sp + s]) * vb[ch * sp + s];
                }
                na = std::max(std::sqrt(na), 1e-12);
                nb = std::max(std::sqrt(nb), 1e-12);
                for (int ch = 0; ch < c; ++ch) {
                    const double d = double(va[ch * sp + s]) / na - double(vb[ch * sp + s]) / nb;
                    acc += d * d;
                }
            }
            lvl_total += acc / static_cast<double>(sp);
        }
        total += lvl_total / static_cast<double>(fa.size());
    }
    return total / nz;
}

int connected_components(const BinaryMask& mask, std::vector<int>& labels)
{
    const auto [nx, ny, nz] = mask.dims;
    labels.assign(mask.voxels.size(), 0);
    int next = 0;
    std::queue<int64_t> frontier;
    const int64_t n = mask.size();
    for (int64_t start = 0; start < n; ++start) {
        if (!mask.voxels[static_cast<size_t>(start)] || labels[static_cast<size_t>(start)])
            continue;
        ++next;
        labels[static_cast<size_t>(start)] = next;
        frontier.push(start);
        while (!frontier.empty()) {
            const int64_t i = frontier.front();
            frontier.pop();
            const int x = static_cast<int>(i % nx);
            const int y = static_cast<int>((i / nx) % ny);
            const int z = static_cast<int>(i / (int64_t(nx) * ny));
            const int dx[6] = {1, -1, 0, 0, 0, 0};
            const int dy[6] = {0, 0, 1, -1, 0, 0};
            const int dz[6] = {0, 0, 0, 0, 1, -1};
            for (int k = 0; k < 6; ++k) {
                const int px = x + dx[k], py = y + dy[k], pz = z + dz[k];
                if (px < 0 || px >= nx || py < 0 || py >= ny || pz < 0 || pz >= nz)
                    continue;
                const int64_t j = (int64_t(pz) * ny + py) * nx + px;
                if (mask.voxels[static_cast<size_t>(j)] && !labels[static_cast<size_t>(j)]) {
                    labels[static_cast<size_t>(j)] = next;
                    frontier.push(j);
                }
            }
        }
    }
    return next;
}

BinaryMask body_mask(const Volume& vol)
{
    BinaryMask thresholded = BinaryMask::empty(vol.dims);
    for (size_t i = 0; i < vol.values.size(); ++i)
        thresholded.voxels[i] = vol.values[i] > -500.f;
    std::vector<int> labels;
    const int n = connected_components(thresholded, labels);
    BinaryMask out = BinaryMask::empty(vol.dims);
    if (n == 0)
        return out;
    std::vector<int64_t> counts(static_cast<size_t>(n) + 1, 0);
    for (int lbl : labels)
        ++counts[static_cast<size_t>(lbl)];
    int best = 1;
    for (int lbl = 2; lbl <= n; ++lbl)
        if (counts[static_cast<size_t>(lbl)] > counts[static_cast<size_t>(best)])
            best = lbl;
    for (size_t i = 0; i < labels.size(); ++i)
        out.voxels[i] = labels[i] == best;
    return out;
}

BinaryMask segment_lung(const Volume& vol, float hu_threshold, const BinaryMask& body)
{
    if (body.dims != vol.dims)
        throw std::invalid_argument("segment_lung: body mask dims mismatch");
    BinaryMask out = BinaryMask::empty(vol.dims);
    for (size_t i = 0; i < vol.values.size(); ++i)
        out.voxels[i] = body.voxels[i] && vol.values[i] < hu_threshold;
    return out;
}

BinaryMask segment_lung(const Volume& vol, float hu_threshold)
{
    return segment_lung(vol, hu_threshold, body_mask(vol));
}

double dice(const BinaryMask& a, const BinaryMask& b)
{
    if (a.dims != b.dims)
        throw std::invalid_argument("dice: mask dims mismatch");
    int64_t inter = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.voxels.size(); ++i) {
        inter += a.voxels[i] && b.voxels[i];
        na += a.voxels[i] != 0;
        nb += b.voxels[i] != 0;
    }
    if (na + nb == 0)
        return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

namespace {

std::string fmt_row(const MetricsRow& r)
{
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", r.name.c_str(), r.mae,
        r.psnr, r.ssim, r.vif, r.perceptual, r.dice);
    return buf;
}

} // namespace

std::string MetricsReport::to_csv() const
{
    std::string out = "volume,mae,psnr,ssim,vif,perceptual,dice\n";
    for (const auto& r : rows)
        out += fmt_row(r) + "\n";
    out += fmt_row(mean) + "\n";
    out += fmt_row(stddev) + "\n";
    return out;
}

MetricsReport evaluate(const std::vector<Volume>& pred_set, const std::vector<Volume>& gt_set,
    const std::vector<std::string>& names, const NetworkParams& extractor,
    const UNetConfig& extractor_cfg)
{
    if (pred_set.size() != gt_set.size() || pred_set.size() != names.size())
        throw std::invalid_argument("evaluate: pred/gt/name sets are not paired");
    if (pred_set.empty())
        throw std::invalid_argument("evaluate: empty volume sets");

    MetricsReport report;
    for (size_t i = 0; i < pred_set.size(); ++i) {
        MetricsRow r;
        r.name = names[i];
        r.mae = mae(pred_set[i], gt_set[i]);
        r.psnr = psnr(pred_set[i], gt_set[i]);
        r.ssim = ssim(pred_set[i], gt_set[i]);
        r.vif = vif(pred_set[i], gt_set[i]);
        r.perceptual = perceptual_distance(extractor, extractor_cfg, pred_set[i], gt_set[i]);
        r.dice = dice(segment_lung(pred_set[i]), segment_lung(gt_set[i]));
        report.rows.push_back(std::move(r));
    }

    const auto fields = {&MetricsRow::mae, &MetricsRow::psnr, &MetricsRow::ssim, &MetricsRow::vif,
        &MetricsRow::perceptual, &MetricsRow::dice};
    report.mean.name = "mean";
    report.stddev.name = "std";
    const double n = static_cast<double>(report.rows.size());
    for (auto f : fields) {
        double m = 0;
        for (const auto& r : report.rows)
            m += r.*f;
        m /= n;
        double var = 0;
        for (const auto& r : report.rows)
            var += (r.*f - m) * (r.*f - m);
        report.mean.*f = m;
        report.stddev.*f = std::sqrt(var / n);
    }
    return report;
}

} // namespace orthoct

#include "orthoct/data.hpp"

#include "orthoct/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace orthoct {

void PhantomSpec::validate() const
{
    if (dims[0] < 8 || dims[1] < 8 || dims[2] < 8)
        throw std::invalid_argument("PhantomSpec: dims must be at least 8 per axis");
    if (spacing[0] <= 0 || spacing[1] <= 0 || spacing[2] <= 0)
        throw std::invalid_argument("PhantomSpec: spacing must be positive");
    const auto in_range = [](float lo, float hi) { return lo < hi && lo >= kHuMin && hi <= kHuMax; };
    if (!in_range(body_hu_lo, body_hu_hi) || !in_range(lung_hu_lo, lung_hu_hi)
        || !in_range(spine_hu_lo, spine_hu_hi))
        throw std::invalid_argument("PhantomSpec: HU ranges must be ordered and within [-1024,3071]");
}

bool Ellipsoid::contains(double x, double y, double z) const
{
    const double dx = (x - center[0]) / radius[0];
    const double dy = (y - center[1]) / radius[1];
    const double dz = (z - center[2]) / radius[2];
    return dx * dx + dy * dy + dz * dz <= 1.0;
}

PhantomGeometry describe_phantom(const PhantomSpec& spec)
{
    spec.validate();
    Rng rng(spec.seed);
    PhantomGeometry g;
    // body cross-section; the y radius leaves room for the spine, the
    // lungs stay clear of it (disjointness is by construction)
    g.body.center = {0.5, 0.5, 0.5};
    g.body.radius = {rng.uniform(0.40, 0.45), rng.uniform(0.36, 0.40), 1.0};
    const double lung_dx = rng.uniform(0.16, 0.20);
    const double lung_yc = rng.uniform(0.40, 0.44);
    for (int i = 0; i < 2; ++i) {
        g.lungs[i].center = {0.5 + (i == 0 ? -lung_dx : lung_dx), lung_yc, 0.5};
        g.lungs[i].radius = {rng.uniform(0.12, 0.15), rng.uniform(0.15, 0.18),
            rng.uniform(0.30, 0.36)};
        g.lung_hu[i] = rng.uniform(spec.lung_hu_lo + 30.0, spec.lung_hu_hi - 30.0);
    }
    g.spine_center = {rng.uniform(0.49, 0.51), rng.uniform(0.72, 0.76)};
    g.spine_radius = rng.uniform(0.05, 0.065);
    g.body_hu = rng.uniform(spec.body_hu_lo + 12.0, spec.body_hu_hi - 12.0);
    g.spine_hu_base = rng.uniform(550.0, 750.0);
    g.spine_hu_amplitude = rng.uniform(100.0, 150.0);
    g.spine_period = rng.uniform(0.10, 0.15);
    return g;
}

Volume generate_phantom(const PhantomSpec& spec)
{
    const PhantomGeometry g = describe_phantom(spec);
    const auto [nx, ny, nz] = spec.dims;
    Volume vol = Volume::filled(spec.dims, spec.spacing, -1000.f);
    for (int z = 0; z < nz; ++z) {
        const double w = (z + 0.5) / nz;
        const double taper = 1.0 - 0.05 * (2.0 * w - 1.0) * (2.0 * w - 1.0);
        const double spine_hu = std::clamp(
            g.spine_hu_base + g.spine_hu_amplitude * std::sin(6.283185307179586 * w / g.spine_period),
            double(spec.spine_hu_lo), double(spec.spine_hu_hi));
        for (int y = 0; y < ny; ++y) {
            const double v = (y + 0.5) / ny;
            for (int x = 0; x < nx; ++x) {
                const double u = (x + 0.5) / nx;
                const double bx = (u - g.body.center[0]) / (g.body.radius[0] * taper);
                const double by = (v - g.body.center[1]) / (g.body.radius[1] * taper);
                if (bx * bx + by * by > 1.0)
                    continue; // air
                double hu = std::clamp(g.body_hu + 10.0 * (2.0 * v - 1.0), double(spec.body_hu_lo),
                    double(spec.body_hu_hi));
                for (int i = 0; i < 2; ++i) {
                    const auto& l = g.lungs[i];
                    const double dx = (u - l.center[0]) / l.radius[0];
                    const double dy = (v - l.center[1]) / l.radius[1];
                    const double dz = (w - l.center[2]) / l.radius[2];
                    const double rho = dx * dx + dy * dy + dz * dz;
                    if (rho <= 1.0) {
                        hu = std::clamp(g.lung_hu[i] + 25.0 * (2.0 * rho - 1.0),
                            double(spec.lung_hu_lo), double(spec.lung_hu_hi));
                        break;
                    }
                }
                const double sx = (u - g.spine_center[0]) / g.spine_radius;
                const double sy = (v - g.spine_center[1]) / g.spine_radius;
                if (sx * sx + sy * sy <= 1.0)
                    hu = spine_hu;
                vol.at(x, y, z) = static_cast<float>(hu);
            }
        }
    }
    clamp_hu(vol);
    return vol;
}

Volume resample(const Volume& vol, std::array<int, 3> new_dims, std::array<float, 3> new_spacing)
{
    if (new_dims[0] < 1 || new_dims[1] < 1 || new_dims[2] < 1)
        throw std::invalid_argument("resample: target dims must be positive");
    if (new_spacing[0] <= 0 || new_spacing[1] <= 0 || new_spacing[2] <= 0)
        throw std::invalid_argument("resample: target spacing must be positive");
    Volume out = Volume::filled(new_dims, new_spacing, 0.f);

    const auto src_coord = [&](int i, int axis) {
        const double phys = (i + 0.5) * new_spacing[static_cast<size_t>(axis)];
        const double s = phys / vol.spacing[static_cast<size_t>(axis)] - 0.5;
        return std::clamp(s, 0.0, double(vol.dims[static_cast<size_t>(axis)] - 1));
    };
    struct Tap {
        int i0, i1;
        double t;
    };
    const auto tap_for = [&](int i, int axis) {
        const double s = src_coord(i, axis);
        const int i0 = static_cast<int>(std::floor(s));
        return Tap{i0, std::min(i0 + 1, vol.dims[static_cast<size_t>(axis)] - 1), s - i0};
    };
    std::vector<Tap> tx(static_cast<size_t>(new_dims[0])), ty(static_cast<size_t>(new_dims[1])),
        tz(static_cast<size_t>(new_dims[2]));
    for (int i = 0; i < new_dims[0]; ++i)
        tx[static_cast<size_t>(i)] = tap_for(i, 0);
    for (int i = 0; i < new_dims[1]; ++i)
        ty[static_cast<size_t>(i)] = tap_for(i, 1);
    for (int i = 0; i < new_dims[2]; ++i)
        tz[static_cast<size_t>(i)] = tap_for(i, 2);

    for (int z = 0; z < new_dims[2]; ++z) {
        const Tap& az = tz[static_cast<size_t>(z)];
        for (int y = 0; y < new_dims[1]; ++y) {
            const Tap& ay = ty[static_cast<size_t>(y)];
            for (int x = 0; x < new_dims[0]; ++x) {
                const Tap& ax = tx[static_cast<size_t>(x)];
                double acc = 0;
                for (int c = 0; c < 2; ++c) {
                    const double wz = c ? az.t : 1.0 - az.t;
                    if (wz == 0.0)
                        continue;
                    const int iz = c ? az.i1 : az.i0;
                    for (int b = 0; b < 2; ++b) {
                        const double wy = b ? ay.t : 1.0 - ay.t;
                        if (wy == 0.0)
                            continue;
                        const int iy = b ? ay.i1 : ay.i0;
                        acc += wz * wy
                            * ((1.0 - ax.t) * vol.at(ax.i0, iy, iz) + ax.t * vol.at(ax.i1, iy, iz));
                    }
                }
                out.at(x, y, z) = static_cast<float>(acc);
            }
        }
    }
    return out;
}

namespace {

void write_f32le(std::ostream& os, std::span<const float> data)
{
    for (float f : data) {
        const uint32_t u = std::bit_cast<uint32_t>(f);
        const unsigned char b[4] = {static_cast<unsigned char>(u & 0xff),
            static_cast<unsigned char>((u >> 8) & 0xff),
            static_cast<unsigned char>((u >> 16) & 0xff),
            static_cast<unsigned char>((u >> 24) & 0xff)};
        os.write(reinterpret_cast<const char*>(b), 4);
    }
}

// reads the rest of the stream as float32; distinguishes a payload cut
// mid-float (truncated) from a whole-float count mismatch
std::vector<float> read_payload(std::istream& is, int64_t expected, const std::string& path)
{
    std::vector<unsigned char> blob{std::istreambuf_iterator<char>(is),
        std::istreambuf_iterator<char>()};
    if (blob.size() % 4 != 0)
        throw std::runtime_error(path + ": truncated payload");
    const int64_t count = static_cast<int64_t>(blob.size() / 4);
    if (count != expected)
        throw std::runtime_error(path + ": byte-count mismatch, header expects "
            + std::to_string(expected) + " values, payload has " + std::to_string(count));
    std::vector<float> data(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        const unsigned char* b = blob.data() + 4 * i;
        const uint32_t u = uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16)
            | (uint32_t(b[3]) << 24);
        data[static_cast<size_t>(i)] = std::bit_cast<float>(u);
    }
    return data;
}

std::string fmt_float(float f)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", double(f));
    return buf;
}

std::string expect_line(std::istream& is, const std::string& path)
{
    std::string line;
    if (!std::getline(is, line))
        throw std::runtime_error(path + ": unexpected end of header");
    return line;
}

} // namespace

void save_volume(const Volume& vol, const std::string& path)
{
    if (static_cast<int64_t>(vol.values.size()) != vol.size())
        throw std::invalid_argument("save_volume: value count does not match dims");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw std::runtime_error("cannot open " + path + " for writing");
    os << "CTVOL 1\n";
    os << "dims " << vol.dims[0] << " " << vol.dims[1] << " " << vol.dims[2] << "\n";
    os << "spacing " << fmt_float(vol.spacing[0]) << " " << fmt_float(vol.spacing[1]) << " "
       << fmt_float(vol.spacing[2]) << "\n";
    os << "dtype f32le\n";
    write_f32le(os, vol.values);
    if (!os)
        throw std::runtime_error("write failed for " + path);
}

Volume load_volume(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("cannot open volume " + path);
    if (expect_line(is, path) != "CTVOL 1")
        throw std::runtime_error(path + ": bad magic, not a CTVOL file");
    Volume vol;
    {
        std::istringstream ls(expect_line(is, path));
        std::string key;
        ls >> key >> vol.dims[0] >> vol.dims[1] >> vol.dims[2];
        if (key != "dims" || ls.fail() || vol.dims[0] < 1 || vol.dims[1] < 1 || vol.dims[2] < 1)
            throw std::runtime_error(path + ": malformed dims line");
    }
    {
        std::istringstream ls(expect_line(is, path));
        std::string key;
        ls >> key >> vol.spacing[0] >> vol.spacing[1] >> vol.spacing[2];
        if (key != "spacing" || ls.fail() || vol.spacing[0] <= 0 || vol.spacing[1] <= 0
            || vol.spacing[2] <= 0)
            throw std::runtime_error(path + ": malformed spacing line");
    }
    if (expect_line(is, path) != "dtype f32le")
        throw std::runtime_error(path + ": unsupported dtype");
    vol.values = read_payload(is, vol.size(), path);
    clamp_hu(vol);
    return vol;
}

void save_projection(const Projection& proj, const std::string& path)
{
    if (static_cast<int64_t>(proj.values.size()) != proj.size())
        throw std::invalid_argument("save_projection: value count does not match dims");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw std::runtime_error("cannot open " + path + " for writing");
    os << "CTPROJ 1\n";
    os << "axis " << axis_name(proj.axis) << "\n";
    os << "dims " << proj.dims[0] << " " << proj.dims[1] << "\n";
    os << "spacing " << fmt_float(proj.pixel_spacing[0]) << " " << fmt_float(proj.pixel_spacing[1])
       << "\n";
    os << "dtype f32le\n";
    write_f32le(os, proj.values);
    if (!os)
        throw std::runtime_error("write failed for " + path);
}

Projection load_projection(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("cannot open projection " + path);
    if (expect_line(is, path) != "CTPROJ 1")
        throw std::runtime_error(path + ": bad magic, not a CTPROJ file");
    Projection proj;
    {
        std::istringstream ls(expect_line(is, path));
        std::string key, axis;
        ls >> key >> axis;
        if (key != "axis" || ls.fail() || (axis != "AP" && axis != "LAT"))
            throw std::runtime_error(path + ": malformed axis line");
        proj.axis = axis == "AP" ? ProjAxis::AP : ProjAxis::LAT;
    }
    {
        std::istringstream ls(expect_line(is, path));
        std::string key;
        ls >> key >> proj.dims[0] >> proj.dims[1];
        if (key != "dims" || ls.fail() || proj.dims[0] < 1 || proj.dims[1] < 1)
            throw std::runtime_error(path + ": malformed dims line");
    }
    {
        std::istringstream ls(expect_line(is, path));
        std::string key;
        ls >> key >> proj.pixel_spacing[0] >> proj.pixel_spacing[1];
        if (key != "spacing" || ls.fail() || proj.pixel_spacing[0] <= 0 || proj.pixel_spacing[1] <= 0)
            throw std::runtime_error(path + ": malformed spacing line");
    }
    if (expect_line(is, path) != "dtype f32le")
        throw std::runtime_error(path + ": unsupported dtype");
    proj.values = read_payload(is, proj.size(), path);
    return proj;
}

DatasetSplit split_dataset(int n_items, double train_fraction, uint64_t seed)
{
    if (n_items < 1)
        throw std::invalid_argument("split_dataset: n_items must be >= 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw std::invalid_argument("split_dataset: train_fraction must be in (0,1)");
    std::vector<int> idx(static_cast<size_t>(n_items));
    for (int i = 0; i < n_items; ++i)
        idx[static_cast<size_t>(i)] = i;
    Rng rng(seed);
    for (int i = n_items - 1; i > 0; --i)
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(rng.uniform_int(i + 1))]);
    const int n_train = static_cast<int>(std::lround(n_items * train_fraction));
    DatasetSplit split;
    split.train.assign(idx.begin(), idx.begin() + n_train);
    split.test.assign(idx.begin() + n_train, idx.end());
    return split;
}

void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path)
{
    std::ofstream os(path, std::ios::trunc);
    if (!os)
        throw std::runtime_error("cannot open " + path + " for writing");
    for (const auto& e : entries)
        os << e.path << "," << (e.train ? "train" : "test") << "\n";
    if (!os)
        throw std::runtime_error("write failed for " + path);
}

std::vector<ManifestEntry> load_manifest(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        throw std::runtime_error("cannot open manifest " + path);
    std::vector<ManifestEntry> entries;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        const size_t comma = line.rfind(',');
        if (comma == std::string::npos)
            throw std::runtime_error(path + ": malformed manifest line '" + line + "'");
        const std::string split = line.substr(comma + 1);
        if (split != "train" && split != "test")
            throw std::runtime_error(path + ": unknown split tag '" + split + "'");
        entries.push_back({line.substr(0, comma), split == "train"});
    }
    return entries;
}

} // namespace orthoct

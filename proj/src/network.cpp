#include "orthoct/network.hpp"

#include "orthoct/nn_ops.hpp"
#include "orthoct/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace orthoct {

inline constexpr float kLeakySlope = 0.2f;   // standard GAN convention
inline constexpr float kInstanceNormEps = 1e-5f;
inline constexpr float kFeatureNormEps = 1e-8f;

template <typename T>
void ParamSet<T>::add(std::string name, Tensor<T> t)
{
    if (index_.count(name))
        throw std::invalid_argument("duplicate parameter name: " + name);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(t));
}

template <typename T>
bool ParamSet<T>::contains(std::string_view name) const
{
    return index_.count(std::string(name)) != 0;
}

template <typename T>
Tensor<T>& ParamSet<T>::at(std::string_view name)
{
    auto it = index_.find(std::string(name));
    if (it == index_.end())
        throw std::out_of_range("no parameter named " + std::string(name));
    return entries_[it->second].second;
}

template <typename T>
const Tensor<T>& ParamSet<T>::at(std::string_view name) const
{
    auto it = index_.find(std::string(name));
    if (it == index_.end())
        throw std::out_of_range("no parameter named " + std::string(name));
    return entries_[it->second].second;
}

template <typename T>
int64_t ParamSet<T>::total_size() const
{
    int64_t n = 0;
    for (const auto& [name, t] : entries_)
        n += t.size();
    return n;
}

template <typename T>
void ParamSet<T>::zero_grad()
{
    for (auto& [name, t] : entries_)
        t.zero_grad();
}

template <typename T>
ParamSet<T> ParamSet<T>::clone(bool requires_grad) const
{
    ParamSet<T> out;
    for (const auto& [name, t] : entries_) {
        std::vector<T> data(t.values().begin(), t.values().end());
        out.add(name, Tensor<T>::from_data(t.shape(), std::move(data), requires_grad));
    }
    return out;
}

std::vector<int> UNetConfig::resolved_schedule() const
{
    if (!channel_schedule.empty())
        return channel_schedule;
    std::vector<int> s(static_cast<size_t>(levels));
    for (int i = 0; i < levels; ++i)
        s[i] = base_channels << i;
    return s;
}

int UNetConfig::downsample_factor() const
{
    return 1 << (levels - 1);
}

void UNetConfig::validate() const
{
    if (dims != 2 && dims != 3)
        throw std::invalid_argument("UNetConfig: dims must be 2 or 3");
    if (levels < 2)
        throw std::invalid_argument("UNetConfig: levels must be >= 2");
    if (in_channels < 1 || out_channels < 1 || base_channels < 1)
        throw std::invalid_argument("UNetConfig: channel counts must be >= 1");
    const auto s = resolved_schedule();
    if (static_cast<int>(s.size()) != levels)
        throw std::invalid_argument("UNetConfig: channel_schedule length must equal levels");
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] < 1)
            throw std::invalid_argument("UNetConfig: schedule widths must be >= 1");
        if (i > 0 && s[i] <= s[i - 1])
            throw std::invalid_argument("UNetConfig: schedule widths must be strictly increasing");
    }
}

UNetConfig UNetConfig::paper(int dims)
{
    UNetConfig c;
    c.dims = dims;
    c.levels = 5;
    c.base_channels = 64;
    return c;
}

UNetConfig UNetConfig::desk(int dims)
{
    UNetConfig c;
    c.dims = dims;
    c.levels = 4;
    c.base_channels = 8;
    return c;
}

UNetConfig UNetConfig::feature_variant(UNetConfig base)
{
    base.upsample_mode = UpsampleMode::linear_interp;
    base.final_adapt_conv = false;
    return base;
}

namespace {

template <typename T>
Tensor<T> kaiming_kernel(Rng& rng, Shape shape, int fan_in)
{
    // fan-in scaling for leaky-ReLU nets
    const double stddev = std::sqrt(2.0 / ((1.0 + double(kLeakySlope) * kLeakySlope) * fan_in));
    std::vector<T> data(static_cast<size_t>(numel(shape)));
    for (T& x : data)
        x = static_cast<T>(rng.normal(0.0, stddev));
    return Tensor<T>::from_data(std::move(shape), std::move(data), true);
}

template <typename T>
void add_conv(ParamSet<T>& p, Rng& rng, const std::string& prefix, int c_in, int c_out, int k,
    int dims)
{
    Shape ks{c_out, c_in};
    for (int a = 0; a < dims; ++a)
        ks.push_back(k);
    int fan_in = c_in;
    for (int a = 0; a < dims; ++a)
        fan_in *= k;
    p.add(prefix + ".kernel", kaiming_kernel<T>(rng, std::move(ks), fan_in));
    p.add(prefix + ".bias", Tensor<T>::zeros({c_out}, true));
}

template <typename T>
void add_block(ParamSet<T>& p, Rng& rng, const std::string& prefix, int c_in, int c_out, int dims)
{
    add_conv(p, rng, prefix + ".conv", c_in, c_out, 3, dims);
    p.add(prefix + ".norm.gain", Tensor<T>::full({c_out}, T(1), true));
    p.add(prefix + ".norm.shift", Tensor<T>::zeros({c_out}, true));
}

template <typename T>
void add_proj_head(ParamSet<T>& p, Rng& rng, const std::string& prefix, int c_in, int dims)
{
    add_conv(p, rng, prefix + ".c0", c_in, kProjChannels, 1, dims);
    add_conv(p, rng, prefix + ".c1", kProjChannels, kProjChannels, 1, dims);
}

template <typename T>
Tensor<T> run_block(const ParamSet<T>& p, const std::string& prefix, const Tensor<T>& x, int dims)
{
    const std::vector<int> one(static_cast<size_t>(dims), 1);
    Tensor<T> h = conv(x, p.at(prefix + ".conv.kernel"), p.at(prefix + ".conv.bias"), one, one, dims);
    h = instance_norm(h, p.at(prefix + ".norm.gain"), p.at(prefix + ".norm.shift"),
        static_cast<T>(kInstanceNormEps));
    return leaky_relu(h, static_cast<T>(kLeakySlope));
}

template <typename T>
Tensor<T> run_proj_head(const ParamSet<T>& p, const std::string& prefix, const Tensor<T>& x,
    int dims)
{
    const std::vector<int> one(static_cast<size_t>(dims), 1);
    const std::vector<int> zero(static_cast<size_t>(dims), 0);
    Tensor<T> h = conv(x, p.at(prefix + ".c0.kernel"), p.at(prefix + ".c0.bias"), one, zero, dims);
    h = leaky_relu(h, static_cast<T>(kLeakySlope));
    h = conv(h, p.at(prefix + ".c1.kernel"), p.at(prefix + ".c1.bias"), one, zero, dims);
    return l2_normalize_channels(h, static_cast<T>(kFeatureNormEps));
}

template <typename T>
struct UNetTrace {
    std::vector<Tensor<T>> encoder_levels; // post-block output per level
    Tensor<T> bottleneck;
    Tensor<T> last_decoder;
    Tensor<T> output;
};

template <typename T>
UNetTrace<T> run_unet(const ParamSet<T>& p, const UNetConfig& cfg, const Tensor<T>& x,
    bool need_output)
{
    cfg.validate();
    const int dims = cfg.dims;
    if (static_cast<int>(x.shape().size()) != dims + 1 || x.shape()[0] != cfg.in_channels)
        throw std::invalid_argument("unet_forward: expected input [" + std::to_string(cfg.in_channels)
            + ",*spatial] with " + std::to_string(dims) + " spatial axes, got " + shape_str(x.shape()));
    const int div = cfg.downsample_factor();
    for (int a = 1; a <= dims; ++a)
        if (x.shape()[a] % div != 0)
            throw std::invalid_argument("unet_forward: spatial extent " + std::to_string(x.shape()[a])
                + " not divisible by " + std::to_string(div));

    const std::vector<int> two(static_cast<size_t>(dims), 2);
    UNetTrace<T> tr;
    Tensor<T> h = x;
    for (int i = 0; i < cfg.levels; ++i) {
        const std::string lv = "enc.L" + std::to_string(i);
        h = run_block(p, lv + ".b0", h, dims);
        h = run_block(p, lv + ".b1", h, dims);
        tr.encoder_levels.push_back(h);
        if (i < cfg.levels - 1)
            h = max_pool(h, two, dims);
    }
    tr.bottleneck = tr.encoder_levels.back();
    h = tr.bottleneck;
    for (int i = cfg.levels - 2; i >= 0; --i) {
        const std::string lv = "dec.L" + std::to_string(i);
        if (cfg.upsample_mode == UpsampleMode::transposed_conv)
            h = transposed_conv(h, p.at(lv + ".up.kernel"), two, dims);
        else
            h = linear_upsample(h, 2, dims);
        h = concat_channels(h, tr.encoder_levels[static_cast<size_t>(i)]);
        h = run_block(p, lv + ".b0", h, dims);
        h = run_block(p, lv + ".b1", h, dims);
    }
    tr.last_decoder = h;
    if (need_output && cfg.final_adapt_conv) {
        const std::vector<int> one(static_cast<size_t>(dims), 1);
        const std::vector<int> zero(static_cast<size_t>(dims), 0);
        tr.output = conv(h, p.at("final.conv.kernel"), p.at("final.conv.bias"), one, zero, dims);
    } else {
        tr.output = h;
    }
    return tr;
}

} // namespace

template <typename T>
ParamSet<T> build_unet(const UNetConfig& cfg, uint64_t seed)
{
    cfg.validate();
    const auto sched = cfg.resolved_schedule();
    const int dims = cfg.dims;
    Rng rng(seed);
    ParamSet<T> p;
    for (int i = 0; i < cfg.levels; ++i) {
        const std::string lv = "enc.L" + std::to_string(i);
        const int c_in = i == 0 ? cfg.in_channels : sched[static_cast<size_t>(i - 1)];
        add_block(p, rng, lv + ".b0", c_in, sched[static_cast<size_t>(i)], dims);
        add_block(p, rng, lv + ".b1", sched[static_cast<size_t>(i)], sched[static_cast<size_t>(i)], dims);
    }
    for (int i = cfg.levels - 2; i >= 0; --i) {
        const std::string lv = "dec.L" + std::to_string(i);
        const int c_deep = sched[static_cast<size_t>(i + 1)];
        const int c_here = sched[static_cast<size_t>(i)];
        int c_up = c_deep;
        if (cfg.upsample_mode == UpsampleMode::transposed_conv) {
            Shape ks{c_deep, c_here};
            for (int a = 0; a < dims; ++a)
                ks.push_back(2);
            int fan_in = c_deep;
            for (int a = 0; a < dims; ++a)
                fan_in *= 2;
            p.add(lv + ".up.kernel", kaiming_kernel<T>(rng, std::move(ks), fan_in));
            c_up = c_here;
        }
        add_block(p, rng, lv + ".b0", c_up + c_here, c_here, dims);
        add_block(p, rng, lv + ".b1", c_here, c_here, dims);
    }
    if (cfg.final_adapt_conv) {
        add_conv(p, rng, "final.conv", sched[0], cfg.out_channels, 1, dims);
    } else {
        // feature variant: contrastive projection heads instead of the
        // output adaptation layer
        add_proj_head(p, rng, "proj.sem", sched[static_cast<size_t>(cfg.levels - 1)], dims);
        add_proj_head(p, rng, "proj.anat", sched[0], dims);
    }
    return p;
}

template <typename T>
Tensor<T> unet_forward(const ParamSet<T>& params, const UNetConfig& cfg, const Tensor<T>& x)
{
    return run_unet(params, cfg, x, true).output;
}

template <typename T>
std::vector<Tensor<T>> encoder_features(const ParamSet<T>& params, const UNetConfig& cfg,
    const Tensor<T>& x)
{
    return run_unet(params, cfg, x, false).encoder_levels;
}

template <typename T>
FeatureBundleT<T> feature_forward(const ParamSet<T>& params, const UNetConfig& cfg,
    const Tensor<T>& x)
{
    if (cfg.upsample_mode != UpsampleMode::linear_interp || cfg.final_adapt_conv)
        throw std::invalid_argument(
            "feature_forward: config must use linear_interp upsampling and no final adaptation conv");
    auto tr = run_unet(params, cfg, x, false);
    FeatureBundleT<T> fb;
    fb.semantic = run_proj_head(params, "proj.sem", tr.bottleneck, cfg.dims);
    fb.anatomy = run_proj_head(params, "proj.anat", tr.last_decoder, cfg.dims);
    return fb;
}

namespace {
constexpr int kDiscWidths[4] = {16, 32, 64, 128};
}

template <typename T>
ParamSet<T> build_discriminator(uint64_t seed)
{
    Rng rng(seed);
    ParamSet<T> p;
    int c_in = 1;
    for (int i = 0; i < 4; ++i) {
        const std::string lv = "d.b" + std::to_string(i);
        add_conv(p, rng, lv + ".conv", c_in, kDiscWidths[i], 4, 2);
        if (i > 0) {
            p.add(lv + ".norm.gain", Tensor<T>::full({kDiscWidths[i]}, T(1), true));
            p.add(lv + ".norm.shift", Tensor<T>::zeros({kDiscWidths[i]}, true));
        }
        c_in = kDiscWidths[i];
    }
    add_conv(p, rng, "d.final.conv", c_in, 1, 1, 2);
    return p;
}

template <typename T>
Tensor<T> disc_forward(const ParamSet<T>& params, const Tensor<T>& x)
{
    if (x.shape().size() != 3 || x.shape()[0] != 1)
        throw std::invalid_argument("disc_forward: expected [1,H,W] input, got " + shape_str(x.shape()));
    if (x.shape()[1] < 16 || x.shape()[2] < 16)
        throw std::invalid_argument("disc_forward: input too small, need H,W >= 16");
    const std::vector<int> s2{2, 2}, p1{1, 1}, s1{1, 1}, p0{0, 0};
    Tensor<T> h = x;
    for (int i = 0; i < 4; ++i) {
        const std::string lv = "d.b" + std::to_string(i);
        h = conv(h, params.at(lv + ".conv.kernel"), params.at(lv + ".conv.bias"), s2, p1, 2);
        if (i > 0)
            h = instance_norm(h, params.at(lv + ".norm.gain"), params.at(lv + ".norm.shift"),
                static_cast<T>(kInstanceNormEps));
        h = leaky_relu(h, static_cast<T>(kLeakySlope));
    }
    return conv(h, params.at("d.final.conv.kernel"), params.at("d.final.conv.bias"), s1, p0, 2);
}

#define ORTHOCT_NETWORK_IMPL(T)                                                       \
    template class ParamSet<T>;                                                       \
    template ParamSet<T> build_unet<T>(const UNetConfig&, uint64_t);                  \
    template Tensor<T> unet_forward<T>(const ParamSet<T>&, const UNetConfig&,         \
        const Tensor<T>&);                                                            \
    template std::vector<Tensor<T>> encoder_features<T>(const ParamSet<T>&,           \
        const UNetConfig&, const Tensor<T>&);                                         \
    template FeatureBundleT<T> feature_forward<T>(const ParamSet<T>&, const UNetConfig&, \
        const Tensor<T>&);                                                            \
    template ParamSet<T> build_discriminator<T>(uint64_t);                            \
    template Tensor<T> disc_forward<T>(const ParamSet<T>&, const Tensor<T>&);

ORTHOCT_NETWORK_IMPL(float)
ORTHOCT_NETWORK_IMPL(double)
#undef ORTHOCT_NETWORK_IMPL

} // namespace orthoct

#pragma once

#include "orthoct/tensor.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace orthoct {

/// Named parameter collection with deterministic (insertion) order.
/// Two sets built from the same config expose identical names and
/// shapes regardless of seed, which is what the EMA blend relies on.
template <typename T>
class ParamSet {
public:
    void add(std::string name, Tensor<T> t);
    bool contains(std::string_view name) const;
    Tensor<T>& at(std::string_view name);
    const Tensor<T>& at(std::string_view name) const;
    size_t count() const { return entries_.size(); }
    int64_t total_size() const;
    const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
    std::vector<std::pair<std::string, Tensor<T>>>& entries_mut() { return entries_; }
    void zero_grad();
    ParamSet clone(bool requires_grad) const; // deep copy of values

private:
    std::vector<std::pair<std::string, Tensor<T>>> entries_;
    std::unordered_map<std::string, size_t> index_;
};

using NetworkParams = ParamSet<float>;

enum class UpsampleMode { transposed_conv, linear_interp };

/// Channel width of the contrastive projection heads.
inline constexpr int kProjChannels = 32;

struct UNetConfig {
    int dims = 3;
    int levels = 4;
    int base_channels = 8;
    std::vector<int> channel_schedule; // resolved from base when empty
    int in_channels = 1;
    int out_channels = 1;
    bool final_adapt_conv = true;
    UpsampleMode upsample_mode = UpsampleMode::transposed_conv;

    std::vector<int> resolved_schedule() const;
    int downsample_factor() const; // 2^(levels-1)
    void validate() const;

    /// Full-scale configuration: 5 levels, widths 64..1024.
    static UNetConfig paper(int dims);
    /// Desk-scale configuration: 4 levels, widths 8..64.
    static UNetConfig desk(int dims);
    /// Feature-network variant of a config: linear interpolation
    /// upsampling, no output adaptation conv, projection heads.
    static UNetConfig feature_variant(UNetConfig base);
};

/// Unit-norm feature maps from the feature network: semantic from the
/// encoder bottleneck (spatial extent input/2^(levels-1)), anatomy
/// from the last decoder level (full extent).
template <typename T>
struct FeatureBundleT {
    Tensor<T> semantic;
    Tensor<T> anatomy;
};

using FeatureBundle = FeatureBundleT<float>;

/// Build U-Net parameters: per level two blocks of {conv k3 pad1,
/// instance norm, leaky ReLU}; max-pool downsampling; upsampling per
/// cfg with skip concatenation; optional final 1x1 conv. Kaiming
/// fan-in init for kernels, zero bias/shift, unit gain, all drawn from
/// a deterministic stream over `seed`. When final_adapt_conv is off
/// the net is the feature variant and projection-head parameters are
/// included.
template <typename T>
ParamSet<T> build_unet(const UNetConfig& cfg, uint64_t seed);

/// Forward pass; spatial extents must divide by 2^(levels-1) and are
/// preserved in the output.
template <typename T>
Tensor<T> unet_forward(const ParamSet<T>& params, const UNetConfig& cfg, const Tensor<T>& x);

/// Encoder level outputs (pre-pool) plus the bottleneck; used by the
/// perceptual loss as a fixed multi-level feature stack.
template <typename T>
std::vector<Tensor<T>> encoder_features(const ParamSet<T>& params, const UNetConfig& cfg,
    const Tensor<T>& x);

/// Projection-head outputs at the bottleneck and final decoder level,
/// L2-normalized per spatial location. Requires the feature variant
/// (linear_interp upsampling, no final adaptation conv).
template <typename T>
FeatureBundleT<T> feature_forward(const ParamSet<T>& params, const UNetConfig& cfg,
    const Tensor<T>& x);

/// Patch discriminator: four stride-2 conv blocks (instance norm on
/// all but the first, leaky ReLU) then a 1x1 conv to one realness
/// channel. Input [1,H,W] with H,W >= 16 yields [1,H/16,W/16].
template <typename T>
ParamSet<T> build_discriminator(uint64_t seed);

template <typename T>
Tensor<T> disc_forward(const ParamSet<T>& params, const Tensor<T>& x);

#define ORTHOCT_NETWORK_DECL(T)                                                              \
    extern template class ParamSet<T>;                                                       \
    extern template ParamSet<T> build_unet<T>(const UNetConfig&, uint64_t);                  \
    extern template Tensor<T> unet_forward<T>(const ParamSet<T>&, const UNetConfig&,         \
        const Tensor<T>&);                                                                   \
    extern template std::vector<Tensor<T>> encoder_features<T>(const ParamSet<T>&,           \
        const UNetConfig&, const Tensor<T>&);                                                \
    extern template FeatureBundleT<T> feature_forward<T>(const ParamSet<T>&, const UNetConfig&, \
        const Tensor<T>&);                                                                   \
    extern template ParamSet<T> build_discriminator<T>(uint64_t);                            \
    extern template Tensor<T> disc_forward<T>(const ParamSet<T>&, const Tensor<T>&);

ORTHOCT_NETWORK_DECL(float)
ORTHOCT_NETWORK_DECL(double)
#undef ORTHOCT_NETWORK_DECL

} // namespace orthoct

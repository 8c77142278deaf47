#pragma once

#include "orthoct/network.hpp"
#include "orthoct/rng.hpp"
#include "orthoct/tensor.hpp"

#include <vector>

namespace orthoct {

/// Contrastive sampling and self-distillation knobs.
struct ContrastiveConfig {
    int n_pos_s = 4;        // semantic positives per anchor
    int n_neg_a = 8;        // anatomy negatives per anchor
    double tau = 0.07;      // InfoNCE temperature
    int window_radius = 2;  // neighbor search radius, feature-map pixels
    int anchors_per_image = 256;
    double ema_momentum = 0.99;

    void validate() const;
};

struct LossWeights {
    double w_l1 = 1.0;
    double w_perc = 0.1;
    double w_adv = 0.01;
    double w_contrast = 0.1;
    double w_semantic_vs_anatomy = 0.5; // split inside the contrastive term

    void validate() const;
};

struct GridPos {
    int r = 0;
    int c = 0;
    bool operator==(const GridPos&) const = default;
};

template <typename T>
struct AdversarialPair {
    Tensor<T> d_loss;
    Tensor<T> g_loss;
};

template <typename T> Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);
template <typename T> Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// Sum over the frozen extractor's encoder levels of mean squared
/// feature differences. The extractor parameters never receive
/// gradient.
template <typename T>
Tensor<T> perceptual_loss(const ParamSet<T>& extractor, const UNetConfig& extractor_cfg,
    const Tensor<T>& pred, const Tensor<T>& target);

/// Least-squares GAN objectives on patch maps:
/// d = (mean((real-1)^2) + mean(fake^2)) / 2, g = mean((fake-1)^2).
template <typename T>
AdversarialPair<T> adversarial_losses(const Tensor<T>& disc_real, const Tensor<T>& disc_fake);

template <typename T> Tensor<T> lsgan_d_loss(const Tensor<T>& disc_real, const Tensor<T>& disc_fake);
template <typename T> Tensor<T> lsgan_g_loss(const Tensor<T>& disc_fake);

/// The n in-window, non-anchor positions most cosine-similar to the
/// anchor vector of `fmap` [D,H,W]; ties and ordering break by
/// row-major position. Fewer than n candidates (window clipped at the
/// border) returns them all.
template <typename T>
std::vector<GridPos> select_neighbors(const Tensor<T>& fmap, GridPos anchor, int n, int radius);

/// Per anchor, the positive set is the anchor position plus the
/// n_pos_s most teacher-similar neighbors; the loss is the mean over
/// all (anchor, position) pairs of the squared L2 distance between
/// student and teacher semantic vectors at that position. Gradient
/// flows into the student only.
template <typename T>
Tensor<T> semantic_loss(const FeatureBundleT<T>& student, const FeatureBundleT<T>& teacher,
    std::span<const GridPos> anchors, const ContrastiveConfig& cfg);

/// InfoNCE over anatomy features: positive pair is student/teacher at
/// the anchor; negatives pair the student anchor vector with the
/// n_neg_a most teacher-similar neighbors. Stabilized log-sum-exp;
/// gradient into the student only.
template <typename T>
Tensor<T> anatomy_infonce(const FeatureBundleT<T>& student, const FeatureBundleT<T>& teacher,
    std::span<const GridPos> anchors, const ContrastiveConfig& cfg);

/// theta_t <- m*theta_t + (1-m)*theta_s, computed as
/// theta_t += (1-m)*(theta_s - theta_t) so a converged teacher is a
/// bitwise fixed point. No gradient tracking.
template <typename T>
void ema_update(ParamSet<T>& teacher, const ParamSet<T>& student, double m);

/// Weighted sum of the stage-2 components; the contrastive term is
/// split*semantic + (1-split)*anatomy. Non-finite components fail
/// fast.
template <typename T>
Tensor<T> hybrid_loss(const Tensor<T>& l1, const Tensor<T>& perc, const Tensor<T>& g_adv,
    const Tensor<T>& semantic, const Tensor<T>& anatomy, const LossWeights& w);

/// Uniform anchor positions from a seeded stream; all positions in
/// row-major order when count covers the whole map.
std::vector<GridPos> sample_anchors(int h, int w, int count, Rng& rng);

#define ORTHOCT_LOSSES_DECL(T)                                                               \
    extern template Tensor<T> mse_loss<T>(const Tensor<T>&, const Tensor<T>&);               \
    extern template Tensor<T> l1_loss<T>(const Tensor<T>&, const Tensor<T>&);                \
    extern template Tensor<T> perceptual_loss<T>(const ParamSet<T>&, const UNetConfig&,      \
        const Tensor<T>&, const Tensor<T>&);                                                 \
    extern template AdversarialPair<T> adversarial_losses<T>(const Tensor<T>&, const Tensor<T>&); \
    extern template Tensor<T> lsgan_d_loss<T>(const Tensor<T>&, const Tensor<T>&);           \
    extern template Tensor<T> lsgan_g_loss<T>(const Tensor<T>&);                             \
    extern template std::vector<GridPos> select_neighbors<T>(const Tensor<T>&, GridPos, int, int); \
    extern template Tensor<T> semantic_loss<T>(const FeatureBundleT<T>&, const FeatureBundleT<T>&, \
        std::span<const GridPos>, const ContrastiveConfig&);                                 \
    extern template Tensor<T> anatomy_infonce<T>(const FeatureBundleT<T>&,                   \
        const FeatureBundleT<T>&, std::span<const GridPos>, const ContrastiveConfig&);       \
    extern template void ema_update<T>(ParamSet<T>&, const ParamSet<T>&, double);            \
    extern template Tensor<T> hybrid_loss<T>(const Tensor<T>&, const Tensor<T>&,             \
        const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const LossWeights&);

ORTHOCT_LOSSES_DECL(float)
ORTHOCT_LOSSES_DECL(double)
#undef ORTHOCT_LOSSES_DECL

} // namespace orthoct

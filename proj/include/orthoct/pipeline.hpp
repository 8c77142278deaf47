#pragma once

#include "orthoct/checkpoint.hpp"
#include "orthoct/data.hpp"
#include "orthoct/geometry.hpp"
#include "orthoct/losses.hpp"
#include "orthoct/network.hpp"
#include "orthoct/optim.hpp"

#include <optional>
#include <string>
#include <vector>

namespace orthoct {

struct StageParams {
    int epochs = 20;
    double lr_init = 2e-4;
    double lr_min = 1e-6;
};

struct TrainConfig {
    StageParams stage1{20, 2e-4, 1e-6};
    StageParams stage2{5, 1e-4, 1e-6};
    int batch_size = 1;
    uint64_t seed = 42;
    AdamWConfig adamw{};
    LossWeights weights{};
    ContrastiveConfig contrastive{};
    int checkpoint_every = 5; // epochs
    UNetConfig coarse = UNetConfig::desk(3);
    UNetConfig refiner = UNetConfig::desk(2);
    uint64_t perceptual_seed = 7777;
    float hu_lo = -1000.f;
    float hu_hi = 1000.f;

    UNetConfig feature_cfg() const { return UNetConfig::feature_variant(refiner); }
    void validate() const;

    /// Full-scale settings: 220/100 epochs at lr 2e-4/1e-4 with
    /// 5-level base-64 networks.
    static TrainConfig paper();
};

struct TrainResult {
    std::string checkpoint_path;
    std::string log_path;
    std::vector<double> loss_trace; // total loss per optimizer step
};

/// Back-projection initialization for a pair of projections; the
/// baseline every reconstruction is compared against.
Volume reconstruct_init(const Projection& ap, const Projection& lat);

/// Stage 1: per step, project both views, back-project, run the 3-D
/// coarse net and minimize MSE against the normalized ground truth.
/// Writes stage1.ckpt and stage1_log.csv under out_dir.
TrainResult train_stage1(const std::vector<Volume>& train_set, const TrainConfig& cfg,
    const std::string& out_dir, const std::optional<std::string>& resume_ckpt = std::nullopt);

/// Stage 2: freeze the coarse net, refine axial slices with the 2-D
/// net under the hybrid loss (L1 + perceptual + adversarial +
/// contrastive with the EMA teacher). Writes stage2.ckpt and
/// stage2_log.csv under out_dir.
TrainResult train_stage2(const std::vector<Volume>& train_set, const std::string& coarse_ckpt,
    const TrainConfig& cfg, const std::string& out_dir,
    const std::optional<std::string>& resume_ckpt = std::nullopt);

/// Back-project, run the coarse net, refine each axial slice, map back
/// to HU. Deterministic; throws on checkpoint/geometry mismatch.
Volume reconstruct(const Projection& ap, const Projection& lat, const std::string& coarse_ckpt,
    const std::string& refine_ckpt);

/// The frozen random-feature extractor used by the perceptual loss and
/// the perceptual metric.
std::pair<NetworkParams, UNetConfig> make_perceptual_extractor(uint64_t seed,
    const UNetConfig& like);

} // namespace orthoct

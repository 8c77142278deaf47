#include "orthoct/pipeline.hpp"

#include "orthoct/nn_ops.hpp"
#include "orthoct/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

namespace orthoct {

void TrainConfig::validate() const
{
    if (stage1.epochs < 1 || stage2.epochs < 1)
        throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (!(stage1.lr_init > 0 && stage2.lr_init > 0 && stage1.lr_min >= 0 && stage2.lr_min >= 0))
        throw std::invalid_argument("TrainConfig: learning rates must be positive");
    if (batch_size < 1)
        throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (checkpoint_every < 1)
        throw std::invalid_argument("TrainConfig: checkpoint_every must be >= 1");
    if (!(hu_lo < hu_hi))
        throw std::invalid_argument("TrainConfig: hu_lo must be < hu_hi");
    weights.validate();
    contrastive.validate();
    coarse.validate();
    refiner.validate();
    if (coarse.dims != 3)
        throw std::invalid_argument("TrainConfig: coarse net must be 3-D");
    if (refiner.dims != 2)
        throw std::invalid_argument("TrainConfig: refiner net must be 2-D");
}

TrainConfig TrainConfig::paper()
{
    TrainConfig c;
    c.stage1 = {220, 2e-4, 1e-6};
    c.stage2 = {100, 1e-4, 1e-6};
    c.coarse = UNetConfig::paper(3);
    c.refiner = UNetConfig::paper(2);
    return c;
}

Volume reconstruct_init(const Projection& ap, const Projection& lat)
{
    if (ap.axis != ProjAxis::AP || lat.axis != ProjAxis::LAT)
        throw std::invalid_argument("reconstruct_init: expected an AP and a LAT projection");
    if (ap.dims[1] != lat.dims[1])
        throw std::invalid_argument("reconstruct_init: projection z extents disagree");
    if (ap.pixel_spacing[1] != lat.pixel_spacing[1])
        throw std::invalid_argument("reconstruct_init: projection z spacings disagree");
    const std::array<int, 3> dims{ap.dims[0], lat.dims[0], ap.dims[1]};
    const std::array<float, 3> spacing{ap.pixel_spacing[0], lat.pixel_spacing[0],
        ap.pixel_spacing[1]};
    return back_project(ap, lat, dims, spacing);
}

std::pair<NetworkParams, UNetConfig> make_perceptual_extractor(uint64_t seed, const UNetConfig& like)
{
    const UNetConfig cfg = UNetConfig::feature_variant(like);
    return {build_unet<float>(cfg, seed).clone(false), cfg};
}

namespace {

namespace fs = std::filesystem;

std::string fmt_g(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

// deterministic per-epoch ordering; independent of history so resumed
// runs replay the same sequence
template <typename T>
void shuffle_epoch(std::vector<T>& items, uint64_t seed, int epoch)
{
    Rng rng(seed * 0x9e3779b97f4a7c15ull + static_cast<uint64_t>(epoch) + 1);
    for (size_t i = items.size(); i > 1; --i)
        std::swap(items[i - 1], items[static_cast<size_t>(rng.uniform_int(static_cast<int>(i)))]);
}

Tensor<float> slice_tensor(const std::vector<float>& volume_norm, int ny, int nx, int z)
{
    const float* src = volume_norm.data() + static_cast<size_t>(z) * ny * nx;
    return Tensor<float>::from_data({1, ny, nx}, std::vector<float>(src, src + int64_t(ny) * nx));
}

Tensor<float> mean_of(std::vector<Tensor<float>> parts)
{
    Tensor<float> total = parts[0];
    for (size_t i = 1; i < parts.size(); ++i)
        total = add(total, parts[i]);
    return parts.size() > 1 ? scale(total, 1.0f / static_cast<float>(parts.size())) : total;
}

struct Stage1Data {
    std::vector<Tensor<float>> inputs;  // normalized back-projection init
    std::vector<Tensor<float>> targets; // normalized ground truth
    int nx = 0, ny = 0, nz = 0;
};

Stage1Data prepare_stage1(const std::vector<Volume>& vols, const TrainConfig& cfg)
{
    if (vols.empty())
        throw std::invalid_argument("training set is empty");
    Stage1Data data;
    data.nx = vols[0].dims[0];
    data.ny = vols[0].dims[1];
    data.nz = vols[0].dims[2];
    for (const Volume& v : vols) {
        if (v.dims != vols[0].dims)
            throw std::invalid_argument("training volumes must share dims");
        const Projection ap = forward_project(v, ProjAxis::AP);
        const Projection lat = forward_project(v, ProjAxis::LAT);
        const Volume init = back_project(ap, lat, v.dims, v.spacing);
        data.inputs.push_back(normalize_volume(init, cfg.hu_lo, cfg.hu_hi));
        data.targets.push_back(normalize_volume(v, cfg.hu_lo, cfg.hu_hi));
    }
    return data;
}

} // namespace

TrainResult train_stage1(const std::vector<Volume>& train_set, const TrainConfig& cfg,
    const std::string& out_dir, const std::optional<std::string>& resume_ckpt)
{
    cfg.validate();
    fs::create_directories(out_dir);
    const Stage1Data data = prepare_stage1(train_set, cfg);

    NetworkParams coarse;
    OptimizerState<float> opt;
    int start_epoch = 0;
    int64_t step = 0;
    if (resume_ckpt) {
        const Checkpoint ckpt = load_checkpoint(*resume_ckpt);
        if (ckpt.meta.at("stage").get<int>() != 1)
            throw std::runtime_error("resume checkpoint is not a stage-1 checkpoint");
        coarse = unpack_params(ckpt, "coarse.", true);
        opt = unpack_opt_state(ckpt, "opt.g.", coarse);
        start_epoch = ckpt.meta.at("epoch").get<int>();
        step = ckpt.meta.at("step").get<int64_t>();
    } else {
        coarse = build_unet<float>(cfg.coarse, cfg.seed);
        opt = OptimizerState<float>::init(coarse);
    }

    const std::string log_path = (fs::path(out_dir) / "stage1_log.csv").string();
    std::ofstream log(log_path, resume_ckpt ? std::ios::app : std::ios::trunc);
    if (!log)
        throw std::runtime_error("cannot open " + log_path);
    if (!resume_ckpt)
        log << "epoch,step,loss_total,loss_mse,lr\n";

    const std::string ckpt_path = (fs::path(out_dir) / "stage1.ckpt").string();
    const auto save = [&](int epoch_done) {
        Checkpoint ckpt;
        ckpt.meta["stage"] = 1;
        ckpt.meta["epoch"] = epoch_done;
        ckpt.meta["step"] = step;
        ckpt.meta["hu_lo"] = cfg.hu_lo;
        ckpt.meta["hu_hi"] = cfg.hu_hi;
        ckpt.meta["coarse_cfg"] = unet_config_to_json(cfg.coarse);
        pack_params(ckpt, "coarse.", coarse);
        pack_opt_state(ckpt, "opt.g.", coarse, opt);
        save_checkpoint(ckpt, ckpt_path);
    };

    TrainResult result;
    std::vector<size_t> order(data.inputs.size());
    for (size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    for (int epoch = start_epoch; epoch < cfg.stage1.epochs; ++epoch) {
        const double lr = cosine_lr(epoch, cfg.stage1.epochs, cfg.stage1.lr_init, cfg.stage1.lr_min);
        shuffle_epoch(order, cfg.seed, epoch);
        for (size_t b = 0; b < order.size(); b += static_cast<size_t>(cfg.batch_size)) {
            std::vector<Tensor<float>> batch_losses;
            for (size_t k = b; k < std::min(order.size(), b + static_cast<size_t>(cfg.batch_size));
                 ++k) {
                const Tensor<float> pred = unet_forward(coarse, cfg.coarse, data.inputs[order[k]]);
                batch_losses.push_back(mse_loss(pred, data.targets[order[k]]));
            }
            const Tensor<float> loss = mean_of(std::move(batch_losses));
            if (!std::isfinite(double(loss.item())))
                throw std::runtime_error("stage 1: non-finite loss at epoch " + std::to_string(epoch)
                    + " step " + std::to_string(step));
            coarse.zero_grad();
            backward(loss);
            adamw_step(coarse, opt, lr, cfg.adamw);
            ++step;
            log << epoch << "," << step << "," << fmt_g(loss.item()) << "," << fmt_g(loss.item())
                << "," << fmt_g(lr) << "\n";
            result.loss_trace.push_back(loss.item());
        }
        if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.stage1.epochs)
            save(epoch + 1);
    }
    log.flush();
    result.checkpoint_path = ckpt_path;
    result.log_path = log_path;
    return result;
}

TrainResult train_stage2(const std::vector<Volume>& train_set, const std::string& coarse_ckpt,
    const TrainConfig& cfg, const std::string& out_dir,
    const std::optional<std::string>& resume_ckpt)
{
    cfg.validate();
    if (train_set.empty())
        throw std::invalid_argument("training set is empty");
    fs::create_directories(out_dir);

    const Checkpoint cckpt = load_checkpoint(coarse_ckpt);
    if (cckpt.meta.at("stage").get<int>() != 1)
        throw std::runtime_error(coarse_ckpt + " is not a stage-1 checkpoint");
    const NetworkParams coarse = unpack_params(cckpt, "coarse.", false);
    const UNetConfig coarse_cfg = unet_config_from_json(cckpt.meta.at("coarse_cfg"));
    const float hu_lo = cckpt.meta.at("hu_lo").get<float>();
    const float hu_hi = cckpt.meta.at("hu_hi").get<float>();

    const UNetConfig fcfg = cfg.feature_cfg();
    auto [extractor, extractor_cfg] = make_perceptual_extractor(cfg.perceptual_seed, cfg.refiner);

    NetworkParams refiner, student, teacher, disc;
    OptimizerState<float> opt_g, opt_s, opt_d;
    int start_epoch = 0;
    int64_t step = 0;
    if (resume_ckpt) {
        const Checkpoint ckpt = load_checkpoint(*resume_ckpt);
        if (ckpt.meta.at("stage").get<int>() != 2)
            throw std::runtime_error("resume checkpoint is not a stage-2 checkpoint");
        refiner = unpack_params(ckpt, "refiner.", true);
        student = unpack_params(ckpt, "student.", true);
        teacher = unpack_params(ckpt, "teacher.", false);
        disc = unpack_params(ckpt, "disc.", true);
        opt_g = unpack_opt_state(ckpt, "opt.g.", refiner);
        opt_s = unpack_opt_state(ckpt, "opt.s.", student);
        opt_d = unpack_opt_state(ckpt, "opt.d.", disc);
        start_epoch = ckpt.meta.at("epoch").get<int>();
        step = ckpt.meta.at("step").get<int64_t>();
    } else {
        refiner = build_unet<float>(cfg.refiner, cfg.seed + 1);
        student = build_unet<float>(fcfg, cfg.seed + 2);
        teacher = student.clone(false); // teacher starts as the student copy
        disc = build_discriminator<float>(cfg.seed + 3);
        opt_g = OptimizerState<float>::init(refiner);
        opt_s = OptimizerState<float>::init(student);
        opt_d = OptimizerState<float>::init(disc);
    }

    // frozen coarse outputs and normalized targets, cached per volume
    const int nx = train_set[0].dims[0], ny = train_set[0].dims[1], nz = train_set[0].dims[2];
    std::vector<std::vector<float>> coarse_cache(train_set.size());
    std::vector<std::vector<float>> target_cache(train_set.size());
    const auto volume_inputs = [&](size_t vi) {
        if (coarse_cache[vi].empty()) {
            const Volume& v = train_set[vi];
            if (v.dims != train_set[0].dims)
                throw std::invalid_argument("training volumes must share dims");
            const Projection ap = forward_project(v, ProjAxis::AP);
            const Projection lat = forward_project(v, ProjAxis::LAT);
            const Volume init = back_project(ap, lat, v.dims, v.spacing);
            const Tensor<float> x = normalize_volume(init, hu_lo, hu_hi);
            const Tensor<float> out = unet_forward(coarse, coarse_cfg, x);
            coarse_cache[vi].assign(out.values().begin(), out.values().end());
            const Tensor<float> y = normalize_volume(v, hu_lo, hu_hi);
            target_cache[vi].assign(y.values().begin(), y.values().end());
        }
    };

    const std::string log_path = (fs::path(out_dir) / "stage2_log.csv").string();
    std::ofstream log(log_path, resume_ckpt ? std::ios::app : std::ios::trunc);
    if (!log)
        throw std::runtime_error("cannot open " + log_path);
    if (!resume_ckpt)
        log << "epoch,step,loss_total,loss_l1,loss_perc,loss_adv,loss_semantic,loss_anatomy,"
               "loss_disc,lr\n";

    const std::string ckpt_path = (fs::path(out_dir) / "stage2.ckpt").string();
    const auto save = [&](int epoch_done) {
        Checkpoint ckpt;
        ckpt.meta["stage"] = 2;
        ckpt.meta["epoch"] = epoch_done;
        ckpt.meta["step"] = step;
        ckpt.meta["hu_lo"] = hu_lo;
        ckpt.meta["hu_hi"] = hu_hi;
        ckpt.meta["refiner_cfg"] = unet_config_to_json(cfg.refiner);
        ckpt.meta["feature_cfg"] = unet_config_to_json(fcfg);
        pack_params(ckpt, "refiner.", refiner);
        pack_params(ckpt, "student.", student);
        pack_params(ckpt, "teacher.", teacher);
        pack_params(ckpt, "disc.", disc);
        pack_opt_state(ckpt, "opt.g.", refiner, opt_g);
        pack_opt_state(ckpt, "opt.s.", student, opt_s);
        pack_opt_state(ckpt, "opt.d.", disc, opt_d);
        save_checkpoint(ckpt, ckpt_path);
    };

    const bool contrastive_on = cfg.weights.w_contrast > 0.0;
    TrainResult result;
    std::vector<std::pair<size_t, int>> items; // (volume, slice)
    for (size_t vi = 0; vi < train_set.size(); ++vi)
        for (int z = 0; z < nz; ++z)
            items.emplace_back(vi, z);

    for (int epoch = start_epoch; epoch < cfg.stage2.epochs; ++epoch) {
        const double lr = cosine_lr(epoch, cfg.stage2.epochs, cfg.stage2.lr_init, cfg.stage2.lr_min);
        shuffle_epoch(items, cfg.seed + 17, epoch);
        Rng anchor_rng(cfg.seed * 0x51ed270b76cf1a45ull + static_cast<uint64_t>(epoch) + 11);
        for (size_t b = 0; b < items.size(); b += static_cast<size_t>(cfg.batch_size)) {
            const size_t b_end = std::min(items.size(), b + static_cast<size_t>(cfg.batch_size));
            std::vector<Tensor<float>> refined(b_end - b), targets(b_end - b);
            std::vector<Tensor<float>> d_parts;
            for (size_t k = b; k < b_end; ++k) {
                const auto [vi, z] = items[k];
                volume_inputs(vi);
                const Tensor<float> x = slice_tensor(coarse_cache[vi], ny, nx, z);
                const Tensor<float> y = slice_tensor(target_cache[vi], ny, nx, z);
                refined[k - b] = unet_forward(refiner, cfg.refiner, x);
                targets[k - b] = y;
                // discriminator sees the refined slice as a constant
                const Tensor<float> fake_detached = Tensor<float>::from_data(
                    refined[k - b].shape(),
                    {refined[k - b].values().begin(), refined[k - b].values().end()});
                d_parts.push_back(
                    lsgan_d_loss(disc_forward(disc, y), disc_forward(disc, fake_detached)));
            }
            const Tensor<float> d_loss = mean_of(std::move(d_parts));
            if (!std::isfinite(double(d_loss.item())))
                throw std::runtime_error("stage 2: non-finite discriminator loss at step "
                    + std::to_string(step));
            disc.zero_grad();
            backward(d_loss);
            adamw_step(disc, opt_d, lr, cfg.adamw);

            // generator pass against the updated discriminator
            std::vector<Tensor<float>> l1_parts, perc_parts, adv_parts, sem_parts, anat_parts;
            for (size_t k = 0; k < refined.size(); ++k) {
                l1_parts.push_back(l1_loss(refined[k], targets[k]));
                perc_parts.push_back(
                    perceptual_loss(extractor, extractor_cfg, refined[k], targets[k]));
                adv_parts.push_back(lsgan_g_loss(disc_forward(disc, refined[k])));
                if (contrastive_on) {
                    const FeatureBundle stu = feature_forward(student, fcfg, refined[k]);
                    const FeatureBundle tea = feature_forward(teacher, fcfg, targets[k]);
                    const auto& ss = stu.semantic.shape();
                    const auto& as = stu.anatomy.shape();
                    const auto sem_anchors = sample_anchors(ss[1], ss[2],
                        cfg.contrastive.anchors_per_image, anchor_rng);
                    const auto anat_anchors = sample_anchors(as[1], as[2],
                        cfg.contrastive.anchors_per_image, anchor_rng);
                    sem_parts.push_back(semantic_loss(stu, tea, sem_anchors, cfg.contrastive));
                    anat_parts.push_back(anatomy_infonce(stu, tea, anat_anchors, cfg.contrastive));
                }
            }
            Tensor<float> sem_loss_t, anat_loss_t;
            if (contrastive_on) {
                sem_loss_t = mean_of(std::move(sem_parts));
                anat_loss_t = mean_of(std::move(anat_parts));
            } else {
                sem_loss_t = Tensor<float>::scalar(0.f);
                anat_loss_t = Tensor<float>::scalar(0.f);
            }
            const Tensor<float> l1_t = mean_of(std::move(l1_parts));
            const Tensor<float> perc_t = mean_of(std::move(perc_parts));
            const Tensor<float> adv_t = mean_of(std::move(adv_parts));
            const Tensor<float> total
                = hybrid_loss(l1_t, perc_t, adv_t, sem_loss_t, anat_loss_t, cfg.weights);

            refiner.zero_grad();
            student.zero_grad();
            disc.zero_grad(); // the g pass deposits gradient there too
            backward(total);
            adamw_step(refiner, opt_g, lr, cfg.adamw);
            if (contrastive_on)
                adamw_step(student, opt_s, lr, cfg.adamw);
            ema_update(teacher, student, cfg.contrastive.ema_momentum);
            ++step;
            log << epoch << "," << step << "," << fmt_g(total.item()) << "," << fmt_g(l1_t.item())
                << "," << fmt_g(perc_t.item()) << "," << fmt_g(adv_t.item()) << ","
                << fmt_g(sem_loss_t.item()) << "," << fmt_g(anat_loss_t.item()) << ","
                << fmt_g(d_loss.item()) << "," << fmt_g(lr) << "\n";
            result.loss_trace.push_back(total.item());
        }
        if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.stage2.epochs)
            save(epoch + 1);
    }
    log.flush();
    result.checkpoint_path = ckpt_path;
    result.log_path = log_path;
    return result;
}

Volume reconstruct(const Projection& ap, const Projection& lat, const std::string& coarse_ckpt,
    const std::string& refine_ckpt)
{
    const Checkpoint cckpt = load_checkpoint(coarse_ckpt);
    if (cckpt.meta.at("stage").get<int>() != 1)
        throw std::runtime_error(coarse_ckpt + " is not a stage-1 checkpoint");
    const Checkpoint rckpt = load_checkpoint(refine_ckpt);
    if (rckpt.meta.at("stage").get<int>() != 2)
        throw std::runtime_error(refine_ckpt + " is not a stage-2 checkpoint");

    const NetworkParams coarse = unpack_params(cckpt, "coarse.", false);
    const UNetConfig coarse_cfg = unet_config_from_json(cckpt.meta.at("coarse_cfg"));
    const NetworkParams refiner = unpack_params(rckpt, "refiner.", false);
    const UNetConfig refiner_cfg = unet_config_from_json(rckpt.meta.at("refiner_cfg"));
    const float hu_lo = cckpt.meta.at("hu_lo").get<float>();
    const float hu_hi = cckpt.meta.at("hu_hi").get<float>();

    const Volume init = reconstruct_init(ap, lat);
    const auto dims = init.dims;
    const int div = coarse_cfg.downsample_factor();
    if (dims[0] % div || dims[1] % div || dims[2] % div)
        throw std::runtime_error("reconstruct: projection extents do not match the network's "
            "downsampling factor");

    const Tensor<float> x = normalize_volume(init, hu_lo, hu_hi);
    const Tensor<float> coarse_out = unet_forward(coarse, coarse_cfg, x);

    std::vector<float> out(coarse_out.values().size());
    const int nx = dims[0], ny = dims[1], nz = dims[2];
    const std::vector<float> coarse_vals(coarse_out.values().begin(), coarse_out.values().end());
    for (int z = 0; z < nz; ++z) {
        const Tensor<float> slice = slice_tensor(coarse_vals, ny, nx, z);
        const Tensor<float> refined = unet_forward(refiner, refiner_cfg, slice);
        std::copy(refined.values().begin(), refined.values().end(),
            out.begin() + static_cast<size_t>(z) * ny * nx);
    }
    for (float& v : out)
        v = std::clamp(v, 0.f, 1.f);
    return denormalize(std::span<const float>(out), dims, init.spacing, hu_lo, hu_hi);
}

} // namespace orthoct

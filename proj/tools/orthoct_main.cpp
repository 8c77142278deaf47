#include "run_config.hpp"

#include "orthoct/data.hpp"
#include "orthoct/metrics.hpp"
#include "orthoct/pipeline.hpp"
#include "orthoct/png_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>

namespace fs = std::filesystem;
using namespace orthoct;

namespace {

std::string default_run_dir()
{
    if (const char* env = std::getenv("ORTHOCT_RUN_DIR"))
        return env;
    return "runs";
}

void write_json(const std::string& path, const nlohmann::json& j)
{
    std::ofstream os(path, std::ios::trunc);
    if (!os)
        throw std::runtime_error("cannot write " + path);
    os << j.dump(2) << "\n";
}

std::string stem_of(const std::string& path)
{
    return fs::path(path).stem().string();
}

std::vector<std::string> list_volumes(const std::string& dir)
{
    if (!fs::is_directory(dir))
        throw std::runtime_error(dir + " is not a directory");
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".ctvol")
            names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    return names;
}

int cmd_phantom(int count, uint64_t seed, int dims, double spacing, double fraction,
    const std::string& out)
{
    if (count < 1)
        throw std::runtime_error("phantom: --count must be >= 1");
    fs::create_directories(out);
    const DatasetSplit split = split_dataset(count, fraction, seed);
    std::vector<bool> is_train(static_cast<size_t>(count), false);
    for (int i : split.train)
        is_train[static_cast<size_t>(i)] = true;

    std::vector<ManifestEntry> manifest;
    for (int i = 0; i < count; ++i) {
        PhantomSpec spec;
        spec.seed = seed + static_cast<uint64_t>(i);
        spec.dims = {dims, dims, dims};
        spec.spacing = {float(spacing), float(spacing), float(spacing)};
        const Volume vol = generate_phantom(spec);
        char name[32];
        std::snprintf(name, sizeof(name), "vol_%04d.ctvol", i);
        save_volume(vol, (fs::path(out) / name).string());
        manifest.push_back({name, is_train[static_cast<size_t>(i)]});
    }
    save_manifest(manifest, (fs::path(out) / "manifest.txt").string());
    write_json((fs::path(out) / "config.json").string(),
        {{"phantom.count", count}, {"phantom.seed", seed}, {"phantom.dims", dims},
            {"phantom.spacing", spacing}, {"phantom.train_fraction", fraction}});
    std::cout << "wrote " << count << " phantoms (" << split.train.size() << " train, "
              << split.test.size() << " test) to " << out << "\n";
    return 0;
}

int cmd_project(const std::string& volume, const std::string& out)
{
    const Volume vol = load_volume(volume);
    fs::create_directories(out);
    const std::string stem = stem_of(volume);
    const std::string ap_path = (fs::path(out) / (stem + "_ap.ctproj")).string();
    const std::string lat_path = (fs::path(out) / (stem + "_lat.ctproj")).string();
    save_projection(forward_project(vol, ProjAxis::AP), ap_path);
    save_projection(forward_project(vol, ProjAxis::LAT), lat_path);
    std::cout << "wrote " << ap_path << " and " << lat_path << "\n";
    return 0;
}

int cmd_reconstruct_init(const std::string& ap_path, const std::string& lat_path,
    const std::string& out)
{
    const Projection ap = load_projection(ap_path);
    const Projection lat = load_projection(lat_path);
    save_volume(reconstruct_init(ap, lat), out);
    std::cout << "wrote " << out << "\n";
    return 0;
}

std::vector<Volume> load_split(const std::string& data_dir, bool train)
{
    const auto entries = load_manifest((fs::path(data_dir) / "manifest.txt").string());
    std::vector<Volume> vols;
    for (const auto& e : entries)
        if (e.train == train)
            vols.push_back(load_volume((fs::path(data_dir) / e.path).string()));
    if (vols.empty())
        throw std::runtime_error("no " + std::string(train ? "train" : "test") + " volumes in "
            + data_dir);
    return vols;
}

int cmd_train(int stage, const RunConfig& rc, const std::string& data_dir, const std::string& out,
    const std::string& coarse, bool resume)
{
    const TrainConfig tc = rc.to_train_config();
    const std::vector<Volume> vols = load_split(data_dir, true);
    rc.echo(out);
    if (stage == 1) {
        const std::optional<std::string> from = resume
            ? std::optional<std::string>((fs::path(out) / "stage1.ckpt").string())
            : std::nullopt;
        const TrainResult r = train_stage1(vols, tc, out, from);
        std::cout << "stage 1 done, checkpoint " << r.checkpoint_path << ", log " << r.log_path
                  << "\n";
    } else {
        const std::string coarse_path
            = coarse.empty() ? (fs::path(out) / "stage1.ckpt").string() : coarse;
        if (!fs::exists(coarse_path))
            throw std::runtime_error("stage 2 requires a stage-1 checkpoint; " + coarse_path
                + " not found");
        const std::optional<std::string> from = resume
            ? std::optional<std::string>((fs::path(out) / "stage2.ckpt").string())
            : std::nullopt;
        const TrainResult r = train_stage2(vols, coarse_path, tc, out, from);
        std::cout << "stage 2 done, checkpoint " << r.checkpoint_path << ", log " << r.log_path
                  << "\n";
    }
    return 0;
}

int cmd_reconstruct(const std::string& ap_path, const std::string& lat_path,
    const std::string& coarse, const std::string& refine, const std::string& out,
    bool export_slices)
{
    if (!fs::exists(coarse))
        throw std::runtime_error("missing checkpoint " + coarse);
    if (!fs::exists(refine))
        throw std::runtime_error("missing checkpoint " + refine);
    const Projection ap = load_projection(ap_path);
    const Projection lat = load_projection(lat_path);
    const Volume vol = reconstruct(ap, lat, coarse, refine);
    save_volume(vol, out);
    std::cout << "wrote " << out << "\n";
    if (export_slices) {
        const std::string dir = out + ".slices";
        fs::create_directories(dir);
        const int nx = vol.dims[0], ny = vol.dims[1];
        std::vector<uint8_t> pixels(static_cast<size_t>(nx) * ny);
        for (int z = 0; z < vol.dims[2]; ++z) {
            const float* src = vol.values.data() + int64_t(z) * ny * nx;
            for (size_t i = 0; i < pixels.size(); ++i)
                pixels[i] = window_hu(src[i]);
            char name[32];
            std::snprintf(name, sizeof(name), "slice_%03d.png", z);
            write_gray_png((fs::path(dir) / name).string(), nx, ny, pixels);
        }
        std::cout << "wrote " << vol.dims[2] << " slices to " << dir << "\n";
    }
    return 0;
}

int cmd_evaluate(const std::string& pred_dir, const std::string& gt_dir, const std::string& out_csv,
    const RunConfig& rc)
{
    const auto pred_names = list_volumes(pred_dir);
    const auto gt_names = list_volumes(gt_dir);
    std::vector<std::string> only_pred, only_gt;
    std::set_difference(pred_names.begin(), pred_names.end(), gt_names.begin(), gt_names.end(),
        std::back_inserter(only_pred));
    std::set_difference(gt_names.begin(), gt_names.end(), pred_names.begin(), pred_names.end(),
        std::back_inserter(only_gt));
    if (!only_pred.empty() || !only_gt.empty()) {
        std::string msg = "evaluate: unpaired volumes;";
        for (const auto& n : only_pred)
            msg += " pred-only:" + n;
        for (const auto& n : only_gt)
            msg += " gt-only:" + n;
        throw std::runtime_error(msg);
    }
    if (pred_names.empty())
        throw std::runtime_error("evaluate: no .ctvol files found");

    std::vector<Volume> pred, gt;
    for (const auto& n : pred_names) {
        pred.push_back(load_volume((fs::path(pred_dir) / n).string()));
        gt.push_back(load_volume((fs::path(gt_dir) / n).string()));
    }
    UNetConfig like = UNetConfig::desk(2);
    like.levels = rc.get_int("net.levels");
    like.base_channels = rc.get_int("net.base_channels");
    const auto [extractor, extractor_cfg]
        = make_perceptual_extractor(rc.get_seed("perceptual.seed"), like);
    const MetricsReport report = evaluate(pred, gt, pred_names, extractor, extractor_cfg);
    std::ofstream os(out_csv, std::ios::trunc);
    if (!os)
        throw std::runtime_error("cannot write " + out_csv);
    os << report.to_csv();
    std::cout << "wrote " << out_csv << " (" << report.rows.size() << " volumes)\n";
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"orthoct: two-view orthogonal CT reconstruction pipeline"};
    app.require_subcommand(1);
    std::function<int()> action;

    // phantom
    {
        auto* sub = app.add_subcommand("phantom", "generate synthetic chest phantoms and a split manifest");
        auto count = std::make_shared<int>(10);
        auto seed = std::make_shared<uint64_t>(1);
        auto dims = std::make_shared<int>(32);
        auto spacing = std::make_shared<double>(2.8);
        auto fraction = std::make_shared<double>(0.8);
        auto out = std::make_shared<std::string>("data");
        sub->add_option("--count", *count, "number of volumes");
        sub->add_option("--seed", *seed, "base seed");
        sub->add_option("--dims", *dims, "cubic volume extent");
        sub->add_option("--spacing", *spacing, "voxel spacing in mm");
        sub->add_option("--train-fraction", *fraction, "train split fraction");
        sub->add_option("--out", *out, "output directory")->required();
        sub->callback([=]() { /* defer */ });
        sub->parse_complete_callback([&action, count, seed, dims, spacing, fraction, out]() {
            action = [=]() { return cmd_phantom(*count, *seed, *dims, *spacing, *fraction, *out); };
        });
    }
    // project
    {
        auto* sub = app.add_subcommand("project", "compute AP and LAT projections of a volume");
        auto volume = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>(".");
        sub->add_option("--volume", *volume, "input .ctvol")->required();
        sub->add_option("--out", *out, "output directory");
        sub->parse_complete_callback([&action, volume, out]() {
            action = [=]() { return cmd_project(*volume, *out); };
        });
    }
    // reconstruct-init
    {
        auto* sub = app.add_subcommand("reconstruct-init",
            "back-projection initialization only (baseline)");
        auto ap = std::make_shared<std::string>();
        auto lat = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        sub->add_option("--ap", *ap, "AP projection")->required();
        sub->add_option("--lat", *lat, "LAT projection")->required();
        sub->add_option("--out", *out, "output .ctvol")->required();
        sub->parse_complete_callback([&action, ap, lat, out]() {
            action = [=]() { return cmd_reconstruct_init(*ap, *lat, *out); };
        });
    }
    // train
    {
        auto* sub = app.add_subcommand("train", "run a training stage");
        auto stage = std::make_shared<int>(1);
        auto config = std::make_shared<std::string>();
        auto sets = std::make_shared<std::vector<std::string>>();
        auto data = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>(default_run_dir());
        auto coarse = std::make_shared<std::string>();
        auto resume = std::make_shared<bool>(false);
        sub->add_option("--stage", *stage, "1 or 2")->required()->check(CLI::Range(1, 2));
        sub->add_option("--config", *config, "JSON config file of dotted keys");
        sub->add_option("--set", *sets, "override config key=value")->take_all();
        sub->add_option("--data", *data, "dataset directory with manifest.txt")->required();
        sub->add_option("--out", *out, "run directory (default $ORTHOCT_RUN_DIR or ./runs)");
        sub->add_option("--coarse", *coarse, "stage-1 checkpoint for stage 2");
        sub->add_flag("--resume", *resume, "resume from the stage checkpoint in --out");
        sub->parse_complete_callback([&action, stage, config, sets, data, out, coarse, resume]() {
            action = [=]() {
                RunConfig rc = RunConfig::defaults();
                if (!config->empty())
                    rc.apply_file(*config);
                for (const auto& kv : *sets)
                    rc.apply_set(kv);
                return cmd_train(*stage, rc, *data, *out, *coarse, *resume);
            };
        });
    }
    // reconstruct
    {
        auto* sub = app.add_subcommand("reconstruct", "full two-network reconstruction");
        auto ap = std::make_shared<std::string>();
        auto lat = std::make_shared<std::string>();
        auto coarse = std::make_shared<std::string>();
        auto refine = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto slices = std::make_shared<bool>(false);
        sub->add_option("--ap", *ap, "AP projection")->required();
        sub->add_option("--lat", *lat, "LAT projection")->required();
        sub->add_option("--coarse", *coarse, "stage-1 checkpoint")->required();
        sub->add_option("--refine", *refine, "stage-2 checkpoint")->required();
        sub->add_option("--out", *out, "output .ctvol")->required();
        sub->add_flag("--export-slices", *slices, "write axial PNGs windowed to [-500,800] HU");
        sub->parse_complete_callback([&action, ap, lat, coarse, refine, out, slices]() {
            action = [=]() { return cmd_reconstruct(*ap, *lat, *coarse, *refine, *out, *slices); };
        });
    }
    // evaluate
    {
        auto* sub = app.add_subcommand("evaluate", "metric report over paired volume directories");
        auto pred = std::make_shared<std::string>();
        auto gt = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto config = std::make_shared<std::string>();
        auto sets = std::make_shared<std::vector<std::string>>();
        sub->add_option("--pred", *pred, "directory of reconstructed volumes")->required();
        sub->add_option("--gt", *gt, "directory of ground-truth volumes")->required();
        sub->add_option("--out", *out, "output CSV path")->required();
        sub->add_option("--config", *config, "JSON config file of dotted keys");
        sub->add_option("--set", *sets, "override config key=value")->take_all();
        sub->parse_complete_callback([&action, pred, gt, out, config, sets]() {
            action = [=]() {
                RunConfig rc = RunConfig::defaults();
                if (!config->empty())
                    rc.apply_file(*config);
                for (const auto& kv : *sets)
                    rc.apply_set(kv);
                return cmd_evaluate(*pred, *gt, *out, rc);
            };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        return action ? action() : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

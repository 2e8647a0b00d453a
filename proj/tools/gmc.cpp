// Command-line entry point: scene generation, PCA feature reduction,
// training, frame synthesis and metric evaluation.

#include "gmc/metrics.hpp"
#include "gmc/motion.hpp"
#include "gmc/pointset.hpp"
#include "gmc/serialize.hpp"
#include "gmc/synthgen.hpp"
#include "gmc/trainer.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace gmc;

namespace {

// ---------------------------------------------------------------------------
// Logging (GMC_LOG = error|warn|info|debug, GMC_LOG_JSON=1 for json lines)
// ---------------------------------------------------------------------------

enum class LogLevel { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

LogLevel log_threshold() {
    static const LogLevel level = [] {
        const char* env = std::getenv("GMC_LOG");
        if (env == nullptr) return LogLevel::kWarn;
        const std::string s(env);
        if (s == "error") return LogLevel::kError;
        if (s == "warn") return LogLevel::kWarn;
        if (s == "info") return LogLevel::kInfo;
        if (s == "debug") return LogLevel::kDebug;
        return LogLevel::kWarn;
    }();
    return level;
}

bool log_as_json() {
    static const bool json = [] {
        const char* env = std::getenv("GMC_LOG_JSON");
        return env != nullptr && std::string(env) == "1";
    }();
    return json;
}

void logmsg(LogLevel level, const std::string& msg) {
    if (level > log_threshold()) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    const char* name = names[static_cast<int>(level)];
    if (log_as_json()) {
        Json j{{"level", name}, {"msg", msg}};
        std::cerr << j.dump() << "\n";
    } else {
        std::cerr << "[" << name << "] " << msg << "\n";
    }
}

// usage problems detected after flag parsing (still exit code 1)
class UsageError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// refuse to clobber existing outputs unless --force
void require_fresh(const std::string& path, bool force) {
    if (!fs::exists(path)) return;
    const bool nonempty_dir = fs::is_directory(path) && !fs::is_empty(path);
    if (!fs::is_directory(path) || nonempty_dir) {
        if (force) {
            logmsg(LogLevel::kWarn, "overwriting " + path);
            return;
        }
        throw UsageError(path + " already exists; pass --force to overwrite");
    }
}

// "a:b:step" inclusive ranges or comma-separated lists
std::vector<double> parse_steps(const std::string& text) {
    std::vector<double> out;
    if (text.find(':') != std::string::npos) {
        double a = 0, b = 0, step = 0;
        char c1 = 0, c2 = 0;
        std::istringstream in(text);
        if (!(in >> a >> c1 >> b >> c2 >> step) || c1 != ':' || c2 != ':' || !(step > 0)) {
            throw UsageError("bad --steps range: " + text + " (want start:end:step)");
        }
        for (double t = a; t <= b + 1e-9; t += step) out.push_back(std::min(t, b));
        return out;
    }
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stod(item));
    }
    if (out.empty()) throw UsageError("no timesteps in: " + text);
    return out;
}

// Training and motion need 4-D reduced features; 4-channel raw features
// double as reduced ones so small synthetic scenes skip the pca step.
void ensure_reduced(FeaturedPointCloud& cloud, const std::string& path) {
    if (cloud.has_reduced()) return;
    if (cloud.features.cols() == 4) {
        cloud.reduced_features = cloud.features;
        return;
    }
    throw UsageError(path + " has " + std::to_string(cloud.features.cols()) +
                     " feature channels and no rf_ columns; run gmc pca first");
}

TrainConfig train_config_from_json(const Json& j) {
    TrainConfig cfg;
    cfg.iterations = j.value("iterations", cfg.iterations);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.alpha_start = j.value("alpha_start", cfg.alpha_start);
    cfg.alpha_end = j.value("alpha_end", cfg.alpha_end);
    cfg.alpha_ramp_iters = j.value("alpha_ramp_iters", cfg.alpha_ramp_iters);
    cfg.dropout_ratio = j.value("dropout_ratio", cfg.dropout_ratio);
    cfg.position_weight = j.value("position_weight", cfg.position_weight);
    cfg.gumbel_scale = j.value("gumbel_scale", cfg.gumbel_scale);
    cfg.neighbor_k = j.value("neighbor_k", cfg.neighbor_k);
    cfg.hidden = j.value("hidden", cfg.hidden);
    cfg.depth = j.value("depth", cfg.depth);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
    if (j.contains("energy")) {
        const Json& e = j.at("energy");
        cfg.energy.w_c = e.value("w_c", cfg.energy.w_c);
        cfg.energy.w_f = e.value("w_f", cfg.energy.w_f);
        cfg.energy.w_mu = e.value("w_mu", cfg.energy.w_mu);
        cfg.energy.gumbel_candidates = e.value("gumbel_candidates", cfg.energy.gumbel_candidates);
        cfg.energy.batch_size = e.value("batch_size", cfg.energy.batch_size);
    }
    return cfg;
}

Json train_config_to_json(const TrainConfig& cfg) {
    return Json{{"iterations", cfg.iterations},
                {"lr", cfg.lr},
                {"alpha_start", cfg.alpha_start},
                {"alpha_end", cfg.alpha_end},
                {"alpha_ramp_iters", cfg.alpha_ramp_iters},
                {"dropout_ratio", cfg.dropout_ratio},
                {"position_weight", cfg.position_weight},
                {"gumbel_scale", cfg.gumbel_scale},
                {"neighbor_k", cfg.neighbor_k},
                {"hidden", cfg.hidden},
                {"depth", cfg.depth},
                {"seed", cfg.seed},
                {"checkpoint_every", cfg.checkpoint_every},
                {"energy",
                 {{"w_c", cfg.energy.w_c},
                  {"w_f", cfg.energy.w_f},
                  {"w_mu", cfg.energy.w_mu},
                  {"gumbel_candidates", cfg.energy.gumbel_candidates},
                  {"batch_size", cfg.energy.batch_size}}}};
}

void check_threads(int threads) {
    if (threads < 1) throw UsageError("--threads must be >= 1");
    if (threads > 1) {
        logmsg(LogLevel::kInfo,
               "--threads " + std::to_string(threads) + " requested; running sequentially");
    }
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

struct GenArgs {
    std::string spec, out_start, out_end, out_truth;
    std::optional<std::uint64_t> seed;
    bool force = false;
};

void run_gen(const GenArgs& args) {
    SceneSpec spec = scene_spec_from_json(Json::parse(read_text_file(args.spec)));
    if (args.seed) spec.seed = *args.seed;
    require_fresh(args.out_start, args.force);
    require_fresh(args.out_end, args.force);
    require_fresh(args.out_truth, args.force);
    const SyntheticScene scene = generate(spec);
    save_ply(scene.g0, args.out_start);
    save_ply(scene.g1, args.out_end);
    Json truth = ground_truth_to_json(scene.truth);
    truth["seed"] = spec.seed;
    write_text_file(args.out_truth, truth.dump());
    logmsg(LogLevel::kInfo, "generated " + std::to_string(scene.g0.size()) + " points per state");
}

// ---------------------------------------------------------------------------
// pca
// ---------------------------------------------------------------------------

struct PcaArgs {
    std::string input, output, basis_out;
    int dims = 4;
    bool force = false;
};

void run_pca(const PcaArgs& args) {
    if (args.dims != 4) throw UsageError("--dims must be 4 (the field input width is fixed)");
    FeaturedPointCloud cloud = load_ply(args.input);
    require_fresh(args.output, args.force);
    if (!args.basis_out.empty()) require_fresh(args.basis_out, args.force);
    const PcaResult pca = pca_reduce(cloud.features, args.dims);
    if (pca.rank_deficient) {
        logmsg(LogLevel::kWarn, "feature covariance is rank deficient; trailing components zeroed");
    }
    cloud.reduced_features = pca.reduced;
    save_ply(cloud, args.output);
    if (!args.basis_out.empty()) {
        Json j;
        j["mean"] = std::vector<double>(pca.mean.data(), pca.mean.data() + pca.mean.size());
        j["eigenvalues"] = std::vector<double>(pca.eigenvalues.data(),
                                               pca.eigenvalues.data() + pca.eigenvalues.size());
        j["basis"] = matrix_to_json(pca.basis);
        j["rank_deficient"] = pca.rank_deficient;
        write_text_file(args.basis_out, j.dump());
    }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string start, end, config, out;
    std::optional<std::uint64_t> seed;
    int threads = 1;
    bool force = false;
};

void run_train(const TrainArgs& args) {
    check_threads(args.threads);
    TrainConfig cfg = args.config.empty()
                          ? TrainConfig{}
                          : train_config_from_json(Json::parse(read_text_file(args.config)));
    if (args.seed) cfg.seed = *args.seed;
    cfg.validate();

    FeaturedPointCloud start = load_ply(args.start);
    FeaturedPointCloud end = load_ply(args.end);
    ensure_reduced(start, args.start);
    ensure_reduced(end, args.end);

    require_fresh(args.out, args.force);
    fs::create_directories(args.out + "/checkpoints");

    const Json cfg_json = train_config_to_json(cfg);
    const std::uint64_t config_hash = fnv1a(cfg_json.dump());
    Json snapshot;
    snapshot["config"] = cfg_json;
    snapshot["config_hash"] = config_hash;
    snapshot["start"] = fs::absolute(args.start).string();
    snapshot["end"] = fs::absolute(args.end).string();
    write_text_file(args.out + "/config.json", snapshot.dump(2));
    // self-contained copies of the endpoint clouds
    save_ply(start, args.out + "/start.ply");
    save_ply(end, args.out + "/end.ply");

    const NormStats stats = compute_norm_stats(start, cfg.position_weight);
    if (stats.degenerate) {
        logmsg(LogLevel::kWarn, "degenerate normalization (zero spatial variance in " +
                                    args.start + ")");
    }
    const FeaturedPointCloud g0 = normalize(start, stats);
    const FeaturedPointCloud g1 = normalize(end, stats);

    logmsg(LogLevel::kInfo, "training " + std::to_string(cfg.iterations) + " iterations on " +
                                std::to_string(g0.size()) + " + " + std::to_string(g1.size()) +
                                " points");
    const auto t_begin = std::chrono::steady_clock::now();
    const TrainResult result = train(g0, g1, cfg, args.out + "/checkpoints");
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();

    save_checkpoint(args.out + "/fields.json", result.fields, cfg.iterations, result.rng,
                    config_hash);

    Json report;
    report["config_hash"] = config_hash;
    report["energy_loss"] = result.report.energy_loss;
    report["iso_loss"] = result.report.iso_loss;
    report["total_loss"] = result.report.total;
    report["final_mean_matched_energy"] = result.report.final_mean_matched_energy;
    report["final_canonical_spread"] = result.report.final_canonical_spread;
    report["spread_at_checkpoints"] = result.report.spread_at_checkpoints;
    report["skipped_updates"] = result.report.skipped_updates;
    write_text_file(args.out + "/report.json", report.dump());

    std::ostringstream csv;
    csv << "iteration,energy_loss,iso_loss,total_loss\n";
    for (std::size_t i = 0; i < result.report.total.size(); ++i) {
        csv << i << "," << result.report.energy_loss[i] << "," << result.report.iso_loss[i] << ","
            << result.report.total[i] << "\n";
    }
    write_text_file(args.out + "/report.csv", csv.str());
    // wall time lives outside the deterministic artifacts
    write_text_file(args.out + "/timing.txt", std::to_string(seconds) + "\n");
    logmsg(LogLevel::kInfo,
           "done: final matched energy " +
               std::to_string(result.report.final_mean_matched_energy) + ", spread " +
               std::to_string(result.report.final_canonical_spread));
}

// ---------------------------------------------------------------------------
// interpolate / extrapolate
// ---------------------------------------------------------------------------

struct FramesArgs {
    std::string run, out;
    std::vector<double> timesteps;
    int threads = 1;
    bool force = false;
};

void run_frames(const FramesArgs& args) {
    check_threads(args.threads);
    const Json snapshot = Json::parse(read_text_file(args.run + "/config.json"));
    const TrainConfig cfg = train_config_from_json(snapshot.at("config"));
    const std::uint64_t config_hash = snapshot.at("config_hash").get<std::uint64_t>();

    FeaturedPointCloud start = load_ply(args.run + "/start.ply");
    FeaturedPointCloud end = load_ply(args.run + "/end.ply");
    ensure_reduced(start, "start.ply");
    ensure_reduced(end, "end.ply");
    const NormStats stats = compute_norm_stats(start, cfg.position_weight);
    const FeaturedPointCloud g0 = normalize(start, stats);
    const FeaturedPointCloud g1 = normalize(end, stats);

    const Checkpoint cp = load_checkpoint(args.run + "/fields.json");
    if (cp.config_hash != config_hash) {
        throw std::runtime_error("fields.json was written by a different config than config.json");
    }

    require_fresh(args.out, args.force);
    const MotionModel model = build_motion_model(cp.fields.f0, cp.fields.f1, g0, g1, stats,
                                                 start.positions, cfg.energy);
    export_frames(model, args.timesteps, start, args.out);

    // stamp both manifests with the producing config
    for (const char* name : {"/frames.json", "/transforms.json"}) {
        Json j = Json::parse(read_text_file(args.out + name));
        j["config_hash"] = config_hash;
        write_text_file(args.out + name, j.dump());
    }
    logmsg(LogLevel::kInfo, "wrote " + std::to_string(args.timesteps.size()) + " frames");
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string frames, start, end, out;
    int subsample = 1024;
    std::uint64_t seed = 0;
    int threads = 1;
    bool force = false;
};

void run_eval(const EvalArgs& args) {
    check_threads(args.threads);
    const Json manifest = Json::parse(read_text_file(args.frames + "/frames.json"));
    const std::vector<double> timesteps = manifest.at("timesteps").get<std::vector<double>>();
    const std::vector<std::string> paths = manifest.at("frames").get<std::vector<std::string>>();

    // frames and transforms must come from the same run
    std::uint64_t config_hash = manifest.value("config_hash", std::uint64_t{0});
    const std::string transforms_path = args.frames + "/transforms.json";
    if (fs::exists(transforms_path)) {
        const Json transforms = Json::parse(read_text_file(transforms_path));
        const std::uint64_t other = transforms.value("config_hash", std::uint64_t{0});
        if (other != config_hash) {
            const std::string msg = "config hash mismatch between frames.json and transforms.json";
            if (!args.force) throw std::runtime_error(msg + "; pass --force to evaluate anyway");
            logmsg(LogLevel::kWarn, msg);
        }
    }

    require_fresh(args.out, args.force);
    const FeaturedPointCloud start = load_ply(args.start);
    const FeaturedPointCloud end = load_ply(args.end);
    std::vector<Matrix> frames;
    for (const std::string& p : paths) {
        const std::string resolved =
            fs::exists(p) ? p : args.frames + "/" + fs::path(p).filename().string();
        frames.push_back(load_ply(resolved).positions);
    }
    const MetricReport rep =
        evaluate_sweep(frames, timesteps, start.positions, end.positions, args.subsample,
                       args.seed);

    Json j;
    j["config_hash"] = config_hash;
    j["scale"] = 1e3;  // si_* values carry this factor
    j["timesteps"] = rep.timesteps;
    j["emd_to_start"] = rep.emd_to_start;
    j["emd_to_end"] = rep.emd_to_end;
    j["mped_to_start"] = rep.mped_to_start;
    j["mped_to_end"] = rep.mped_to_end;
    j["progress_weights"] = rep.progress_weights;
    j["si_emd"] = rep.si_emd;
    j["si_mped"] = rep.si_mped;
    j["emd_subsample"] = args.subsample;
    j["seed"] = args.seed;
    write_text_file(args.out, j.dump());
    logmsg(LogLevel::kInfo, "si_emd " + std::to_string(rep.si_emd) + ", si_mped " +
                                std::to_string(rep.si_mped));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Smooth point-to-point motion from two featured point clouds"};
    app.require_subcommand(1);

    GenArgs gen_args;
    std::uint64_t gen_seed = 0;
    CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic two-state scene");
    gen->add_option("--spec", gen_args.spec, "Scene spec json")->required();
    gen->add_option("--out-start", gen_args.out_start, "Start-state ply")->required();
    gen->add_option("--out-end", gen_args.out_end, "End-state ply")->required();
    gen->add_option("--out-truth", gen_args.out_truth, "Ground-truth json")->required();
    CLI::Option* gen_seed_opt = gen->add_option("--seed", gen_seed, "Override the spec seed");
    gen->add_flag("--force", gen_args.force, "Overwrite existing outputs");

    PcaArgs pca_args;
    CLI::App* pca = app.add_subcommand("pca", "Reduce per-point features to 4 dimensions");
    pca->add_option("--input", pca_args.input, "Input ply")->required();
    pca->add_option("--output", pca_args.output, "Output ply with rf_ columns")->required();
    pca->add_option("--dims", pca_args.dims, "Reduced dimension count");
    pca->add_option("--basis-out", pca_args.basis_out, "Projection basis json");
    pca->add_flag("--force", pca_args.force, "Overwrite existing outputs");

    TrainArgs train_args;
    std::uint64_t train_seed = 0;
    CLI::App* train_cmd = app.add_subcommand("train", "Train the two transform fields");
    train_cmd->add_option("--start", train_args.start, "Start-state ply")->required();
    train_cmd->add_option("--end", train_args.end, "End-state ply")->required();
    train_cmd->add_option("--config", train_args.config, "Train config json");
    train_cmd->add_option("--out", train_args.out, "Run directory")->required();
    CLI::Option* train_seed_opt =
        train_cmd->add_option("--seed", train_seed, "Override the config seed");
    train_cmd->add_option("--threads", train_args.threads, "Worker threads (1 = deterministic)");
    train_cmd->add_flag("--force", train_args.force, "Overwrite an existing run directory");

    FramesArgs interp_args;
    std::string steps_text = "0:1:0.05";
    CLI::App* interp = app.add_subcommand("interpolate", "Synthesize in-between frames");
    interp->add_option("--run", interp_args.run, "Run directory from gmc train")->required();
    interp->add_option("--steps", steps_text, "start:end:step range or comma list");
    interp->add_option("--out", interp_args.out, "Frame output directory")->required();
    interp->add_option("--threads", interp_args.threads, "Worker threads");
    interp->add_flag("--force", interp_args.force, "Overwrite existing frames");

    FramesArgs extrap_args;
    CLI::App* extrap = app.add_subcommand("extrapolate", "Synthesize frames outside [0, 1]");
    extrap->add_option("--run", extrap_args.run, "Run directory from gmc train")->required();
    extrap->add_option("--t", extrap_args.timesteps, "Timesteps (t < 0 or t > 1 extrapolate)")
        ->required()
        ->expected(-1);
    extrap->add_option("--out", extrap_args.out, "Frame output directory")->required();
    extrap->add_option("--threads", extrap_args.threads, "Worker threads");
    extrap->add_flag("--force", extrap_args.force, "Overwrite existing frames");

    EvalArgs eval_args;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Score an interpolation sweep");
    eval_cmd->add_option("--frames", eval_args.frames, "Frame directory")->required();
    eval_cmd->add_option("--start", eval_args.start, "Start-state ply")->required();
    eval_cmd->add_option("--end", eval_args.end, "End-state ply")->required();
    eval_cmd->add_option("--out", eval_args.out, "Report json path")->required();
    eval_cmd->add_option("--subsample", eval_args.subsample, "EMD subsample cap");
    eval_cmd->add_option("--seed", eval_args.seed, "EMD subsample seed");
    eval_cmd->add_option("--threads", eval_args.threads, "Worker threads");
    eval_cmd->add_flag("--force", eval_args.force, "Overwrite the report / ignore hash mismatch");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exits 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*gen) {
            if (*gen_seed_opt) gen_args.seed = gen_seed;
            run_gen(gen_args);
        } else if (*pca) {
            run_pca(pca_args);
        } else if (*train_cmd) {
            if (*train_seed_opt) train_args.seed = train_seed;
            run_train(train_args);
        } else if (*interp) {
            interp_args.timesteps = parse_steps(steps_text);
            run_frames(interp_args);
        } else if (*extrap) {
            run_frames(extrap_args);
        } else if (*eval_cmd) {
            run_eval(eval_args);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

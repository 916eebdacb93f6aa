#include "vegs/vegs.hpp"
#include "vegs/loss/score_http.hpp"

#include <CLI11.hpp>
#include <omp.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace vegs;

/// Bad flags or a config that does not match the schema (exit 2).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CommonArgs {
    std::string bundle;
    std::string checkpoint;
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
};

void write_json(const fs::path& path, const json& j) {
    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    io::write_file(path, j.dump(2) + "\n");
}

json read_json(const fs::path& path) {
    try {
        return json::parse(io::read_file(path));
    } catch (const json::exception& e) {
        throw UsageError(path.string() + ": " + e.what());
    }
}

/// Leaf paths of `j` as dotted keys.
void leaf_keys(const json& j, const std::string& prefix, std::vector<std::string>& out) {
    if (!j.is_object()) {
        out.push_back(prefix);
        return;
    }
    for (const auto& [k, v] : j.items()) leaf_keys(v, prefix.empty() ? k : prefix + "." + k, out);
}

json::json_pointer pointer_of(const std::string& dotted) {
    json::json_pointer p;
    std::size_t start = 0;
    while (true) {
        const auto dot = dotted.find('.', start);
        p /= dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (dot == std::string::npos) return p;
        start = dot + 1;
    }
}

struct ResolvedConfig {
    train::TrainConfig config;
    json snapshot;
};

/// Layers base < config file < --set < dedicated flags, validating before any
/// work starts. `base_name` labels where the base values came from.
ResolvedConfig resolve_train_config(const CommonArgs& a, const json& base, const std::string& base_name) {
    json merged = base;
    json sources = json::object();
    std::vector<std::string> keys;
    leaf_keys(base, "", keys);
    for (const auto& k : keys) sources[k] = base_name;
    auto mark = [&](const std::string& key, const char* src) {
        std::vector<std::string> sub;
        leaf_keys(merged.at(pointer_of(key)), key, sub);
        for (const auto& k : sub) sources[k] = src;
    };
    try {
        if (!a.config.empty()) {
            const json file = read_json(a.config);
            train::detail::check_keys(file, base, "");
            merged.merge_patch(file);
            std::vector<std::string> given;
            leaf_keys(file, "", given);
            for (const auto& k : given) sources[k] = "config_file";
        }
        for (const auto& o : a.overrides) {
            train::apply_override(merged, o);
            mark(o.substr(0, o.find('=')), "flag");
        }
        if (a.seed) {
            merged["seed"] = *a.seed;
            sources["seed"] = "flag";
        }
        if (a.threads) {
            merged["threads"] = *a.threads;
            sources["threads"] = "flag";
        }
        ResolvedConfig r{train::parse_config(merged), {}};
        r.snapshot = {{"config", json(r.config)},
                      {"precedence", {"flag", "config_file", base_name}},
                      {"sources", sources}};
        return r;
    } catch (const InvalidInput& e) {
        throw UsageError(e.what());
    } catch (const InvalidParameter& e) {
        throw UsageError(e.what());
    }
}

int default_threads() { return std::max(1, omp_get_num_procs()); }

void set_threads(int n) { omp_set_num_threads(n > 0 ? n : default_threads()); }

Vec3 parse_vec3(const std::string& s, const char* what) {
    std::vector<double> v;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto comma = s.find(',', start);
        const std::string part = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        try {
            std::size_t used = 0;
            v.push_back(std::stod(part, &used));
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw UsageError(std::string(what) + " must be x,y,z");
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (v.size() != 3) throw UsageError(std::string(what) + " must be x,y,z");
    return {v[0], v[1], v[2]};
}

/// Mean color over all training images.
Vec3 mean_training_color(const SceneBundle& b, int test_stride) {
    Vec3 sum = Vec3::Zero();
    double n = 0.0;
    for (int pos : train::training_positions(b, test_stride)) {
        const Image& img = b.frames[static_cast<std::size_t>(pos)].image;
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                for (int c = 0; c < 3; ++c) sum[c] += img.at(x, y, c);
                n += 1.0;
            }
    }
    return n > 0.0 ? Vec3(sum / n) : Vec3(0.5, 0.5, 0.5);
}

// ---------------------------------------------------------------- ingest

struct IngestArgs {
    std::string bundle, out;
    double static_voxel = 0.05;
    double instance_voxel = 0.02;
    double box_margin = lidar::kDefaultBoxMargin;
    double opacity = 0.1;
    bool no_normal_init = false;
};

int cmd_ingest(const IngestArgs& a) {
    lidar::IngestOptions o;
    o.static_voxel = a.static_voxel;
    o.instance_voxel = a.instance_voxel;
    o.box_margin = a.box_margin;
    o.initial_opacity = a.opacity;
    o.normal_init = !a.no_normal_init;
    const fs::path out(a.out);
    fs::create_directories(out);
    write_json(out / "resolved_config.json",
               {{"config",
                 {{"bundle", a.bundle},
                  {"static_voxel", o.static_voxel},
                  {"instance_voxel", o.instance_voxel},
                  {"box_margin", o.box_margin},
                  {"initial_opacity", o.initial_opacity},
                  {"normal_init", o.normal_init}}},
                {"precedence", {"flag", "default"}}});
    const SceneBundle bundle = load_bundle(a.bundle);
    io::write_lidar(out / "static_map.bin", lidar::build_static_map(bundle, o.static_voxel, o.box_margin));
    for (InstanceId id : bundle.instance_ids()) {
        try {
            io::write_lidar(out / ("instance_" + std::to_string(id) + ".bin"),
                            lidar::build_instance_map(bundle, id, o.box_margin));
        } catch (const EmptyInstanceError& e) {
            spdlog::warn("{}", e.what());
        }
    }
    io::Checkpoint ck;
    ck.graph = lidar::initialize_scene(bundle, o);
    io::save_checkpoint(out / "scene.ckpt", ck);
    spdlog::info("ingested {} static and {} instance Gaussians into {}", ck.graph.static_model.size(),
                 ck.graph.gaussian_count() - ck.graph.static_model.size(), out.string());
    return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    CommonArgs common;
    std::string endpoint;
};

int cmd_train(const TrainArgs& a) {
    const auto& c = a.common;
    std::optional<io::Checkpoint> ck;
    if (!c.checkpoint.empty()) ck = io::load_checkpoint(c.checkpoint);
    const bool resuming = ck && ck->meta.contains("trainer");
    const json base = resuming ? ck->meta.at("trainer").at("config") : json(train::TrainConfig{});
    auto resolved = resolve_train_config(c, base, resuming ? "checkpoint" : "default");
    if (resolved.config.threads == 0) resolved.config.threads = default_threads();
    set_threads(resolved.config.threads);

    const fs::path out(c.out);
    fs::create_directories(out);
    std::string endpoint = a.endpoint;
    if (endpoint.empty())
        if (const char* env = std::getenv("VEGS_SCORE_ENDPOINT")) endpoint = env;
    resolved.snapshot["score_endpoint"] = endpoint.empty() ? json(nullptr) : json(endpoint);
    resolved.snapshot["config"]["threads"] = resolved.config.threads;
    write_json(out / "resolved_config.json", resolved.snapshot);

    const SceneBundle bundle = load_bundle(c.bundle);
    const auto& cfg = resolved.config;
    std::unique_ptr<loss::ScoreProvider> provider;
    if (!endpoint.empty()) {
        loss::HttpOptions ho;
        ho.retries = cfg.score.retries;
        ho.timeout = std::chrono::seconds(cfg.score.timeout_s);
        provider = std::make_unique<loss::HttpScoreProvider>(endpoint, ho);
    } else {
        provider = std::make_unique<loss::GaussianPriorScoreProvider>(
            mean_training_color(bundle, cfg.test_stride), cfg.score.mock_sigma,
            loss::NoiseSchedule(cfg.score.T, cfg.score.beta_start, cfg.score.beta_end), train::noise_form(cfg.score));
    }
    spdlog::info("score provider: {}", provider->name());

    std::optional<train::Trainer> tr;
    if (resuming)
        tr.emplace(train::Trainer::resume(bundle, *ck, provider.get(), cfg));
    else
        tr.emplace(bundle, ck ? ck->graph : lidar::initialize_scene(bundle), cfg, provider.get());
    try {
        train::run_training(*tr, {out, true});
    } catch (const NumericalError& e) {
        json dump = {{"error", e.what()},
                     {"iteration", tr->iteration()},
                     {"non_finite", train::non_finite_report(tr->graph(), 1000)}};
        write_json(out / "nan_dump.json", dump);
        throw;
    }
    spdlog::info("wrote {}", (out / "checkpoint.ckpt").string());
    return 0;
}

// ---------------------------------------------------------------- render

struct RenderArgs {
    std::string checkpoint, bundle, pose, evs, out, background;
    std::optional<int> frame;
    std::optional<int> threads;
};

int cmd_render(const RenderArgs& a) {
    if (a.frame.has_value() == !a.pose.empty()) throw UsageError("render needs exactly one of --frame or --pose");
    if (a.frame && a.bundle.empty()) throw UsageError("--frame needs --bundle");
    set_threads(a.threads.value_or(0));
    render::RenderSettings s;
    if (!a.background.empty()) s.background = parse_vec3(a.background, "--background");
    const fs::path out(a.out);
    fs::create_directories(out);
    write_json(out / "resolved_config.json",
               {{"config",
                 {{"checkpoint", a.checkpoint},
                  {"bundle", a.bundle},
                  {"frame", a.frame ? json(*a.frame) : json(nullptr)},
                  {"pose", a.pose},
                  {"evs", a.evs},
                  {"background", {s.background.x(), s.background.y(), s.background.z()}}}},
                {"precedence", {"flag", "default"}}});
    const io::Checkpoint ck = io::load_checkpoint(a.checkpoint);
    Camera cam;
    int frame = 0;
    if (a.frame) {
        const SceneBundle bundle = load_bundle(a.bundle, {false, false, false});
        const int pos = bundle.position_of(*a.frame);
        if (pos < 0) throw LookupError("frame " + std::to_string(*a.frame) + " not in bundle " + a.bundle);
        cam = bundle.frames[static_cast<std::size_t>(pos)].camera;
        frame = *a.frame;
    } else {
        const json j = read_json(a.pose);
        try {
            bundle_json::read_intrinsics(j.at("intrinsics"), cam);
            cam.world_to_camera = bundle_json::to_transform(j.at("world_to_camera"), "world_to_camera");
            frame = j.value("frame", 0);
        } catch (const json::exception& e) {
            throw InvalidInput(a.pose + ": " + e.what());
        }
    }
    if (!a.evs.empty()) {
        const auto mode = train::parse_evs_mode(a.evs == "LR-left" || a.evs == "LR-right" ? "LR" : a.evs);
        const auto cams = train::augment_evs_cameras({cam}, mode);
        cam = a.evs == "LR-right" ? cams.at(1) : cams.at(0);
    }
    render::write_render(out, render::render(ck.graph, frame, cam, s));
    write_json(out / "camera.json", eval::camera_json(cam));
    return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
    std::string checkpoint, bundle, out, background;
    int test_stride = 8;
    bool no_crop = false, no_evs = false;
    std::optional<int> threads;
};

int cmd_evaluate(const EvaluateArgs& a) {
    set_threads(a.threads.value_or(0));
    eval::EvalOptions o;
    o.test_stride = a.test_stride;
    o.crop = !a.no_crop;
    o.evs = !a.no_evs;
    o.out_dir = a.out;
    if (!a.background.empty()) o.background = parse_vec3(a.background, "--background");
    fs::create_directories(o.out_dir);
    write_json(o.out_dir / "resolved_config.json",
               {{"config",
                 {{"checkpoint", a.checkpoint},
                  {"bundle", a.bundle},
                  {"test_stride", o.test_stride},
                  {"crop", o.crop},
                  {"evs", o.evs},
                  {"background", {o.background.x(), o.background.y(), o.background.z()}}}},
                {"precedence", {"flag", "default"}}});
    const io::Checkpoint ck = io::load_checkpoint(a.checkpoint);
    const SceneBundle bundle = load_bundle(a.bundle, {true, false, false});
    const auto rep = eval::evaluate(ck.graph, bundle, o);
    spdlog::info("evaluated {} views: PSNR {:.3f}  SSIM {:.4f}", rep.evaluated, rep.mean_psnr, rep.mean_ssim);
    return 0;
}

// ---------------------------------------------------------------- edit

struct EditArgs {
    std::string checkpoint, out, offset;
    std::optional<InstanceId> remove, translate, rotate;
    double yaw_deg = 0.0;
};

int cmd_edit(const EditArgs& a) {
    const int actions = a.remove.has_value() + a.translate.has_value() + a.rotate.has_value();
    if (actions != 1)
        throw UsageError("edit needs exactly one of --remove-instance, --translate-instance, --rotate-instance");
    if (a.translate && a.offset.empty()) throw UsageError("--translate-instance needs --offset x,y,z");
    const fs::path out(a.out);
    fs::create_directories(out);
    json cfg = {{"checkpoint", a.checkpoint}};
    if (a.remove) cfg["remove_instance"] = *a.remove;
    if (a.translate) cfg["translate_instance"] = {{"id", *a.translate}, {"offset", a.offset}};
    if (a.rotate) cfg["rotate_instance"] = {{"id", *a.rotate}, {"yaw_deg", a.yaw_deg}};
    write_json(out / "resolved_config.json", {{"config", cfg}, {"precedence", {"flag", "default"}}});
    io::Checkpoint ck = io::load_checkpoint(a.checkpoint);
    io::Checkpoint edited;
    if (a.remove) {
        edited.graph = edit_instance(ck.graph, *a.remove, RemoveInstance{});
    } else if (a.translate) {
        edited.graph = edit_instance(ck.graph, *a.translate, TranslateInstance{parse_vec3(a.offset, "--offset")});
    } else {
        const Quat q(Eigen::AngleAxisd(deg2rad(a.yaw_deg), Vec3::UnitZ()));
        edited.graph = edit_instance(ck.graph, *a.rotate, RotateInstance{q});
    }
    io::save_checkpoint(out / "checkpoint.ckpt", edited);
    return 0;
}

// ---------------------------------------------------------------- mock-score-server

struct ServerArgs {
    std::string host = "127.0.0.1";
    int port = 0;
    std::string mode = "gaussian-prior";
    std::string mean = "0.5,0.5,0.5";
    double sigma = 0.25;
    std::string noise_form = "as_printed";
    long max_requests = 0;
};

int cmd_server(const ServerArgs& a) {
    std::unique_ptr<loss::ScoreProvider> provider;
    if (a.mode == "echo") {
        provider = std::make_unique<loss::EchoScoreProvider>();
    } else if (a.mode == "gaussian-prior") {
        train::ScoreConfig sc;
        sc.noise_form = a.noise_form;
        if (a.noise_form != "as_printed" && a.noise_form != "ddpm")
            throw UsageError("--noise-form must be as_printed or ddpm");
        provider = std::make_unique<loss::GaussianPriorScoreProvider>(parse_vec3(a.mean, "--mean"), a.sigma,
                                                                      loss::NoiseSchedule{}, train::noise_form(sc));
    } else {
        throw UsageError("--mode must be echo or gaussian-prior");
    }
    loss::ScoreServer server(*provider);
    const int port = server.bind(a.host, a.port);
    std::jthread watcher([&](std::stop_token st) {
        server.wait_until_ready();
        std::cout << "listening on http://" << a.host << ":" << port << std::endl;
        while (!st.stop_requested()) {
            if (a.max_requests > 0 && server.served() >= a.max_requests) {
                server.stop();
                return;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
        }
    });
    server.listen();
    watcher.request_stop();
    return 0;
}

void add_threads(CLI::App* app, std::optional<int>& threads) {
    app->add_option("--threads", threads, "Worker threads (default: all cores)")->check(CLI::PositiveNumber);
}

} // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_st("vegs"));
    spdlog::set_pattern("[%l] %v");

    CLI::App app{"Street-scene Gaussian splatting: ingest, train, render, evaluate, edit"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    IngestArgs ingest;
    auto* c_ingest = app.add_subcommand("ingest", "Build the initial scene graph from a bundle");
    c_ingest->add_option("--bundle", ingest.bundle, "Scene bundle directory")->required();
    c_ingest->add_option("--out", ingest.out, "Output directory")->required();
    c_ingest->add_option("--static-voxel", ingest.static_voxel, "Static map voxel size (m)")->capture_default_str();
    c_ingest->add_option("--instance-voxel", ingest.instance_voxel, "Instance map voxel size (m)")
        ->capture_default_str();
    c_ingest->add_option("--box-margin", ingest.box_margin, "Box inflation for partitioning (m)")
        ->capture_default_str();
    c_ingest->add_option("--opacity", ingest.opacity, "Initial opacity")->capture_default_str();
    c_ingest->add_flag("--no-normal-init", ingest.no_normal_init, "Use isotropic frames instead of normals");

    TrainArgs tr;
    std::optional<int> train_threads;
    std::optional<std::uint64_t> train_seed;
    auto* c_train = app.add_subcommand("train", "Optimize a scene");
    c_train->add_option("--bundle", tr.common.bundle, "Scene bundle directory")->required();
    c_train->add_option("--checkpoint", tr.common.checkpoint,
                        "Initial scene or trainer checkpoint to resume (default: ingest the bundle)");
    c_train->add_option("--config", tr.common.config, "JSON config file");
    c_train->add_option("--set", tr.common.overrides, "Config override key.sub=value (repeatable)");
    c_train->add_option("--out", tr.common.out, "Output directory")->required();
    c_train->add_option("--seed", train_seed, "Random seed (default: 0)");
    add_threads(c_train, train_threads);
    c_train->add_option("--score-endpoint", tr.endpoint,
                        "Score service URL (default: $VEGS_SCORE_ENDPOINT, else the offline mock)");

    RenderArgs rn;
    std::optional<int> render_frame;
    auto* c_render = app.add_subcommand("render", "Render a view of a checkpoint");
    c_render->add_option("--checkpoint", rn.checkpoint, "Checkpoint file")->required();
    c_render->add_option("--bundle", rn.bundle, "Scene bundle directory (for --frame)");
    c_render->add_option("--frame", render_frame, "Frame index whose camera is used");
    c_render->add_option("--pose", rn.pose, "Camera JSON {intrinsics, world_to_camera, frame}");
    c_render->add_option("--evs", rn.evs, "Extrapolate the camera: LR-left, LR-right or D")
        ->check(CLI::IsMember({"LR-left", "LR-right", "D"}));
    c_render->add_option("--background", rn.background, "Background color r,g,b (default: 0,0,0)");
    c_render->add_option("--out", rn.out, "Output directory")->required();
    add_threads(c_render, rn.threads);

    EvaluateArgs ev;
    auto* c_eval = app.add_subcommand("evaluate", "Metrics on held-out frames plus extrapolated renders");
    c_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
    c_eval->add_option("--bundle", ev.bundle, "Scene bundle directory")->required();
    c_eval->add_option("--out", ev.out, "Output directory")->required();
    c_eval->add_option("--test-stride", ev.test_stride, "Every N-th frame is a test frame")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    c_eval->add_flag("--no-crop", ev.no_crop, "Score full frames instead of the center crop");
    c_eval->add_flag("--no-evs", ev.no_evs, "Skip extrapolated renders");
    c_eval->add_option("--background", ev.background, "Background color r,g,b (default: 0,0,0)");
    add_threads(c_eval, ev.threads);

    EditArgs ed;
    std::optional<InstanceId> ed_remove, ed_translate, ed_rotate;
    auto* c_edit = app.add_subcommand("edit", "Remove or move an instance");
    c_edit->add_option("--checkpoint", ed.checkpoint, "Checkpoint file")->required();
    c_edit->add_option("--out", ed.out, "Output directory")->required();
    c_edit->add_option("--remove-instance", ed_remove, "Instance id to remove");
    c_edit->add_option("--translate-instance", ed_translate, "Instance id to translate");
    c_edit->add_option("--offset", ed.offset, "World offset x,y,z for --translate-instance");
    c_edit->add_option("--rotate-instance", ed_rotate, "Instance id to rotate about its box center");
    c_edit->add_option("--yaw-deg", ed.yaw_deg, "Yaw for --rotate-instance (degrees)")->capture_default_str();

    ServerArgs sv;
    auto* c_server = app.add_subcommand("mock-score-server", "Serve a closed-form score provider over HTTP");
    c_server->add_option("--host", sv.host, "Bind address")->capture_default_str();
    c_server->add_option("--port", sv.port, "Port; 0 picks a free one")->capture_default_str();
    c_server->add_option("--mode", sv.mode, "echo or gaussian-prior")
        ->capture_default_str()
        ->check(CLI::IsMember({"echo", "gaussian-prior"}));
    c_server->add_option("--mean", sv.mean, "Prior mean color r,g,b")->capture_default_str();
    c_server->add_option("--sigma", sv.sigma, "Prior standard deviation")->capture_default_str();
    c_server->add_option("--noise-form", sv.noise_form, "as_printed or ddpm")
        ->capture_default_str()
        ->check(CLI::IsMember({"as_printed", "ddpm"}));
    c_server->add_option("--max-requests", sv.max_requests, "Exit after N requests; 0 serves forever")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (c_ingest->parsed()) return cmd_ingest(ingest);
        if (c_train->parsed()) {
            tr.common.threads = train_threads;
            tr.common.seed = train_seed;
            return cmd_train(tr);
        }
        if (c_render->parsed()) {
            rn.frame = render_frame;
            return cmd_render(rn);
        }
        if (c_eval->parsed()) return cmd_evaluate(ev);
        if (c_edit->parsed()) {
            ed.remove = ed_remove;
            ed.translate = ed_translate;
            ed.rotate = ed_rotate;
            return cmd_edit(ed);
        }
        if (c_server->parsed()) return cmd_server(sv);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

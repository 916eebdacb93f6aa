#pragma once

#include "vegs/core/error.hpp"
#include "vegs/eval/metrics.hpp"
#include "vegs/io/checkpoint.hpp"
#include "vegs/lidar/bundle.hpp"
#include "vegs/loss/box.hpp"
#include "vegs/loss/covariance.hpp"
#include "vegs/loss/photometric.hpp"
#include "vegs/loss/score.hpp"
#include "vegs/render/rasterizer.hpp"
#include "vegs/train/config.hpp"
#include "vegs/train/densify.hpp"
#include "vegs/train/evs_cameras.hpp"
#include "vegs/train/optimizer.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <omp.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace vegs::train {

inline bool is_test_frame(int frame_index, int stride) { return stride > 0 && frame_index % stride == 0; }

/// Bundle positions used for photometric supervision.
inline std::vector<int> training_positions(const SceneBundle& bundle, int test_stride) {
    std::vector<int> out;
    for (std::size_t i = 0; i < bundle.frames.size(); ++i) {
        const auto& f = bundle.frames[i];
        if (!f.image.empty() && !is_test_frame(f.index, test_stride)) out.push_back(static_cast<int>(i));
    }
    return out;
}

inline loss::NoiseForm noise_form(const ScoreConfig& c) {
    return c.noise_form == "ddpm" ? loss::NoiseForm::SqrtOneMinusAlphaBar : loss::NoiseForm::OneMinusAlphaBar;
}

inline Image scaled(const Image& img, double factor) {
    Image out = img;
    for (auto& v : out.data) v *= factor;
    return out;
}

/// Adds parameter gradients of `src` into `dst` (same layout).
inline void add_grads(render::SceneGrads& dst, const render::SceneGrads& src) {
    auto add_set = [](render::GaussianGrads& d, const render::GaussianGrads& s) {
        for (std::size_t i = 0; i < d.size(); ++i) {
            d.means[i] += s.means[i];
            d.rotations[i] += s.rotations[i];
            d.log_scales[i] += s.log_scales[i];
            d.opacity_logits[i] += s.opacity_logits[i];
        }
        for (std::size_t i = 0; i < d.sh.size(); ++i) d.sh[i] += s.sh[i];
    };
    add_set(dst.static_model, src.static_model);
    for (auto& [id, g] : dst.instances) add_set(g, src.instances.at(id));
    for (const auto& [key, r] : src.residuals) {
        auto& d = dst.residuals[key];
        d.delta_q += r.delta_q;
        d.delta_t += r.delta_t;
    }
}

/// Residual keys of the instances placed at `frame`.
inline std::vector<PoseKey> residual_keys(const SceneGraph& g, int frame) {
    std::vector<PoseKey> keys;
    for (const auto& [id, set] : g.instances)
        if (g.residuals.contains({id, frame})) keys.emplace_back(id, frame);
    return keys;
}

/// Lists non-finite parameters; empty when the scene is clean.
inline std::vector<std::string> non_finite_report(const SceneGraph& g, std::size_t limit = 32) {
    std::vector<std::string> bad;
    auto scan = [&](const GaussianSet& s, const std::string& name) {
        for (std::size_t i = 0; i < s.size() && bad.size() < limit; ++i) {
            bool ok = s.means[i].allFinite() && s.rotations[i].allFinite() && s.log_scales[i].allFinite() &&
                      std::isfinite(s.opacity_logits[i]);
            for (int k = 0; k < s.sh_count(); ++k) ok = ok && s.sh_of(i)[k].allFinite();
            if (!ok) bad.push_back(name + "[" + std::to_string(i) + "]");
        }
    };
    scan(g.static_model, "static");
    for (const auto& [id, s] : g.instances) scan(s, "instance " + std::to_string(id));
    for (const auto& [key, r] : g.residuals)
        if (!r.delta_q.allFinite() || !r.delta_t.allFinite())
            bad.push_back("residual (" + std::to_string(key.first) + ", " + std::to_string(key.second) + ")");
    return bad;
}

struct StepLosses {
    double c = 0.0;
    double axis = 0.0;
    double scale = 0.0;
    double box = 0.0;
    /// RMS of the injected score gradient over the crop; 0 when inactive.
    double score_rms = 0.0;
    bool score_active = false;
    bool score_skipped = false;
};

struct MetricsRow {
    int iteration = 0;
    double loss_c = 0.0;
    double loss_axis = 0.0;
    double loss_scale = 0.0;
    double loss_box = 0.0;
    double score_rms = 0.0;
    int score_skipped = 0;
    std::size_t gaussians = 0;
    double psnr_train = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "iteration,loss_c,loss_axis,loss_scale,loss_box,score_rms,score_skipped,gaussians,psnr_train";

inline std::string metrics_line(const MetricsRow& r) {
    std::ostringstream os;
    os.precision(9);
    os << r.iteration << ',' << r.loss_c << ',' << r.loss_axis << ',' << r.loss_scale << ',' << r.loss_box << ','
       << r.score_rms << ',' << r.score_skipped << ',' << r.gaussians << ',' << r.psnr_train;
    return os.str();
}

template <typename Rng>
std::string rng_state(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

template <typename Rng>
void restore_rng(Rng& rng, const std::string& state) {
    std::istringstream is(state);
    is >> rng;
    if (!is) throw InvalidInput("checkpoint: corrupt RNG state");
}

class Trainer {
public:
    Trainer(const SceneBundle& bundle, SceneGraph graph, TrainConfig cfg, loss::ScoreProvider* provider = nullptr)
        : bundle_(&bundle), graph_(std::move(graph)), cfg_(std::move(cfg)), provider_(provider),
          schedule_(cfg_.score.T, cfg_.score.beta_start, cfg_.score.beta_end) {
        cfg_.validate();
        graph_.validate();
        round_scene_f32(graph_);
        setup();
        opt_ = OptimizerState::zeros_like(graph_);
        camera_rng_.seed(cfg_.seed);
        score_rng_.seed(cfg_.seed ^ 0x5c0e5c0e5c0e5c0eULL);
        densify_rng_.seed(cfg_.seed ^ 0xde75e7de75e7de75ULL);
        reset_stats();
    }

    /// Restores a run from a trainer checkpoint. `cfg` replaces the stored
    /// configuration when given (e.g. to extend the iteration count).
    static Trainer resume(const SceneBundle& bundle, const io::Checkpoint& ck, loss::ScoreProvider* provider,
                          const std::optional<TrainConfig>& cfg = std::nullopt) {
        if (!ck.meta.contains("trainer")) throw InvalidInput("checkpoint has no trainer state");
        const auto& t = ck.meta.at("trainer");
        TrainConfig c = cfg ? *cfg : parse_config(t.at("config"));
        Trainer tr(bundle, ck.graph, c, provider);
        tr.iteration_ = t.at("iteration").get<int>();
        tr.opt_ = OptimizerState::load(ck.extra, tr.graph_, t.at("adam_step").get<long>());
        restore_rng(tr.camera_rng_, t.at("camera_rng").get<std::string>());
        restore_rng(tr.score_rng_, t.at("score_rng").get<std::string>());
        restore_rng(tr.densify_rng_, t.at("densify_rng").get<std::string>());
        tr.camera_stack_ = t.at("camera_stack").get<std::vector<int>>();
        tr.stats_static_.accum = ck.extra.get("stats/static/accum");
        tr.stats_static_.count = ck.extra.get("stats/static/count");
        for (auto& [id, s] : tr.stats_instances_) {
            s.accum = ck.extra.get("stats/" + io::instance_prefix(id) + "/accum");
            s.count = ck.extra.get("stats/" + io::instance_prefix(id) + "/count");
        }
        return tr;
    }

    [[nodiscard]] int iteration() const { return iteration_; }
    [[nodiscard]] const SceneGraph& graph() const { return graph_; }
    [[nodiscard]] const TrainConfig& config() const { return cfg_; }
    [[nodiscard]] double extent() const { return extent_; }
    [[nodiscard]] const std::vector<int>& train_positions() const { return train_positions_; }

    [[nodiscard]] io::Checkpoint checkpoint() const {
        io::Checkpoint ck;
        ck.graph = graph_;
        ck.meta["trainer"] = {{"iteration", iteration_},
                              {"adam_step", opt_.step},
                              {"extent", extent_},
                              {"camera_rng", rng_state(camera_rng_)},
                              {"score_rng", rng_state(score_rng_)},
                              {"densify_rng", rng_state(densify_rng_)},
                              {"camera_stack", camera_stack_},
                              {"config", nlohmann::json(cfg_)}};
        opt_.save(ck.extra);
        ck.extra.add("stats/static/accum", stats_static_.accum);
        ck.extra.add("stats/static/count", stats_static_.count);
        for (const auto& [id, s] : stats_instances_) {
            ck.extra.add("stats/" + io::instance_prefix(id) + "/accum", s.accum);
            ck.extra.add("stats/" + io::instance_prefix(id) + "/count", s.count);
        }
        return ck;
    }

    [[nodiscard]] render::RenderSettings settings(bool orientation) const {
        render::RenderSettings s;
        s.background = cfg_.background;
        s.orientation = orientation;
        return s;
    }

    /// One optimization step.
    StepLosses step() {
        StepLosses out;
        const int pos = next_camera();
        const BundleFrame& f = bundle_->frames[static_cast<std::size_t>(pos)];

        std::optional<PendingScore> pending;
        if (iteration_ >= cfg_.score_start && cfg_.weights.lambda_score > 0.0 && provider_ != nullptr)
            pending = launch_score();

        const auto& w = cfg_.weights;
        const bool cov = w.lambda_cov > 0.0 && !f.normals.empty();
        render::RenderRecord rec;
        const auto ro = render::render(graph_, f.index, f.camera, settings(cov), &rec);
        render::RenderGrads dout;
        if (w.lambda_c > 0.0) {
            const auto pl = loss::photometric_loss(ro.color, f.image, w.lambda_dssim);
            out.c = pl.value;
            dout.color = scaled(pl.grad, w.lambda_c);
        }
        if (cov) {
            const auto ax = loss::axis_loss(ro, f.normals, cfg_.mask_threshold);
            const auto sc = loss::scale_loss(ro, f.normals, cfg_.mask_threshold);
            out.axis = ax.value;
            out.scale = sc.value;
            dout.orientation = scaled(ax.grad, w.lambda_cov * w.lambda_axis);
            dout.scale = scaled(sc.grad, w.lambda_cov * (1.0 - w.lambda_axis));
        }
        auto grads = render::SceneGrads::zeros_like(graph_);
        render::render_backward(graph_, rec, dout, grads);
        if (cfg_.optimize_boxes && w.lambda_box > 0.0)
            out.box = loss::accumulate_box_reg(graph_, residual_keys(graph_, f.index), w.lambda_box, grads);
        else
            out.box = loss::box_reg_loss_for(graph_, residual_keys(graph_, f.index));

        if (pending) finish_score(*pending, grads, out);

        apply_step(grads);
        stats_static_.add(grads.static_model);
        for (auto& [id, s] : stats_instances_) s.add(grads.instances.at(id));
        ++iteration_;
        densify();

        if (const auto bad = non_finite_report(graph_); !bad.empty()) {
            std::string msg = "non-finite parameters after iteration " + std::to_string(iteration_) + ":";
            for (const auto& b : bad) msg += " " + b;
            throw NumericalError(msg);
        }
        return out;
    }

    /// Mean PSNR over up to `views` evenly spaced training views.
    [[nodiscard]] double train_psnr(int views) const {
        if (views <= 0 || train_positions_.empty()) return 0.0;
        const int n = std::min<int>(views, static_cast<int>(train_positions_.size()));
        double sum = 0.0;
        for (int k = 0; k < n; ++k) {
            const auto idx = static_cast<std::size_t>(k) * train_positions_.size() / static_cast<std::size_t>(n);
            const BundleFrame& f = bundle_->frames[static_cast<std::size_t>(train_positions_[idx])];
            sum += eval::psnr(render::render(graph_, f.index, f.camera, settings(false)).color, f.image);
        }
        return sum / n;
    }

private:
    struct PendingScore {
        int frame = 0;
        render::RenderRecord rec;
        loss::ScoreCrop crop;
        std::future<loss::ScoreStep> result;
    };

    void setup() {
        if (cfg_.threads > 0) omp_set_num_threads(cfg_.threads);
        train_positions_ = training_positions(*bundle_, cfg_.test_stride);
        if (train_positions_.empty()) throw InvalidInput("bundle has no training frames with images");
        std::vector<Camera> cams;
        for (int p : train_positions_) cams.push_back(bundle_->frames[static_cast<std::size_t>(p)].camera);
        extent_ = scene_extent(cams);
        for (const auto& [key, pose] : graph_.poses)
            if (!graph_.residuals.contains(key)) graph_.residuals[key] = BoxResidual{};
    }

    void reset_stats() {
        stats_static_.resize(graph_.static_model.size());
        stats_instances_.clear();
        for (const auto& [id, set] : graph_.instances) stats_instances_[id].resize(set.size());
    }

    int next_camera() {
        if (camera_stack_.empty()) {
            camera_stack_ = train_positions_;
            std::shuffle(camera_stack_.begin(), camera_stack_.end(), camera_rng_);
        }
        const int pos = camera_stack_.back();
        camera_stack_.pop_back();
        return pos;
    }

    PendingScore launch_score() {
        const auto& sc = cfg_.score;
        std::uniform_int_distribution<std::size_t> pick(0, train_positions_.size() - 1);
        const BundleFrame& f = bundle_->frames[static_cast<std::size_t>(train_positions_[pick(score_rng_)])];
        const EvsMode mode =
            parse_evs_mode(sc.evs_modes[std::uniform_int_distribution<std::size_t>(0, sc.evs_modes.size() - 1)(score_rng_)]);
        Camera cam = f.camera;
        if (mode == EvsMode::LR)
            cam = yaw_camera(cam, std::bernoulli_distribution(0.5)(score_rng_) ? kEvsYawDeg : -kEvsYawDeg);
        else
            cam = pitch_lift_camera(cam, kEvsPitchDeg, kEvsLift);
        PendingScore p;
        p.frame = f.index;
        const auto ro = render::render(graph_, f.index, cam, settings(false), &p.rec);
        p.crop = loss::plan_score_crop(cam.width, cam.height, sc.crop, score_rng_);
        const std::uint64_t seed = score_rng_();
        Image patch = loss::apply_score_crop(ro.color, p.crop);
        loss::ScoreSettings ss;
        ss.lambda_score = cfg_.weights.lambda_score;
        ss.timestep = sc.tau;
        ss.noise_form = noise_form(sc);
        ss.prompt_id = sc.prompt_id;
        p.result = std::async(std::launch::async, [this, patch = std::move(patch), ss, seed] {
            return loss::score_gradient(patch, *provider_, schedule_, ss, seed);
        });
        return p;
    }

    void finish_score(PendingScore& p, render::SceneGrads& grads, StepLosses& out) {
        out.score_active = true;
        loss::ScoreStep s;
        try {
            s = p.result.get();
        } catch (const TransportError& e) {
            spdlog::warn("iteration {}: score request failed, skipping distillation: {}", iteration_, e.what());
            out.score_skipped = true;
            return;
        }
        double ss = 0.0;
        for (double v : s.grad.data) ss += v * v;
        out.score_rms = std::sqrt(ss / static_cast<double>(std::max<std::size_t>(1, s.grad.data.size())));
        render::RenderGrads dout;
        dout.color = loss::score_crop_adjoint(s.grad, p.crop);
        auto evs = render::SceneGrads::zeros_like(graph_);
        render::render_backward(graph_, p.rec, dout, evs);
        add_grads(grads, evs);
    }

    void apply_step(const render::SceneGrads& grads) {
        const AdamStep a = opt_.next(cfg_.adam);
        const auto& lr = cfg_.lr;
        step_set(graph_.static_model, grads.static_model, opt_.static_model,
                 set_rates(lr, iteration_, cfg_.iterations, extent_, lr.static_scale), a);
        for (auto& [id, set] : graph_.instances)
            step_set(set, grads.instances.at(id), opt_.instances.at(id),
                     set_rates(lr, iteration_, cfg_.iterations, extent_, lr.instance_scale), a);
        if (!cfg_.optimize_boxes) return;
        for (const auto& [key, g] : grads.residuals) {
            auto it = graph_.residuals.find(key);
            if (it == graph_.residuals.end()) continue;
            step_residual(it->second, g, opt_.residuals[key], lr.residual_rotation, lr.residual_translation, a);
        }
    }

    void densify() {
        const auto& d = cfg_.densify;
        if (!d.enabled || iteration_ >= d.stop) return;
        if (iteration_ > d.start && iteration_ % d.interval == 0) {
            const bool grow = d.max_gaussians == 0 || graph_.gaussian_count() < d.max_gaussians;
            DensifyReport total;
            auto run = [&](GaussianSet& set, SetMoments& mom, GradStats& st) {
                const auto r = densify_and_prune({&set, &mom, &st}, d, extent_, densify_rng_, grow);
                total.cloned += r.cloned;
                total.split += r.split;
                total.pruned += r.pruned;
                total.before += r.before;
                total.after += r.after;
            };
            run(graph_.static_model, opt_.static_model, stats_static_);
            for (auto& [id, set] : graph_.instances) run(set, opt_.instances.at(id), stats_instances_.at(id));
            spdlog::debug("iteration {}: densify cloned {} split {} pruned {} ({} -> {})", iteration_, total.cloned,
                          total.split, total.pruned, total.before, total.after);
            if (total.after == 0) spdlog::warn("iteration {}: every Gaussian was pruned", iteration_);
        }
        if (d.opacity_reset_interval > 0 && iteration_ % d.opacity_reset_interval == 0) {
            reset_opacity(graph_.static_model, opt_.static_model, d.opacity_reset_value);
            for (auto& [id, set] : graph_.instances)
                reset_opacity(set, opt_.instances.at(id), d.opacity_reset_value);
        }
    }

    const SceneBundle* bundle_;
    SceneGraph graph_;
    TrainConfig cfg_;
    loss::ScoreProvider* provider_;
    loss::NoiseSchedule schedule_;
    OptimizerState opt_;
    std::vector<int> train_positions_;
    double extent_ = 1.0;
    int iteration_ = 0;
    std::mt19937_64 camera_rng_;
    std::mt19937_64 score_rng_;
    std::mt19937_64 densify_rng_;
    std::vector<int> camera_stack_;
    GradStats stats_static_;
    std::map<InstanceId, GradStats> stats_instances_;
};

struct TrainOutput {
    std::filesystem::path dir;
    bool write_metrics = true;
};

/// Runs until `cfg.iterations`, writing metrics.csv and checkpoints under
/// `out.dir` (when non-empty). Returns the final checkpoint.
inline io::Checkpoint run_training(Trainer& tr, const TrainOutput& out = {}) {
    const auto& cfg = tr.config();
    std::ofstream metrics;
    if (!out.dir.empty()) {
        std::filesystem::create_directories(out.dir);
        if (out.write_metrics) {
            metrics.open(out.dir / "metrics.csv", std::ios::trunc);
            if (!metrics) throw IoError("cannot write " + (out.dir / "metrics.csv").string());
            metrics << kMetricsHeader << '\n';
        }
    }
    MetricsRow acc;
    int n = 0;
    while (tr.iteration() < cfg.iterations) {
        const auto l = tr.step();
        acc.loss_c += l.c;
        acc.loss_axis += l.axis;
        acc.loss_scale += l.scale;
        acc.loss_box += l.box;
        acc.score_rms += l.score_rms;
        acc.score_skipped += l.score_skipped ? 1 : 0;
        ++n;
        const int it = tr.iteration();
        if (it % cfg.log_interval == 0 || it == cfg.iterations) {
            MetricsRow row = acc;
            row.iteration = it;
            row.loss_c /= n;
            row.loss_axis /= n;
            row.loss_scale /= n;
            row.loss_box /= n;
            row.score_rms /= n;
            row.gaussians = tr.graph().gaussian_count();
            row.psnr_train = tr.train_psnr(cfg.psnr_views);
            if (metrics.is_open()) metrics << metrics_line(row) << '\n' << std::flush;
            spdlog::info("iter {:>6}  loss_c {:.5f}  axis {:.4f}  scale {:.5f}  gaussians {}  psnr {:.2f}", it,
                         row.loss_c, row.loss_axis, row.loss_scale, row.gaussians, row.psnr_train);
            acc = {};
            n = 0;
        }
        if (!out.dir.empty() && cfg.checkpoint_interval > 0 && it % cfg.checkpoint_interval == 0 &&
            it != cfg.iterations)
            io::save_checkpoint(out.dir / ("checkpoint_" + std::to_string(it) + ".ckpt"), tr.checkpoint());
    }
    auto ck = tr.checkpoint();
    if (!out.dir.empty()) io::save_checkpoint(out.dir / "checkpoint.ckpt", ck);
    return ck;
}

struct BoxOptConfig {
    int steps = 300;
    double lr_rotation = 1e-4;
    double lr_translation = 1e-4;
    double lambda_c = 1.0;
    double lambda_box = 0.001;
    double lambda_dssim = 0.2;
    AdamConfig adam;
    Vec3 background = Vec3::Zero();
};

/// Optimizes only the box residuals: every step renders all frames that carry
/// residuals and an image, sums the photometric and box losses, and takes one
/// Adam step. Returns the per-step total loss.
inline std::vector<double> optimize_boxes(SceneGraph& graph, const SceneBundle& bundle, const BoxOptConfig& c) {
    OptimizerState opt = OptimizerState::zeros_like(graph);
    render::RenderSettings s;
    s.background = c.background;
    s.orientation = false;
    std::vector<const BundleFrame*> frames;
    for (const auto& f : bundle.frames)
        if (!f.image.empty() && !residual_keys(graph, f.index).empty()) frames.push_back(&f);
    std::vector<double> history;
    for (int step = 0; step < c.steps; ++step) {
        auto grads = render::SceneGrads::zeros_like(graph);
        double total = 0.0;
        for (const BundleFrame* f : frames) {
            render::RenderRecord rec;
            const auto ro = render::render(graph, f->index, f->camera, s, &rec);
            const auto pl = loss::photometric_loss(ro.color, f->image, c.lambda_dssim);
            total += c.lambda_c * pl.value;
            render::RenderGrads dout;
            dout.color = scaled(pl.grad, c.lambda_c);
            render::render_backward(graph, rec, dout, grads);
            total += c.lambda_box * loss::accumulate_box_reg(graph, residual_keys(graph, f->index), c.lambda_box, grads);
        }
        history.push_back(total);
        const AdamStep a = opt.next(c.adam);
        for (const auto& [key, g] : grads.residuals)
            step_residual(graph.residuals.at(key), g, opt.residuals[key], c.lr_rotation, c.lr_translation, a);
    }
    return history;
}

} // namespace vegs::train

#pragma once

#include "vegs/core/error.hpp"
#include "vegs/core/image.hpp"
#include "vegs/core/math.hpp"
#include "vegs/loss/score_protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace vegs::loss {

/// Linear-beta diffusion schedule; alpha_bar[t] = prod_{s <= t} (1 - beta_s).
class NoiseSchedule {
public:
    explicit NoiseSchedule(int steps = 1000, double beta_start = 1e-4, double beta_end = 2e-2) {
        if (steps < 2) throw InvalidParameter("noise schedule needs at least 2 steps");
        alpha_bar_.resize(static_cast<std::size_t>(steps));
        double acc = 1.0;
        for (int t = 0; t < steps; ++t) {
            const double beta = beta_start + (beta_end - beta_start) * t / (steps - 1);
            acc *= 1.0 - beta;
            alpha_bar_[static_cast<std::size_t>(t)] = acc;
        }
    }
    [[nodiscard]] int steps() const { return static_cast<int>(alpha_bar_.size()); }
    [[nodiscard]] double alpha_bar(int t) const {
        if (t < 0 || t >= steps()) throw InvalidParameter("timestep outside the schedule");
        return alpha_bar_[static_cast<std::size_t>(t)];
    }

private:
    std::vector<double> alpha_bar_;
};

/// Coefficient on the noise term when forming the noised image.
enum class NoiseForm {
    OneMinusAlphaBar, ///< (1 - alpha_bar) * eps
    SqrtOneMinusAlphaBar, ///< sqrt(1 - alpha_bar) * eps
};

inline double noise_coefficient(double alpha_bar, NoiseForm form) {
    return form == NoiseForm::OneMinusAlphaBar ? 1.0 - alpha_bar : std::sqrt(1.0 - alpha_bar);
}

/// Standard-normal noise image, a pure function of (shape, seed).
inline Image make_noise(int w, int h, int c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Image e(w, h, c);
    for (auto& v : e.data) v = n(rng);
    return e;
}

/// Source of score estimates s(x_t, t), the gradient of the log-density of the
/// noised image distribution.
class ScoreProvider {
public:
    virtual ~ScoreProvider() = default;
    virtual ScoreResponse score(const ScoreRequest& request) = 0;
    [[nodiscard]] virtual std::string name() const = 0;
};

/// Returns the request tensor unchanged.
class EchoScoreProvider final : public ScoreProvider {
public:
    ScoreResponse score(const ScoreRequest& request) override { return {request.tensor}; }
    [[nodiscard]] std::string name() const override { return "echo"; }
};

/// Closed-form score of an isotropic Gaussian image prior N(mean, sigma^2 I)
/// pushed through the noising map: -(x_t - sqrt(ab) m) / (ab sigma^2 + c^2).
class GaussianPriorScoreProvider final : public ScoreProvider {
public:
    GaussianPriorScoreProvider(Vec3 mean_color, double sigma, NoiseSchedule schedule = NoiseSchedule{},
                               NoiseForm form = NoiseForm::OneMinusAlphaBar)
        : mean_color_(std::move(mean_color)), sigma_(sigma), schedule_(std::move(schedule)), form_(form) {
        if (!(sigma > 0.0)) throw InvalidParameter("prior sigma must be positive");
    }

    ScoreResponse score(const ScoreRequest& request) override {
        const Image& x = request.tensor;
        const double ab = schedule_.alpha_bar(request.timestep);
        const double c = noise_coefficient(ab, form_);
        const double var = ab * sigma_ * sigma_ + c * c;
        const double sab = std::sqrt(ab);
        Image s(x.width, x.height, x.channels);
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            const double m = mean_color_[static_cast<int>(i % static_cast<std::size_t>(x.channels)) % 3];
            s.data[i] = -(x.data[i] - sab * m) / var;
        }
        return {std::move(s)};
    }
    [[nodiscard]] std::string name() const override { return "gaussian-prior"; }
    [[nodiscard]] const Vec3& mean_color() const { return mean_color_; }

private:
    Vec3 mean_color_;
    double sigma_;
    NoiseSchedule schedule_;
    NoiseForm form_;
};

/// Bilinear upscale followed by a crop, as a linear map with an exact adjoint.
struct ScoreCrop {
    int src_w = 0, src_h = 0;
    double scale = 1.0;
    int x0 = 0, y0 = 0;
    int out_w = 0, out_h = 0;
};

/// Upscales so both sides reach `size` (height-limited for landscape images)
/// and picks a seeded random crop offset. `size` 0 keeps the native image.
inline ScoreCrop plan_score_crop(int w, int h, int size, std::mt19937_64& rng) {
    ScoreCrop c;
    c.src_w = w;
    c.src_h = h;
    if (size <= 0) {
        c.out_w = w;
        c.out_h = h;
        return c;
    }
    c.scale = std::max(static_cast<double>(size) / h, static_cast<double>(size) / w);
    const int up_w = std::max(size, static_cast<int>(std::lround(w * c.scale)));
    const int up_h = std::max(size, static_cast<int>(std::lround(h * c.scale)));
    c.x0 = std::uniform_int_distribution<int>(0, up_w - size)(rng);
    c.y0 = std::uniform_int_distribution<int>(0, up_h - size)(rng);
    c.out_w = size;
    c.out_h = size;
    return c;
}

namespace detail {

struct Tap {
    int i0, i1;
    double f;
};

inline Tap bilinear_tap(int out, int offset, double scale, int src) {
    double s = (out + offset + 0.5) / scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    const int i0 = static_cast<int>(std::floor(s));
    const int i1 = std::min(i0 + 1, src - 1);
    return {i0, i1, s - i0};
}

} // namespace detail

inline Image apply_score_crop(const Image& in, const ScoreCrop& c) {
    if (in.width != c.src_w || in.height != c.src_h) throw InvalidInput("score crop: source size mismatch");
    Image out(c.out_w, c.out_h, in.channels);
    for (int y = 0; y < c.out_h; ++y) {
        const auto ty = detail::bilinear_tap(y, c.y0, c.scale, c.src_h);
        for (int x = 0; x < c.out_w; ++x) {
            const auto tx = detail::bilinear_tap(x, c.x0, c.scale, c.src_w);
            for (int ch = 0; ch < in.channels; ++ch)
                out.at(x, y, ch) = (1 - ty.f) * ((1 - tx.f) * in.at(tx.i0, ty.i0, ch) + tx.f * in.at(tx.i1, ty.i0, ch)) +
                                   ty.f * ((1 - tx.f) * in.at(tx.i0, ty.i1, ch) + tx.f * in.at(tx.i1, ty.i1, ch));
        }
    }
    return out;
}

inline Image score_crop_adjoint(const Image& g, const ScoreCrop& c) {
    Image out(c.src_w, c.src_h, g.channels);
    for (int y = 0; y < c.out_h; ++y) {
        const auto ty = detail::bilinear_tap(y, c.y0, c.scale, c.src_h);
        for (int x = 0; x < c.out_w; ++x) {
            const auto tx = detail::bilinear_tap(x, c.x0, c.scale, c.src_w);
            for (int ch = 0; ch < g.channels; ++ch) {
                const double v = g.at(x, y, ch);
                out.at(tx.i0, ty.i0, ch) += (1 - ty.f) * (1 - tx.f) * v;
                out.at(tx.i1, ty.i0, ch) += (1 - ty.f) * tx.f * v;
                out.at(tx.i0, ty.i1, ch) += ty.f * (1 - tx.f) * v;
                out.at(tx.i1, ty.i1, ch) += ty.f * tx.f * v;
            }
        }
    }
    return out;
}

struct ScoreSettings {
    double lambda_score = 1e-11;
    int timestep = 25;
    NoiseForm noise_form = NoiseForm::OneMinusAlphaBar;
    std::string prompt_id = "scene";
};

struct ScoreStep {
    Image noised;
    Image noise;
    Image score;
    /// Gradient injected into the render: -lambda_score * score.
    Image grad;
};

/// Noises `render`, queries the provider and returns the injected gradient.
inline ScoreStep score_gradient(const Image& render, ScoreProvider& provider, const NoiseSchedule& schedule,
                                const ScoreSettings& s, std::uint64_t noise_seed) {
    if (s.timestep < 1 || s.timestep >= schedule.steps()) throw InvalidParameter("timestep must be in [1, T)");
    ScoreStep out;
    out.noise = make_noise(render.width, render.height, render.channels, noise_seed);
    const double ab = schedule.alpha_bar(s.timestep);
    const double sab = std::sqrt(ab), c = noise_coefficient(ab, s.noise_form);
    out.noised = Image(render.width, render.height, render.channels);
    for (std::size_t i = 0; i < render.data.size(); ++i) out.noised.data[i] = sab * render.data[i] + c * out.noise.data[i];
    ScoreRequest req{out.noised, s.timestep, s.prompt_id, noise_seed};
    out.score = provider.score(req).score;
    require_same_shape(out.score, render, "score response");
    out.grad = Image(render.width, render.height, render.channels);
    for (std::size_t i = 0; i < render.data.size(); ++i) out.grad.data[i] = -s.lambda_score * out.score.data[i];
    return out;
}

} // namespace vegs::loss

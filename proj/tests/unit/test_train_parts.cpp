#include "support/test_support.hpp"

#include "vegs/io/checkpoint.hpp"
#include "vegs/train/config.hpp"
#include "vegs/train/densify.hpp"
#include "vegs/train/evs_cameras.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace vegs;
using namespace vegs::train;

namespace {

GaussianSet f32_set(std::mt19937_64& rng, int n, int degree) {
    std::uniform_real_distribution<double> u(-2.0, 2.0), s(0.05, 0.5), o(0.1, 0.9);
    GaussianSet set(degree);
    for (int i = 0; i < n; ++i) {
        std::vector<Vec3> sh;
        for (int k = 0; k < sh_coefficient_count(degree); ++k) sh.emplace_back(u(rng), u(rng), u(rng));
        set.push_back(Vec3(u(rng), u(rng), u(rng)), vegs::testing::random_unit_quat(rng), Vec3(s(rng), s(rng), s(rng)),
                      o(rng), sh);
    }
    SceneGraph g;
    g.static_model = std::move(set);
    round_scene_f32(g);
    return g.static_model;
}

} // namespace

TEST(Checkpoint, RoundTripIsExact) {
    std::mt19937_64 rng(1);
    io::Checkpoint ck;
    ck.graph.static_model = f32_set(rng, 20, 2);
    ck.graph.instances[4] = f32_set(rng, 6, 2);
    ck.graph.instances[9] = f32_set(rng, 3, 2);
    for (int f = 0; f < 3; ++f) {
        ck.graph.poses[{4, f}] = RigidTransform(Quat(Eigen::AngleAxisd(0.3 * f, Vec3::UnitZ())), Vec3(f, 2.0, 0.5));
        ck.graph.residuals[{4, f}] = BoxResidual{Vec4(1, 0, 0, 0), Vec3(0.125, 0, -0.25)};
    }
    ck.graph.poses[{9, 1}] = RigidTransform{};
    ck.meta = {{"iteration", 17}, {"note", "x"}};
    ck.extra.arrays.emplace_back("adam/step", std::vector<double>{1.0, 2.5});

    const std::string bytes = io::encode_checkpoint(ck);
    const io::Checkpoint back = io::decode_checkpoint(bytes);
    EXPECT_EQ(back.graph.static_model.means, ck.graph.static_model.means);
    EXPECT_EQ(back.graph.static_model.rotations, ck.graph.static_model.rotations);
    EXPECT_EQ(back.graph.static_model.log_scales, ck.graph.static_model.log_scales);
    EXPECT_EQ(back.graph.static_model.opacity_logits, ck.graph.static_model.opacity_logits);
    EXPECT_EQ(back.graph.static_model.sh, ck.graph.static_model.sh);
    ASSERT_EQ(back.graph.instances.size(), 2u);
    EXPECT_EQ(back.graph.instances.at(9).means, ck.graph.instances.at(9).means);
    EXPECT_EQ(back.graph.poses.size(), 4u);
    EXPECT_EQ(back.graph.residuals.size(), 3u);
    EXPECT_EQ(back.graph.residuals.at({4, 2}).delta_t, Vec3(0.125, 0, -0.25));
    EXPECT_EQ(back.meta, ck.meta);
    ASSERT_EQ(back.extra.arrays.size(), 1u);
    EXPECT_EQ(back.extra.arrays[0].second, (std::vector<double>{1.0, 2.5}));
    EXPECT_EQ(io::encode_checkpoint(back), bytes);
}

TEST(Checkpoint, CorruptBytesRejected) {
    io::Checkpoint ck;
    const std::string bytes = io::encode_checkpoint(ck);
    EXPECT_THROW(io::decode_checkpoint(bytes.substr(0, 12)), InvalidInput);
    EXPECT_THROW(io::decode_checkpoint("XXXXXXXX" + bytes.substr(8)), InvalidInput);
    EXPECT_THROW(io::decode_checkpoint(bytes + "1234"), InvalidInput);
    EXPECT_THROW(io::load_checkpoint("/nonexistent/scene.ckpt"), IoError);
}

TEST(Config, DefaultsRoundTrip) {
    const TrainConfig d;
    const TrainConfig back = parse_config(nlohmann::json(d));
    EXPECT_EQ(nlohmann::json(back), nlohmann::json(d));
}

TEST(Config, MissingKeysKeepDefaults) {
    const TrainConfig c = parse_config({{"iterations", 100}, {"score_start", 50}, {"weights", {{"lambda_cov", 0.0}}}});
    EXPECT_EQ(c.iterations, 100);
    EXPECT_EQ(c.weights.lambda_cov, 0.0);
    EXPECT_EQ(c.weights.lambda_axis, TrainConfig{}.weights.lambda_axis);
    EXPECT_EQ(c.score.tau, TrainConfig{}.score.tau);
}

TEST(Config, UnknownKeysRejected) {
    EXPECT_THROW(parse_config({{"iteratons", 10}}), InvalidInput);
    EXPECT_THROW(parse_config({{"weights", {{"lambda_foo", 1.0}}}}), InvalidInput);
    EXPECT_THROW(parse_config({{"iterations", "many"}}), InvalidInput);
}

TEST(Config, ValidationRejectsOutOfRange) {
    EXPECT_THROW(parse_config({{"weights", {{"lambda_axis", 1.5}}}}), InvalidParameter);
    EXPECT_THROW(parse_config({{"iterations", 10}, {"score_start", 20}}), InvalidParameter);
    EXPECT_THROW(parse_config({{"score", {{"tau", 0}}}}), InvalidParameter);
    EXPECT_THROW(parse_config({{"score", {{"evs_modes", {"LR", "up"}}}}}), InvalidParameter);
}

TEST(Config, OverridesApplyNestedKeys) {
    nlohmann::json j = TrainConfig{};
    apply_override(j, "weights.lambda_cov=0.25");
    apply_override(j, "score.noise_form=ddpm");
    apply_override(j, "iterations=42");
    apply_override(j, "score_start=0");
    const TrainConfig c = parse_config(j);
    EXPECT_EQ(c.weights.lambda_cov, 0.25);
    EXPECT_EQ(c.score.noise_form, "ddpm");
    EXPECT_EQ(c.iterations, 42);
    EXPECT_THROW(apply_override(j, "weights.nope=1"), InvalidInput);
    EXPECT_THROW(apply_override(j, "novalue"), InvalidInput);
}

namespace {

struct DensifyFixture {
    GaussianSet params;
    SetMoments moments;
    GradStats stats;
    DensifyTarget target() { return {&params, &moments, &stats}; }
};

DensifyFixture make_fixture(std::mt19937_64& rng, int n) {
    DensifyFixture f;
    f.params = f32_set(rng, n, 1);
    f.moments = {zeros_like(f.params), zeros_like(f.params)};
    f.stats.resize(f.params.size());
    return f;
}

} // namespace

TEST(Densify, NoGradientsIsNoOp) {
    std::mt19937_64 rng(2);
    DensifyFixture f = make_fixture(rng, 12);
    const GaussianSet before = f.params;
    DensifyConfig cfg;
    cfg.prune_opacity = 0.0;
    const auto rep = densify_and_prune(f.target(), cfg, 10.0, rng);
    EXPECT_EQ(rep.cloned + rep.split + rep.pruned, 0u);
    EXPECT_EQ(f.params.means, before.means);
    EXPECT_EQ(f.params.sh, before.sh);
}

TEST(Densify, SplitChildrenShrinkByFactor) {
    std::mt19937_64 rng(3);
    DensifyFixture f = make_fixture(rng, 1);
    f.stats.accum[0] = 1.0;
    f.stats.count[0] = 1.0;
    const Vec3 parent = f.params.scale(0);
    DensifyConfig cfg;
    cfg.percent_dense = 0.0;
    const auto rep = densify_and_prune(f.target(), cfg, 10.0, rng);
    EXPECT_EQ(rep.split, 1u);
    ASSERT_EQ(f.params.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_LT((f.params.scale(i) - parent / 1.6).norm(), 1e-6);
        EXPECT_EQ(f.params.rotations[i], f.params.rotations[0]);
    }
    EXPECT_EQ(f.moments.m.size(), 2u);
    EXPECT_EQ(f.stats.accum.size(), 2u);
}

TEST(Densify, CloneCopiesSmallGaussian) {
    std::mt19937_64 rng(4);
    DensifyFixture f = make_fixture(rng, 3);
    f.stats.accum[1] = 1.0;
    f.stats.count[1] = 2.0;
    DensifyConfig cfg;
    cfg.percent_dense = 1.0;
    const auto rep = densify_and_prune(f.target(), cfg, 10.0, rng);
    EXPECT_EQ(rep.cloned, 1u);
    ASSERT_EQ(f.params.size(), 4u);
    EXPECT_EQ(f.params.means[3], f.params.means[1]);
}

TEST(Densify, PruneAllTransparent) {
    std::mt19937_64 rng(5);
    DensifyFixture f = make_fixture(rng, 8);
    DensifyConfig cfg;
    cfg.prune_opacity = 0.99;
    const auto rep = densify_and_prune(f.target(), cfg, 10.0, rng);
    EXPECT_EQ(rep.pruned, 8u);
    EXPECT_TRUE(f.params.empty());
    EXPECT_EQ(f.moments.v.size(), 0u);
}

TEST(Densify, ResetOpacityCapsValues) {
    std::mt19937_64 rng(6);
    DensifyFixture f = make_fixture(rng, 10);
    reset_opacity(f.params, f.moments, 0.01);
    for (std::size_t i = 0; i < f.params.size(); ++i) EXPECT_LE(f.params.opacity(i), 0.01 + 1e-7);
}

namespace {

Camera level_camera(const Vec3& eye, double heading) {
    return look_at(eye, eye + Vec3(std::cos(heading), std::sin(heading), 0.0), Vec3::UnitZ(),
                   Intrinsics{60.0, 60.0, 40.0, 30.0, 0.0}, 80, 60);
}

} // namespace

TEST(EvsCameras, LateralYawsSixtyDegrees) {
    const Camera c = level_camera(Vec3(1.0, 2.0, 1.5), 0.3);
    const auto out = augment_evs_cameras({c}, EvsMode::LR);
    ASSERT_EQ(out.size(), 2u);
    const double sign[2] = {1.0, -1.0};
    for (int k = 0; k < 2; ++k) {
        EXPECT_LT((out[k].center() - c.center()).norm(), 1e-12);
        const Vec3 f = out[k].forward();
        EXPECT_NEAR(std::atan2(f.y(), f.x()), 0.3 + sign[k] * M_PI / 3.0, 1e-12);
        EXPECT_NEAR(f.z(), 0.0, 1e-12);
    }
}

TEST(EvsCameras, DownwardLiftsOneMeterPitchesTenDegrees) {
    const Camera c = level_camera(Vec3(-3.0, 0.5, 1.5), -0.7);
    const auto out = augment_evs_cameras({c}, EvsMode::D);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_LT((out[0].center() - (c.center() + Vec3(0, 0, 1.0))).norm(), 1e-12);
    const Vec3 f = out[0].forward();
    EXPECT_NEAR(std::asin(-f.z()), deg2rad(10.0), 1e-12);
    EXPECT_NEAR(std::atan2(f.y(), f.x()), -0.7, 1e-12);
    EXPECT_NEAR(out[0].right().z(), 0.0, 1e-12);
}

TEST(EvsCameras, Stateless) {
    const Camera c = level_camera(Vec3(0.0, 0.0, 1.5), 1.1);
    const Camera copy = c;
    const auto a = augment_evs_cameras({c, c}, EvsMode::LR);
    const auto b = augment_evs_cameras({c}, EvsMode::LR);
    EXPECT_EQ(a.size(), 4u);
    EXPECT_EQ(a[2].world_to_camera.translation, b[0].world_to_camera.translation);
    EXPECT_EQ(a[3].world_to_camera.rotation.coeffs(), b[1].world_to_camera.rotation.coeffs());
    EXPECT_EQ(c.world_to_camera.translation, copy.world_to_camera.translation);
    EXPECT_EQ(a[0].intrinsics.fx, c.intrinsics.fx);
    EXPECT_THROW(parse_evs_mode("up"), InvalidParameter);
}

TEST(Rounding, ShortVectorsRoundToFloat32) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (std::size_t n : {1u, 2u, 3u, 6u, 20u}) {
        std::vector<Vec3> v;
        for (std::size_t i = 0; i < n; ++i) v.emplace_back(u(rng), u(rng), u(rng));
        for (auto& x : v) round_f32_inplace(x);
        for (const auto& x : v)
            for (int k = 0; k < 3; ++k) {
                volatile float f = static_cast<float>(x[k]);
                EXPECT_EQ(static_cast<double>(f), x[k]) << "n " << n;
            }
    }
}

#include "support/test_support.hpp"

#include "vegs/loss/score.hpp"
#include "vegs/loss/score_http.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace vegs;
using namespace vegs::loss;

namespace {

const std::filesystem::path kVectors = std::filesystem::path(VEGS_TEST_DATA_DIR) / "score_vectors";

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

nlohmann::json manifest() {
    std::ifstream f(kVectors / "manifest.json");
    return nlohmann::json::parse(f);
}

Image f32_image(std::mt19937_64& rng, int w, int h, int c) {
    Image img = vegs::testing::random_image(rng, w, h, c);
    for (double& v : img.data) v = static_cast<float>(v);
    return img;
}

} // namespace

TEST(NoiseSchedule, MatchesClosedFormProduct) {
    const NoiseSchedule s;
    EXPECT_EQ(s.steps(), 1000);
    EXPECT_NEAR(s.alpha_bar(0), 1.0 - 1e-4, 1e-15);
    double log_ab = 0.0;
    for (int t = 0; t < 1000; ++t) {
        log_ab += std::log1p(-(1e-4 + (2e-2 - 1e-4) * t / 999.0));
        if (t % 97 == 0 || t == 999) EXPECT_NEAR(s.alpha_bar(t), std::exp(log_ab), 1e-12) << "t " << t;
        if (t > 0) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    }
    EXPECT_THROW(static_cast<void>(s.alpha_bar(1000)), InvalidParameter);
    EXPECT_THROW(NoiseSchedule(1), InvalidParameter);
}

TEST(ScoreGradient, EchoGivesNegativeScaledNoisedImage) {
    std::mt19937_64 rng(1);
    const Image x = vegs::testing::random_image(rng, 9, 7, 3, 0.0, 1.0);
    EchoScoreProvider echo;
    ScoreSettings s;
    s.lambda_score = 0.25;
    const auto step = score_gradient(x, echo, NoiseSchedule{}, s, 99);
    for (std::size_t i = 0; i < x.data.size(); ++i) EXPECT_DOUBLE_EQ(step.grad.data[i], -0.25 * step.noised.data[i]);
}

TEST(ScoreGradient, NoisedImageUsesScheduleCoefficients) {
    std::mt19937_64 rng(2);
    const Image x = vegs::testing::random_image(rng, 6, 5, 3, 0.0, 1.0);
    EchoScoreProvider echo;
    const NoiseSchedule sched;
    for (auto form : {NoiseForm::OneMinusAlphaBar, NoiseForm::SqrtOneMinusAlphaBar}) {
        ScoreSettings s;
        s.timestep = 300;
        s.noise_form = form;
        const auto step = score_gradient(x, echo, sched, s, 5);
        const double ab = sched.alpha_bar(300);
        const double c = form == NoiseForm::OneMinusAlphaBar ? 1.0 - ab : std::sqrt(1.0 - ab);
        const Image e = make_noise(6, 5, 3, 5);
        for (std::size_t i = 0; i < x.data.size(); ++i)
            EXPECT_NEAR(step.noised.data[i], std::sqrt(ab) * x.data[i] + c * e.data[i], 1e-15);
    }
}

TEST(ScoreGradient, NoiseIsPureFunctionOfSeed) {
    EXPECT_EQ(make_noise(8, 8, 3, 11).data, make_noise(8, 8, 3, 11).data);
    EXPECT_NE(make_noise(8, 8, 3, 11).data, make_noise(8, 8, 3, 12).data);
}

TEST(ScoreGradient, ZeroLambdaGivesZeroGradient) {
    std::mt19937_64 rng(3);
    const Image x = vegs::testing::random_image(rng, 5, 5, 3, 0.0, 1.0);
    GaussianPriorScoreProvider prior(Vec3(0.5, 0.5, 0.5), 0.2);
    ScoreSettings s;
    s.lambda_score = 0.0;
    for (double g : score_gradient(x, prior, NoiseSchedule{}, s, 1).grad.data) EXPECT_EQ(g, 0.0);
}

TEST(ScoreGradient, InvalidTimestepThrows) {
    EchoScoreProvider echo;
    ScoreSettings s;
    s.timestep = 0;
    EXPECT_THROW(score_gradient(Image(2, 2, 3), echo, NoiseSchedule{}, s, 1), InvalidParameter);
    s.timestep = 1000;
    EXPECT_THROW(score_gradient(Image(2, 2, 3), echo, NoiseSchedule{}, s, 1), InvalidParameter);
}

TEST(ScoreGradient, PriorMeanGradientPointsAwayFromMean) {
    // Descending the expected gradient moves x toward the prior mean.
    std::mt19937_64 rng(4);
    const Image x = vegs::testing::random_image(rng, 6, 4, 3, 0.0, 1.0);
    const Vec3 m(0.2, 0.5, 0.8);
    const double sigma = 0.3;
    const NoiseSchedule sched;
    GaussianPriorScoreProvider prior(m, sigma, sched);
    ScoreSettings s;
    s.lambda_score = 1.0;
    Image mean(x.width, x.height, 3);
    constexpr int kSeeds = 1000;
    for (int seed = 0; seed < kSeeds; ++seed) {
        const auto step = score_gradient(x, prior, sched, s, static_cast<std::uint64_t>(seed));
        for (std::size_t i = 0; i < mean.data.size(); ++i) mean.data[i] += step.grad.data[i] / kSeeds;
    }
    const double ab = sched.alpha_bar(s.timestep), c = 1.0 - ab;
    const double var = ab * sigma * sigma + c * c;
    Image want(x.width, x.height, 3);
    for (std::size_t i = 0; i < x.data.size(); ++i)
        want.data[i] = std::sqrt(ab) * (std::sqrt(ab) * x.data[i] - std::sqrt(ab) * m[static_cast<int>(i % 3)]) / var;
    const double cosine = vegs::testing::dot(mean, want) /
                          std::sqrt(vegs::testing::dot(mean, mean) * vegs::testing::dot(want, want));
    EXPECT_GT(cosine, 1.0 - 1e-3);
}

TEST(ScoreCrop, NativeSizeIsIdentity) {
    std::mt19937_64 rng(5);
    const Image x = vegs::testing::random_image(rng, 12, 8, 3);
    const auto c = plan_score_crop(12, 8, 0, rng);
    EXPECT_EQ(apply_score_crop(x, c).data, x.data);
}

TEST(ScoreCrop, UpscaleCoversSquareCrop) {
    std::mt19937_64 rng(6);
    for (int k = 0; k < 50; ++k) {
        const auto c = plan_score_crop(128, 96, 512, rng);
        EXPECT_EQ(c.out_w, 512);
        EXPECT_EQ(c.out_h, 512);
        EXPECT_NEAR(c.scale, 512.0 / 96.0, 1e-15);
        EXPECT_GE(c.x0, 0);
        EXPECT_LE(c.x0 + 512, static_cast<int>(std::lround(128 * c.scale)));
        EXPECT_EQ(c.y0, 0);
    }
}

TEST(ScoreCrop, ConstantImageStaysConstant) {
    std::mt19937_64 rng(7);
    Image x(10, 6, 3);
    for (double& v : x.data) v = 0.37;
    for (double v : apply_score_crop(x, plan_score_crop(10, 6, 32, rng)).data) EXPECT_NEAR(v, 0.37, 1e-15);
}

TEST(ScoreCrop, AdjointIdentity) {
    std::mt19937_64 rng(8);
    for (int size : {0, 16, 40}) {
        const auto c = plan_score_crop(21, 13, size, rng);
        const Image x = vegs::testing::random_image(rng, 21, 13, 3);
        const Image g = vegs::testing::random_image(rng, c.out_w, c.out_h, 3);
        const double lhs = vegs::testing::dot(apply_score_crop(x, c), g);
        const double rhs = vegs::testing::dot(x, score_crop_adjoint(g, c));
        EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));
    }
}

TEST(ScoreProtocol, RequestRoundTrip) {
    std::mt19937_64 rng(9);
    ScoreRequest r{f32_image(rng, 7, 5, 3), 123, "road/ü", 0xfedcba9876543210ull};
    const std::string bytes = encode_request(r);
    const ScoreRequest back = decode_request(bytes);
    EXPECT_EQ(back.tensor.width, 7);
    EXPECT_EQ(back.tensor.height, 5);
    EXPECT_EQ(back.tensor.data, r.tensor.data);
    EXPECT_EQ(back.timestep, 123);
    EXPECT_EQ(back.prompt_id, r.prompt_id);
    EXPECT_EQ(back.seed, r.seed);
    EXPECT_EQ(encode_request(back), bytes);
}

TEST(ScoreProtocol, MalformedMessagesRejected) {
    std::mt19937_64 rng(10);
    const std::string good = encode_request({f32_image(rng, 3, 2, 3), 10, "p", 1});
    EXPECT_THROW(decode_request(good.substr(0, 10)), InvalidInput);
    std::string bad_magic = good;
    bad_magic[0] = 'X';
    EXPECT_THROW(decode_request(bad_magic), InvalidInput);
    EXPECT_THROW(decode_request(good.substr(0, good.size() - 4)), InvalidInput);
    EXPECT_THROW(decode_request(good + "abcd"), InvalidInput);
    EXPECT_THROW(decode_response(good), InvalidInput);
}

TEST(ScoreConformance, VectorsDecodeToManifest) {
    const auto cases = manifest();
    ASSERT_FALSE(cases.empty());
    for (const auto& c : cases) {
        const std::string name = c.at("name");
        const std::string bytes = read_bytes(kVectors / (name + ".request.bin"));
        const ScoreRequest r = decode_request(bytes);
        EXPECT_EQ(r.tensor.height, c["shape"][0].get<int>()) << name;
        EXPECT_EQ(r.tensor.width, c["shape"][1].get<int>()) << name;
        EXPECT_EQ(r.tensor.channels, c["shape"][2].get<int>()) << name;
        EXPECT_EQ(r.timestep, c["timestep"].get<int>()) << name;
        EXPECT_EQ(r.prompt_id, c["prompt_id"].get<std::string>()) << name;
        EXPECT_EQ(r.seed, c["seed"].get<std::uint64_t>()) << name;
        EXPECT_EQ(encode_request(r), bytes) << name;
    }
}

TEST(ScoreConformance, EchoResponsesAreByteIdentical) {
    EchoScoreProvider echo;
    for (const auto& c : manifest()) {
        const std::string name = c.at("name");
        const ScoreRequest r = decode_request(read_bytes(kVectors / (name + ".request.bin")));
        EXPECT_EQ(encode_response(echo.score(r)), read_bytes(kVectors / (name + ".response.bin"))) << name;
    }
}

TEST(ScoreConformance, HttpEchoRoundTripsVectors) {
    EchoScoreProvider echo;
    BackgroundScoreServer server(echo);
    httplib::Client client("http://127.0.0.1:" + std::to_string(server.port()));
    for (const auto& c : manifest()) {
        const std::string name = c.at("name");
        const auto res = client.Post("/score", read_bytes(kVectors / (name + ".request.bin")), kScoreContentType);
        ASSERT_TRUE(res) << name;
        EXPECT_EQ(res->status, 200);
        EXPECT_EQ(res->body, read_bytes(kVectors / (name + ".response.bin"))) << name;
    }
}

TEST(ScoreHttp, ClientMatchesInProcessProvider) {
    std::mt19937_64 rng(11);
    GaussianPriorScoreProvider prior(Vec3(0.3, 0.4, 0.5), 0.25);
    BackgroundScoreServer server(prior);
    HttpScoreProvider client(server.url());
    const ScoreRequest req{f32_image(rng, 8, 6, 3), 40, "scene", 3};
    const Image remote = client.score(req).score;
    const Image local = prior.score(req).score;
    ASSERT_EQ(remote.data.size(), local.data.size());
    for (std::size_t i = 0; i < local.data.size(); ++i)
        EXPECT_EQ(remote.data[i], static_cast<double>(static_cast<float>(local.data[i])));
    EXPECT_EQ(server.served(), 1);
}

TEST(ScoreHttp, BadRequestIsTransportError) {
    GaussianPriorScoreProvider prior(Vec3(0.3, 0.4, 0.5), 0.25);
    BackgroundScoreServer server(prior);
    HttpScoreProvider client(server.url());
    EXPECT_THROW(client.score({Image(2, 2, 3), 5000, "scene", 0}), TransportError);
}

TEST(ScoreHttp, UnreachableEndpointGivesUp) {
    int port = 0;
    {
        EchoScoreProvider echo;
        BackgroundScoreServer server(echo);
        port = server.port();
    }
    HttpOptions opts;
    opts.retries = 1;
    opts.backoff = std::chrono::milliseconds(1);
    opts.timeout = std::chrono::seconds(1);
    HttpScoreProvider client("http://127.0.0.1:" + std::to_string(port) + "/score", opts);
    EXPECT_THROW(client.score({Image(2, 2, 3), 5, "scene", 0}), TransportError);
}

TEST(ScoreHttp, EndpointParsing) {
    const auto e = parse_endpoint("http://localhost:8080/v1/score");
    EXPECT_EQ(e.base, "http://localhost:8080");
    EXPECT_EQ(e.path, "/v1/score");
    EXPECT_THROW(parse_endpoint("ftp://x/score"), InvalidInput);
    EXPECT_THROW(parse_endpoint("http:///score"), InvalidInput);
}

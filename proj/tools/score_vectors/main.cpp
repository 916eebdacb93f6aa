// Writes the score-protocol conformance vectors: per case a request, the echo
// response, and a manifest describing the decoded fields.
#include "vegs/loss/score.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace vegs;

namespace {

struct Case {
    std::string name;
    int w, h, c;
    int timestep;
    std::string prompt_id;
    std::uint64_t seed;
};

/// Deterministic float32-exact pattern covering signs, zero and fractions.
Image pattern(int w, int h, int c) {
    Image t(w, h, c);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        const double k = static_cast<double>(i);
        t.data[i] = std::ldexp(std::fmod(k * 37.0, 257.0) - 128.0, -7);
    }
    return t;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot write " + p.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Write score-protocol conformance vectors"};
    std::string out;
    app.add_option("--out", out, "output directory")->required();
    CLI11_PARSE(app, argc, argv);

    const std::vector<Case> cases{
        {"single_pixel", 1, 1, 3, 1, "scene", 0},
        {"landscape_rgb", 5, 3, 3, 25, "scene", 42},
        {"square_rgba", 4, 4, 4, 999, "corridor/evs-D", 18446744073709551557ull},
        {"unicode_prompt", 2, 3, 3, 500, "stra\xc3\x9f" "e", 7},
    };
    fs::create_directories(out);
    nlohmann::json manifest = nlohmann::json::array();
    loss::EchoScoreProvider echo;
    for (const auto& c : cases) {
        loss::ScoreRequest req{pattern(c.w, c.h, c.c), c.timestep, c.prompt_id, c.seed};
        write_bytes(fs::path(out) / (c.name + ".request.bin"), loss::encode_request(req));
        write_bytes(fs::path(out) / (c.name + ".response.bin"), loss::encode_response(echo.score(req)));
        manifest.push_back({{"name", c.name},
                            {"shape", {c.h, c.w, c.c}},
                            {"timestep", c.timestep},
                            {"prompt_id", c.prompt_id},
                            {"seed", c.seed}});
    }
    std::ofstream(fs::path(out) / "manifest.json") << manifest.dump(2) << "\n";
    std::cout << "wrote " << cases.size() << " cases to " << out << "\n";
    return 0;
}

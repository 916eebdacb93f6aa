#pragma once

#include "vegs/core/error.hpp"
#include "vegs/core/image.hpp"
#include "vegs/io/binary.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <string_view>

namespace vegs::loss {

// Wire framing shared by requests and responses:
//   8-byte magic | uint32 LE header length | JSON header (UTF-8) | H*W*C float32 LE
inline constexpr std::string_view kTensorMagic{"VEGSTNS\x01", 8};

struct ScoreRequest {
    Image tensor;
    int timestep = 0;
    std::string prompt_id;
    std::uint64_t seed = 0;
};

struct ScoreResponse {
    Image score;
};

namespace detail {

inline std::string frame_message(const nlohmann::json& header, const Image& tensor) {
    const std::string h = header.dump();
    std::string buf(kTensorMagic);
    io::append_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(h.size()));
    buf += h;
    io::append_f32(buf, tensor.data);
    return buf;
}

inline nlohmann::json tensor_header(const char* kind, const Image& tensor) {
    return {{"kind", kind},
            {"dtype", "float32"},
            {"shape", {tensor.height, tensor.width, tensor.channels}}};
}

/// Parses framing and returns (header, tensor).
inline std::pair<nlohmann::json, Image> unframe_message(std::string_view bytes, const char* kind) {
    if (bytes.size() < 12 || bytes.substr(0, 8) != kTensorMagic) throw InvalidInput("score message: bad magic");
    const auto hlen = io::read_pod<std::uint32_t>(bytes, 8);
    if (12 + static_cast<std::size_t>(hlen) > bytes.size()) throw InvalidInput("score message: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(12, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("score message: malformed header: ") + e.what());
    }
    if (header.value("kind", "") != kind) throw InvalidInput(std::string("score message: expected kind ") + kind);
    if (header.value("dtype", "") != "float32") throw InvalidInput("score message: dtype must be float32");
    const auto& shape = header.at("shape");
    if (!shape.is_array() || shape.size() != 3) throw InvalidInput("score message: shape must be [H, W, C]");
    const int h = shape[0].get<int>(), w = shape[1].get<int>(), c = shape[2].get<int>();
    if (h <= 0 || w <= 0 || c <= 0) throw InvalidInput("score message: non-positive shape");
    const std::size_t body = bytes.size() - 12 - hlen;
    const std::size_t count = static_cast<std::size_t>(h) * w * c;
    if (body != count * 4) throw InvalidInput("score message: body size does not match shape");
    Image t(w, h, c);
    t.data = io::read_f32(bytes, 12 + hlen, count);
    return {std::move(header), std::move(t)};
}

} // namespace detail

inline std::string encode_request(const ScoreRequest& r) {
    auto header = detail::tensor_header("score_request", r.tensor);
    header["timestep"] = r.timestep;
    header["prompt_id"] = r.prompt_id;
    header["seed"] = r.seed;
    return detail::frame_message(header, r.tensor);
}

inline ScoreRequest decode_request(std::string_view bytes) {
    auto [header, tensor] = detail::unframe_message(bytes, "score_request");
    ScoreRequest r;
    r.tensor = std::move(tensor);
    try {
        r.timestep = header.at("timestep").get<int>();
        r.prompt_id = header.at("prompt_id").get<std::string>();
        r.seed = header.value("seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("score request: ") + e.what());
    }
    return r;
}

inline std::string encode_response(const ScoreResponse& r) {
    return detail::frame_message(detail::tensor_header("score_response", r.score), r.score);
}

inline ScoreResponse decode_response(std::string_view bytes) {
    return {detail::unframe_message(bytes, "score_response").second};
}

} // namespace vegs::loss

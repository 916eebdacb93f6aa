#pragma once

#include "vegs/core/error.hpp"
#include "vegs/loss/score.hpp"
#include "vegs/loss/score_protocol.hpp"

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <functional>
#include <mutex>
#include <string>
#include <thread>

namespace vegs::loss {

inline constexpr const char* kScoreContentType = "application/octet-stream";

struct Endpoint {
    std::string base; ///< scheme://host[:port]
    std::string path = "/score";
};

/// Splits `http://host:port[/path]`; a bare base URL gets the /score path.
inline Endpoint parse_endpoint(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos || url.substr(0, scheme) != "http")
        throw InvalidInput("score endpoint must be an http:// URL: " + url);
    Endpoint e;
    const auto slash = url.find('/', scheme + 3);
    e.base = url.substr(0, slash);
    if (e.base.size() <= scheme + 3) throw InvalidInput("score endpoint has no host: " + url);
    if (slash != std::string::npos && slash + 1 < url.size()) e.path = url.substr(slash);
    return e;
}

struct HttpOptions {
    int retries = 3;
    std::chrono::milliseconds backoff{200};
    std::chrono::seconds timeout{60};
};

/// Score provider speaking the binary protocol over HTTP POST.
class HttpScoreProvider final : public ScoreProvider {
public:
    explicit HttpScoreProvider(const std::string& url, HttpOptions opts = {})
        : url_(url), endpoint_(parse_endpoint(url)), opts_(opts) {}

    ScoreResponse score(const ScoreRequest& request) override {
        const std::string body = encode_request(request);
        std::string last_error;
        for (int attempt = 0; attempt <= opts_.retries; ++attempt) {
            if (attempt > 0) std::this_thread::sleep_for(opts_.backoff * attempt);
            httplib::Client client(endpoint_.base);
            client.set_connection_timeout(opts_.timeout);
            client.set_read_timeout(opts_.timeout);
            client.set_write_timeout(opts_.timeout);
            auto res = client.Post(endpoint_.path, body, kScoreContentType);
            if (!res) {
                last_error = httplib::to_string(res.error());
                continue;
            }
            if (res->status >= 500) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200)
                throw TransportError(url_ + ": HTTP " + std::to_string(res->status) + ": " + res->body);
            try {
                return decode_response(res->body);
            } catch (const InvalidInput& e) {
                throw TransportError(url_ + ": " + e.what());
            }
        }
        throw TransportError(url_ + ": giving up after " + std::to_string(opts_.retries + 1) +
                             " attempts: " + last_error);
    }

    [[nodiscard]] std::string name() const override { return "http:" + url_; }

private:
    std::string url_;
    Endpoint endpoint_;
    HttpOptions opts_;
};

/// HTTP front end for an in-process provider: POST /score and GET /health.
class ScoreServer {
public:
    explicit ScoreServer(ScoreProvider& provider) : provider_(provider) {
        server_.Post("/score", [this](const httplib::Request& req, httplib::Response& res) {
            ScoreRequest request;
            try {
                request = decode_request(req.body);
            } catch (const InvalidInput& e) {
                res.status = 400;
                res.set_content(e.what(), "text/plain");
                return;
            }
            ScoreResponse response;
            {
                std::lock_guard lock(mutex_);
                try {
                    response = provider_.score(request);
                } catch (const InvalidParameter& e) {
                    res.status = 400;
                    res.set_content(e.what(), "text/plain");
                    return;
                }
            }
            res.set_content(encode_response(response), kScoreContentType);
            ++served_;
        });
        server_.Get("/health", [](const httplib::Request&, httplib::Response& res) {
            res.set_content("ok", "text/plain");
        });
    }

    /// Binds to `host`; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host = "127.0.0.1", int port = 0) {
        const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
        if (bound < 0) throw TransportError("cannot bind score server to " + host + ":" + std::to_string(port));
        return bound;
    }

    /// Blocks until stop() is called.
    void listen() { server_.listen_after_bind(); }
    void stop() { server_.stop(); }
    void wait_until_ready() const { server_.wait_until_ready(); }
    [[nodiscard]] long served() const { return served_.load(); }

private:
    ScoreProvider& provider_;
    httplib::Server server_;
    std::mutex mutex_;
    std::atomic<long> served_{0};
};

/// Runs a ScoreServer on a background thread for the lifetime of the object.
class BackgroundScoreServer {
public:
    explicit BackgroundScoreServer(ScoreProvider& provider, const std::string& host = "127.0.0.1")
        : server_(provider), port_(server_.bind(host, 0)), host_(host) {
        thread_ = std::thread([this] { server_.listen(); });
        server_.wait_until_ready();
    }
    ~BackgroundScoreServer() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }
    BackgroundScoreServer(const BackgroundScoreServer&) = delete;
    BackgroundScoreServer& operator=(const BackgroundScoreServer&) = delete;

    [[nodiscard]] int port() const { return port_; }
    [[nodiscard]] std::string url() const { return "http://" + host_ + ":" + std::to_string(port_) + "/score"; }
    [[nodiscard]] long served() const { return server_.served(); }

private:
    ScoreServer server_;
    int port_;
    std::string host_;
    std::thread thread_;
};

} // namespace vegs::loss

#pragma once

// External trainer over line-delimited JSON on the child's stdin/stdout.
//
// Requests (one JSON object per line):
//   {"cmd":"init","checkpoint":s,"lr":x,"batch_size":n,"seed":n,"data":path}
//   {"cmd":"train","epochs":n}   {"cmd":"eval_test"}   {"cmd":"pause"}
//   {"cmd":"resume","token":s}   {"cmd":"shutdown"}
// Responses: {"ok":true,...} or {"ok":false,"error":s}. init answers with
// "protocol":1, train with "metric", eval_test with "truths" and
// "predictions" (label names), pause with "token".

#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "smalldata/error.hpp"
#include "smalldata/labels.hpp"
#include "smalldata/learner.hpp"
#include "smalldata/metrics.hpp"

namespace smalldata {

inline constexpr int kProtocolVersion = 1;

/// Child process connected through one socket for stdin and stdout.
class JsonLineChannel {
public:
    JsonLineChannel() = default;

    /// Runs `command` through /bin/sh with `--protocol 1` appended.
    explicit JsonLineChannel(const std::string& command) {
        int fds[2];
        if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0) {
            throw TrainerError(std::string("external trainer: socketpair failed: ") + std::strerror(errno));
        }
        const std::string full = command + " --protocol " + std::to_string(kProtocolVersion);
        const pid_t pid = ::fork();
        if (pid < 0) {
            ::close(fds[0]);
            ::close(fds[1]);
            throw TrainerError(std::string("external trainer: fork failed: ") + std::strerror(errno));
        }
        if (pid == 0) {
            ::setpgid(0, 0); // own group, so kill() reaches the shell's children too
            ::dup2(fds[1], STDIN_FILENO);
            ::dup2(fds[1], STDOUT_FILENO);
            ::execl("/bin/sh", "sh", "-c", full.c_str(), static_cast<char*>(nullptr));
            ::_exit(127);
        }
        ::setpgid(pid, pid); // also here, closing the race with the child's own call
        ::close(fds[1]);
        fd_ = fds[0];
        pid_ = pid;
    }

    JsonLineChannel(const JsonLineChannel&) = delete;
    JsonLineChannel& operator=(const JsonLineChannel&) = delete;

    JsonLineChannel(JsonLineChannel&& other) noexcept { *this = std::move(other); }
    JsonLineChannel& operator=(JsonLineChannel&& other) noexcept {
        if (this != &other) {
            kill();
            fd_ = std::exchange(other.fd_, -1);
            pid_ = std::exchange(other.pid_, -1);
            buffer_ = std::move(other.buffer_);
        }
        return *this;
    }

    ~JsonLineChannel() { kill(); }

    bool open() const noexcept { return fd_ >= 0; }

    void send_line(const std::string& line) {
        if (fd_ < 0) {
            throw TrainerError("external trainer: channel closed");
        }
        std::string data = line;
        data += '\n';
        std::size_t sent = 0;
        while (sent < data.size()) {
            const auto n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) {
                    continue;
                }
                throw TrainerError(std::string("external trainer: write failed: ") + std::strerror(errno));
            }
            sent += static_cast<std::size_t>(n);
        }
    }

    std::string read_line(std::chrono::milliseconds timeout) {
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        for (;;) {
            if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
                std::string line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                return line;
            }
            if (fd_ < 0) {
                throw TrainerError("external trainer: channel closed");
            }
            const auto left =
                std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) {
                throw TrainerError("external trainer: response timeout");
            }
            pollfd p{fd_, POLLIN, 0};
            const int r = ::poll(&p, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
            if (r < 0 && errno == EINTR) {
                continue;
            }
            if (r == 0) {
                throw TrainerError("external trainer: response timeout");
            }
            char chunk[4096];
            const auto n = ::recv(fd_, chunk, sizeof chunk, 0);
            if (n < 0 && errno == EINTR) {
                continue;
            }
            if (n <= 0) {
                throw TrainerError("external trainer: process closed its output");
            }
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

    /// Waits up to `timeout` for a clean exit, then kills.
    int finish(std::chrono::milliseconds timeout) {
        if (pid_ < 0) {
            return -1;
        }
        if (fd_ >= 0) {
            ::shutdown(fd_, SHUT_WR);
        }
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        int status = 0;
        while (std::chrono::steady_clock::now() < deadline) {
            const pid_t r = ::waitpid(pid_, &status, WNOHANG);
            if (r == pid_) {
                pid_ = -1;
                close_fd();
                return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
            }
            ::usleep(2000);
        }
        kill();
        return -1;
    }

    void kill() noexcept {
        if (pid_ > 0) {
            ::kill(-pid_, SIGKILL);
            ::kill(pid_, SIGKILL);
            int status = 0;
            ::waitpid(pid_, &status, 0);
            pid_ = -1;
        }
        close_fd();
    }

private:
    void close_fd() noexcept {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

    int fd_ = -1;
    pid_t pid_ = -1;
    std::string buffer_;
};

struct ExternalTrainerOptions {
    std::string command;
    std::string checkpoint;
    std::string data_manifest; // inputs manifest passed in init as "data"
    std::chrono::milliseconds timeout{std::chrono::minutes(30)};
};

/// TrainerHandle backed by one adapter process per handle.
class ExternalTrainer final : public TrainerHandle {
public:
    explicit ExternalTrainer(ExternalTrainerOptions options) : options_(std::move(options)) {}

    ~ExternalTrainer() override {
        try {
            shutdown();
        } catch (...) {
        }
    }

    void init(const TrainConfig& config) override {
        config.validate();
        if (!channel_.open()) {
            channel_ = JsonLineChannel(options_.command);
        }
        nlohmann::json req = {{"cmd", "init"},
                              {"checkpoint", options_.checkpoint},
                              {"lr", config.learning_rate},
                              {"batch_size", config.batch_size},
                              {"seed", config.seed}};
        if (!options_.data_manifest.empty()) {
            req["data"] = options_.data_manifest;
        }
        const auto resp = request(req);
        if (resp.value("protocol", 0) != kProtocolVersion) {
            throw TrainerError("external trainer: protocol version mismatch");
        }
    }

    double train(int epochs) override {
        if (epochs < 0) {
            throw TrainerError("external trainer: negative epoch count");
        }
        const auto resp = request({{"cmd", "train"}, {"epochs", epochs}});
        if (!resp.contains("metric") || !resp.at("metric").is_number()) {
            throw TrainerError("external trainer: train response lacks a numeric metric");
        }
        return resp.at("metric").get<double>();
    }

    EvalReport evaluate_test() override {
        const auto resp = request({{"cmd", "eval_test"}});
        try {
            const auto truths = resp.at("truths").get<std::vector<DefectLabel>>();
            const auto preds = resp.at("predictions").get<std::vector<DefectLabel>>();
            return evaluate(confusion(truths, preds));
        } catch (const nlohmann::json::exception& e) {
            throw TrainerError(std::string("external trainer: malformed eval_test response: ") + e.what());
        } catch (const FormatError& e) {
            throw TrainerError(std::string("external trainer: malformed eval_test response: ") + e.what());
        }
    }

    std::string pause() override {
        const auto resp = request({{"cmd", "pause"}});
        if (!resp.contains("token") || !resp.at("token").is_string()) {
            throw TrainerError("external trainer: pause response lacks a token");
        }
        return resp.at("token").get<std::string>();
    }

    void resume(const std::string& token) override { request({{"cmd", "resume"}, {"token", token}}); }

    void shutdown() override {
        if (!channel_.open()) {
            return;
        }
        try {
            request({{"cmd", "shutdown"}});
        } catch (const TrainerError&) {
            // the process is killed below either way
        }
        channel_.finish(std::chrono::seconds(5));
    }

    /// Sends one request and returns the parsed ok:true response.
    nlohmann::json request(const nlohmann::json& req) {
        if (!channel_.open()) {
            throw TrainerError("external trainer: not started (call init first)");
        }
        std::string line;
        try {
            channel_.send_line(req.dump());
            line = channel_.read_line(options_.timeout);
        } catch (const TrainerError&) {
            // a late reply would desynchronize the stream: drop the process
            channel_.kill();
            throw;
        }
        nlohmann::json resp;
        try {
            resp = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
            throw TrainerError("external trainer: unparseable response: " + line);
        }
        if (!resp.is_object() || !resp.contains("ok") || !resp.at("ok").is_boolean()) {
            throw TrainerError("external trainer: response lacks boolean 'ok': " + line);
        }
        if (!resp.at("ok").get<bool>()) {
            throw TrainerError("external trainer: " + resp.value("error", std::string("unspecified error")));
        }
        return resp;
    }

private:
    ExternalTrainerOptions options_;
    JsonLineChannel channel_;
};

// Scripted fake-client conformance suite ------------------------------------

struct ConformanceCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Drives a fresh adapter process through the protocol: rejection cases
/// first, then init/train/eval_test/pause/resume/shutdown on a valid
/// checkpoint. `unknown_checkpoint` must be an id the adapter cannot load.
inline std::vector<ConformanceCheck> run_protocol_conformance(const ExternalTrainerOptions& options,
                                                              const std::string& unknown_checkpoint =
                                                                  "no-such-org/no-such-model") {
    std::vector<ConformanceCheck> checks;
    auto record = [&](std::string name, bool ok, std::string detail = {}) {
        checks.push_back({std::move(name), ok, std::move(detail)});
    };
    auto exchange = [&](JsonLineChannel& ch, const std::string& line) -> std::optional<nlohmann::json> {
        try {
            ch.send_line(line);
            return nlohmann::json::parse(ch.read_line(options.timeout));
        } catch (const std::exception&) {
            return std::nullopt;
        }
    };
    auto is_error = [](const std::optional<nlohmann::json>& r, const std::string& code) {
        return r && r->is_object() && r->value("ok", true) == false &&
               (code.empty() || r->value("error", std::string()) == code);
    };

    try {
        JsonLineChannel ch(options.command);
        auto r = exchange(ch, "{this is not json");
        record("malformed request -> bad_request", is_error(r, "bad_request"), r ? r->dump() : "no response");
        r = exchange(ch, R"({"cmd":"fly"})");
        record("unknown cmd -> ok:false", is_error(r, ""), r ? r->dump() : "no response");
        r = exchange(ch, nlohmann::json({{"cmd", "init"},
                                         {"checkpoint", unknown_checkpoint},
                                         {"lr", 1e-5},
                                         {"batch_size", 16},
                                         {"seed", 1}})
                             .dump());
        record("unknown checkpoint -> checkpoint_unavailable", is_error(r, "checkpoint_unavailable"),
               r ? r->dump() : "no response");
        r = exchange(ch, R"({"cmd":"shutdown"})");
        record("shutdown before init -> ok", r && r->value("ok", false));
        record("process exits after shutdown", ch.finish(std::chrono::seconds(10)) == 0);
    } catch (const std::exception& e) {
        record("rejection session", false, e.what());
    }

    try {
        ExternalTrainer t(options);
        t.init(TrainConfig{1e-5, 16, 7});
        record("init -> protocol 1", true);
        const double m0 = t.train(0);
        record("train(0) -> metric in [0,1]", m0 >= 0.0 && m0 <= 1.0, std::to_string(m0));
        const double m1 = t.train(1);
        record("train(1) -> metric in [0,1]", m1 >= 0.0 && m1 <= 1.0, std::to_string(m1));
        const auto report = t.evaluate_test();
        record("eval_test -> predictions scored", report.macro_f1 >= 0.0 && report.macro_f1 <= 1.0,
               std::to_string(report.macro_f1));
        const auto token = t.pause();
        record("pause -> token", !token.empty());
        t.resume(token);
        record("resume(token) -> ok", true);
        const double m2 = t.train(0);
        record("train(0) after resume keeps metric", m2 == m1, std::to_string(m2) + " vs " + std::to_string(m1));
        t.shutdown();
        record("shutdown -> ok", true);
    } catch (const std::exception& e) {
        record("session", false, e.what());
    }
    return checks;
}

} // namespace smalldata

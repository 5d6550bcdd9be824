#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "stackem/benchmarks.hpp"

namespace stackem {

struct SubprocessConfig {
  std::string command;           // run via /bin/sh -c
  int max_level = 10;
  double xi0 = 1.0;
  int T = 2;
  std::vector<double> costs;     // per level; empty -> cost from response
  double timeout_seconds = 600.0;
  int max_retries = 2;           // restarts on crash before giving up
};

// Drives an external simulator over a JSON-lines pipe protocol. One request
// per line: {"level": int, "xi": real, "x": [real...]}. One response per
// line: {"y": real, "cost": real}. Requests are answered in order.
class SubprocessSimulator : public Simulator {
 public:
  explicit SubprocessSimulator(SubprocessConfig cfg) : cfg_(std::move(cfg)) {}

  ~SubprocessSimulator() override { stop(); }

  EvalResult evaluate(int level, const Vector& x) override {
    std::lock_guard<std::mutex> lock(mutex_);
    nlohmann::json req;
    req["level"] = level;
    req["xi"] = cfg_.xi0 * std::pow(double(cfg_.T), -level);
    req["x"] = std::vector<double>(x.data(), x.data() + x.size());
    std::string line = req.dump();
    line.push_back('\n');

    int crashes = 0;
    while (true) {
      try {
        ensure_running();
        write_all(line);
        std::string resp = read_line();
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(resp);
        } catch (const nlohmann::json::parse_error&) {
          throw ProtocolError("subprocess: malformed response line: " + resp);
        }
        if (!j.contains("y"))
          throw ProtocolError("subprocess: response missing \"y\": " + resp);
        double cost = j.value("cost", 0.0);
        if (!cfg_.costs.empty()) cost = cost_per_run(level);
        return {j["y"].get<double>(), cost};
      } catch (const SimulatorCrash&) {
        stop();
        if (++crashes > cfg_.max_retries) throw;
      }
    }
  }

  double cost_per_run(int level) const override {
    if (!cfg_.costs.empty()) {
      if (level < 1 || level > static_cast<int>(cfg_.costs.size()))
        throw SimulatorError("subprocess: no cost configured for level " +
                             std::to_string(level));
      return cfg_.costs[level - 1];
    }
    // With per-response costs, use a geometric placeholder for allocation;
    // the ledger records the reported cost.
    return std::pow(2.0, level);
  }

  int max_level() const override { return cfg_.max_level; }
  bool concurrency_safe() const override { return false; }

 private:
  void ensure_running() {
    if (pid_ > 0) {
      int status = 0;
      pid_t r = waitpid(pid_, &status, WNOHANG);
      if (r == 0) return;  // still alive
      pid_ = -1;
      close_pipes();
    }
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0)
      throw SimulatorError("subprocess: pipe() failed");
    pid_ = fork();
    if (pid_ < 0) throw SimulatorError("subprocess: fork() failed");
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", cfg_.command.c_str(), nullptr);
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    in_fd_ = to_child[1];
    out_fd_ = from_child[0];
    buffer_.clear();
  }

  void write_all(const std::string& data) {
    size_t off = 0;
    while (off < data.size()) {
      ssize_t w = write(in_fd_, data.data() + off, data.size() - off);
      if (w < 0) {
        if (errno == EINTR) continue;
        throw SimulatorCrash("subprocess: write failed (process exited?)");
      }
      off += static_cast<size_t>(w);
    }
  }

  std::string read_line() {
    while (true) {
      size_t nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      struct pollfd pfd{out_fd_, POLLIN, 0};
      int pr = poll(&pfd, 1, static_cast<int>(cfg_.timeout_seconds * 1000));
      if (pr == 0)
        throw SimulatorTimeout("subprocess: no response within timeout");
      if (pr < 0) {
        if (errno == EINTR) continue;
        throw SimulatorError("subprocess: poll failed");
      }
      char chunk[4096];
      ssize_t r = read(out_fd_, chunk, sizeof(chunk));
      if (r < 0) {
        if (errno == EINTR) continue;
        throw SimulatorCrash("subprocess: read failed");
      }
      if (r == 0) throw SimulatorCrash("subprocess: process exited mid-request");
      buffer_.append(chunk, static_cast<size_t>(r));
    }
  }

  void close_pipes() {
    if (in_fd_ >= 0) close(in_fd_);
    if (out_fd_ >= 0) close(out_fd_);
    in_fd_ = out_fd_ = -1;
  }

  void stop() {
    if (pid_ > 0) {
      kill(pid_, SIGTERM);
      int status = 0;
      waitpid(pid_, &status, 0);
      pid_ = -1;
    }
    close_pipes();
  }

  SubprocessConfig cfg_;
  std::mutex mutex_;
  pid_t pid_ = -1;
  int in_fd_ = -1;
  int out_fd_ = -1;
  std::string buffer_;
};

}  // namespace stackem

#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

namespace evoprobe {

/// Local similarity-score endpoint for tests and demos. Accepts POST on any
/// path, reads the point at the JSON pointer `point_path` (array or base64 of
/// the binary point format) and answers {"<score_key>": score}.
struct StubOptions {
  std::string point_path = "/point";
  std::string score_key = "similarity";
  /// Defaults to a constant 95.
  std::function<double(const std::vector<double>&)> score;
  /// The first `fail_first` requests get `fail_status`.
  int fail_first = 0;
  /// Requests from this index on get `fail_status`; negative disables.
  int fail_after = -1;
  int fail_status = 503;
  std::chrono::milliseconds delay{0};
  /// Sent verbatim instead of the score document.
  std::optional<std::string> raw_response;
  /// Requests without this header get 401.
  std::optional<std::pair<std::string, std::string>> required_header;
};

struct StubRequest {
  std::chrono::steady_clock::time_point received;
  std::string path;
  std::string body;
  int status = 0;
};

class StubServer {
 public:
  explicit StubServer(StubOptions options = {}, const std::string& host = "127.0.0.1", int port = 0);
  ~StubServer();
  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;

  int port() const noexcept { return port_; }
  std::string url(const std::string& path = "/score") const;
  std::vector<StubRequest> requests() const;
  void stop();

  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::string host_;
  int port_ = 0;
  std::thread thread_;
};

std::vector<double> decode_point_payload(const nlohmann::json& payload);
std::string base64_decode(const std::string& in);

}  // namespace evoprobe

#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "evoprobe/core.hpp"
#include "evoprobe/oracles.hpp"

namespace evoprobe {

/// 4xx responses and unusable configurations. Never retried.
class ConfigurationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Transport failure or 5xx that outlived every retry.
class QueryFailed : public std::runtime_error {
 public:
  QueryFailed(const std::string& what, int attempts) : std::runtime_error(what), attempts_(attempts) {}
  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

/// The response did not carry a numeric score where expected.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PayloadEncoding { JsonArray, Base64 };
enum class Comparison { GreaterEqual, Greater, LessEqual, Less };

std::string to_string(PayloadEncoding e);
PayloadEncoding parse_payload_encoding(const std::string& s);
std::string to_string(Comparison c);
/// Accepts ">=", ">", "<=", "<" and the spelled-out forms "ge", "gt", "le", "lt".
Comparison parse_comparison(const std::string& s);
bool compare(double score, Comparison c, double threshold);

inline constexpr const char* kPointPlaceholder = "{{point}}";

struct RemoteOracleConfig {
  std::string endpoint_url;
  std::string method = "POST";
  /// Any JSON document; every string value equal to "{{point}}" is replaced
  /// by the encoded point.
  nlohmann::json request_template = nlohmann::json{{"point", kPointPlaceholder}};
  PayloadEncoding payload_encoding = PayloadEncoding::JsonArray;
  std::string score_path = "/similarity";
  double threshold = 90.0;
  Comparison comparison = Comparison::Greater;
  double rate_limit = 10.0;  // requests per second
  int max_retries = 3;
  int backoff_base_ms = 100;
  int timeout_ms = 5000;
  bool cache_enabled = false;
  bool count_cache_hits = true;
  /// Single static header, e.g. an API key.
  std::optional<std::pair<std::string, std::string>> header;

  std::vector<std::string> problems() const;
  void validate() const;

  /// Replaces endpoint_url with $EVOPROBE_REMOTE_URL when that is set.
  void apply_env_override();
};

void to_json(nlohmann::json& j, const RemoteOracleConfig& c);
void from_json(const nlohmann::json& j, RemoteOracleConfig& c);

/// Request body for x. Deterministic: equal points give equal bytes.
std::string encode_request(const RemoteOracleConfig& config, std::span<const double> x);

/// Score at config.score_path; ProtocolError if absent, unparsable or non-numeric.
double extract_score(const RemoteOracleConfig& config, const std::string& response_body);

/// Minimum spacing between requests, measured from the end of one request
/// to the start of the next. Shared by every oracle that targets the same
/// endpoint through `for_endpoint`.
class RateGate {
 public:
  /// Held for the duration of one request.
  class Slot {
   public:
    ~Slot();
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;

   private:
    friend class RateGate;
    explicit Slot(RateGate& gate);
    RateGate& gate_;
    std::unique_lock<std::mutex> lock_;
  };

  explicit RateGate(double rate);

  /// Blocks until the interval since the previous request has passed.
  Slot acquire();
  std::chrono::nanoseconds interval() const;

  static std::shared_ptr<RateGate> for_endpoint(const std::string& url, double rate);

 private:
  mutable std::mutex mutex_;
  std::chrono::nanoseconds interval_;
  std::optional<std::chrono::steady_clock::time_point> last_;
};

/// Hard-label oracle backed by an HTTP similarity-score endpoint.
class RemoteOracle final : public Oracle {
 public:
  RemoteOracle(RemoteOracleConfig config, InputGeometry geometry, std::string name = "remote");
  ~RemoteOracle() override;

  std::size_t dimension() const override { return geometry_.dimension; }
  std::optional<GridShape> shape() const override { return geometry_.shape; }
  std::optional<Bounds> bounds() const override { return geometry_.bounds; }
  std::string name() const override { return name_; }

  const RemoteOracleConfig& config() const noexcept { return config_; }
  /// HTTP requests sent, retries included.
  std::uint64_t requests() const;
  std::uint64_t cache_hits() const;

 protected:
  Evaluation evaluate(std::span<const double> x) const override;

 private:
  Label fetch(const std::string& body) const;

  struct Transport;

  RemoteOracleConfig config_;
  InputGeometry geometry_;
  std::string name_;
  std::shared_ptr<RateGate> gate_;
  std::unique_ptr<Transport> transport_;

  mutable std::mutex mutex_;
  mutable std::unordered_map<std::string, Label> cache_;
  mutable std::uint64_t requests_ = 0;
  mutable std::uint64_t cache_hits_ = 0;
};

}  // namespace evoprobe

#include "evoprobe/remote.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <regex>
#include <sstream>
#include <thread>

#include "httplib.h"

namespace evoprobe {

namespace {

bool contains_placeholder(const nlohmann::json& j) {
  if (j.is_string()) return j.get_ref<const std::string&>() == kPointPlaceholder;
  if (j.is_array() || j.is_object()) {
    for (const auto& child : j) {
      if (contains_placeholder(child)) return true;
    }
  }
  return false;
}

void substitute(nlohmann::json& j, const nlohmann::json& payload) {
  if (j.is_string() && j.get_ref<const std::string&>() == kPointPlaceholder) {
    j = payload;
    return;
  }
  if (j.is_array() || j.is_object()) {
    for (auto& child : j) substitute(child, payload);
  }
}

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

std::optional<Endpoint> split_url(const std::string& url) {
  static const std::regex re(R"(^(http://[^/?#]+)(/[^#]*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) return std::nullopt;
  return Endpoint{m[1].str(), m[2].matched ? m[2].str() : "/"};
}

}  // namespace

std::string to_string(PayloadEncoding e) { return e == PayloadEncoding::JsonArray ? "json-array" : "base64"; }

PayloadEncoding parse_payload_encoding(const std::string& s) {
  if (s == "json-array") return PayloadEncoding::JsonArray;
  if (s == "base64") return PayloadEncoding::Base64;
  throw std::invalid_argument("unknown payload encoding '" + s + "' (expected json-array or base64)");
}

std::string to_string(Comparison c) {
  switch (c) {
    case Comparison::GreaterEqual: return ">=";
    case Comparison::Greater: return ">";
    case Comparison::LessEqual: return "<=";
    case Comparison::Less: return "<";
  }
  return "?";
}

Comparison parse_comparison(const std::string& s) {
  if (s == ">=" || s == "ge" || s == "≥") return Comparison::GreaterEqual;
  if (s == ">" || s == "gt") return Comparison::Greater;
  if (s == "<=" || s == "le" || s == "≤") return Comparison::LessEqual;
  if (s == "<" || s == "lt") return Comparison::Less;
  throw std::invalid_argument("unknown comparison '" + s + "'");
}

bool compare(double score, Comparison c, double threshold) {
  switch (c) {
    case Comparison::GreaterEqual: return score >= threshold;
    case Comparison::Greater: return score > threshold;
    case Comparison::LessEqual: return score <= threshold;
    case Comparison::Less: return score < threshold;
  }
  return false;
}

// ---------------------------------------------------------------------------

std::vector<std::string> RemoteOracleConfig::problems() const {
  std::vector<std::string> out;
  if (endpoint_url.empty()) {
    out.push_back("endpoint_url is empty");
  } else if (!split_url(endpoint_url)) {
    out.push_back("endpoint_url '" + endpoint_url + "' is not an http://host[:port]/path URL");
  }
  if (method != "POST") out.push_back("method must be POST");
  if (!contains_placeholder(request_template)) {
    out.push_back(std::string("request_template has no \"") + kPointPlaceholder + "\" placeholder");
  }
  if (score_path.empty()) {
    out.push_back("score_path is empty");
  } else {
    try {
      nlohmann::json::json_pointer ptr(score_path);
    } catch (const nlohmann::json::exception&) {
      out.push_back("score_path '" + score_path + "' is not a JSON pointer");
    }
  }
  if (!std::isfinite(threshold)) out.push_back("threshold must be finite");
  if (!(rate_limit > 0.0) || !std::isfinite(rate_limit)) out.push_back("rate_limit must be positive");
  if (max_retries < 0) out.push_back("max_retries must be >= 0");
  if (backoff_base_ms < 0) out.push_back("backoff_base_ms must be >= 0");
  if (timeout_ms <= 0) out.push_back("timeout_ms must be positive");
  if (header && header->first.empty()) out.push_back("header name is empty");
  return out;
}

void RemoteOracleConfig::validate() const {
  const auto issues = problems();
  if (issues.empty()) return;
  std::ostringstream msg;
  msg << "invalid remote oracle configuration:";
  for (const auto& p : issues) msg << "\n  - " << p;
  throw ConfigurationError(msg.str());
}

void RemoteOracleConfig::apply_env_override() {
  if (const char* url = std::getenv("EVOPROBE_REMOTE_URL"); url && *url) endpoint_url = url;
}

void to_json(nlohmann::json& j, const RemoteOracleConfig& c) {
  j = nlohmann::json{{"endpoint_url", c.endpoint_url},
                     {"method", c.method},
                     {"request_template", c.request_template},
                     {"payload_encoding", to_string(c.payload_encoding)},
                     {"score_path", c.score_path},
                     {"threshold", c.threshold},
                     {"comparison", to_string(c.comparison)},
                     {"rate_limit", c.rate_limit},
                     {"max_retries", c.max_retries},
                     {"backoff_base_ms", c.backoff_base_ms},
                     {"timeout_ms", c.timeout_ms},
                     {"cache_enabled", c.cache_enabled},
                     {"count_cache_hits", c.count_cache_hits}};
  if (c.header) j["header"] = {{"name", c.header->first}, {"value", c.header->second}};
}

void from_json(const nlohmann::json& j, RemoteOracleConfig& c) {
  static const std::vector<std::string> known = {
      "endpoint_url", "method",  "request_template", "payload_encoding", "score_path",
      "threshold",    "comparison", "rate_limit",    "max_retries",      "backoff_base_ms",
      "timeout_ms",   "cache_enabled", "count_cache_hits", "header"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigurationError("unknown remote oracle key '" + key + "'");
    }
  }
  RemoteOracleConfig d;
  c.endpoint_url = j.value("endpoint_url", d.endpoint_url);
  c.method = j.value("method", d.method);
  c.request_template = j.value("request_template", d.request_template);
  c.payload_encoding = parse_payload_encoding(j.value("payload_encoding", to_string(d.payload_encoding)));
  c.score_path = j.value("score_path", d.score_path);
  c.threshold = j.value("threshold", d.threshold);
  c.comparison = parse_comparison(j.value("comparison", to_string(d.comparison)));
  c.rate_limit = j.value("rate_limit", d.rate_limit);
  c.max_retries = j.value("max_retries", d.max_retries);
  c.backoff_base_ms = j.value("backoff_base_ms", d.backoff_base_ms);
  c.timeout_ms = j.value("timeout_ms", d.timeout_ms);
  c.cache_enabled = j.value("cache_enabled", d.cache_enabled);
  c.count_cache_hits = j.value("count_cache_hits", d.count_cache_hits);
  c.header.reset();
  if (j.contains("header")) {
    const auto& h = j.at("header");
    c.header = std::make_pair(h.at("name").get<std::string>(), h.at("value").get<std::string>());
  }
}

std::string encode_request(const RemoteOracleConfig& config, std::span<const double> x) {
  nlohmann::json payload;
  if (config.payload_encoding == PayloadEncoding::JsonArray) {
    payload = nlohmann::json::array();
    for (double v : x) payload.push_back(v);
  } else {
    payload = httplib::detail::base64_encode(encode_point_binary(x));
  }
  nlohmann::json body = config.request_template;
  substitute(body, payload);
  return body.dump();
}

double extract_score(const RemoteOracleConfig& config, const std::string& response_body) {
  const nlohmann::json doc = nlohmann::json::parse(response_body, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) throw ProtocolError("response is not JSON");
  const nlohmann::json::json_pointer ptr(config.score_path);
  if (!doc.contains(ptr)) throw ProtocolError("response has no value at " + config.score_path);
  const auto& score = doc.at(ptr);
  if (!score.is_number()) throw ProtocolError("value at " + config.score_path + " is not numeric: " + score.dump());
  const double v = score.get<double>();
  if (!std::isfinite(v)) throw ProtocolError("score at " + config.score_path + " is not finite");
  return v;
}

// ---------------------------------------------------------------------------

RateGate::RateGate(double rate) {
  if (!(rate > 0.0) || !std::isfinite(rate)) throw std::invalid_argument("rate must be positive");
  interval_ = std::chrono::nanoseconds(static_cast<std::int64_t>(std::ceil(1e9 / rate)));
}

RateGate::Slot::Slot(RateGate& gate) : gate_(gate), lock_(gate.mutex_) {
  if (gate_.last_) std::this_thread::sleep_until(*gate_.last_ + gate_.interval_);
}

RateGate::Slot::~Slot() { gate_.last_ = std::chrono::steady_clock::now(); }

RateGate::Slot RateGate::acquire() { return Slot(*this); }

std::chrono::nanoseconds RateGate::interval() const {
  std::lock_guard lock(mutex_);
  return interval_;
}

std::shared_ptr<RateGate> RateGate::for_endpoint(const std::string& url, double rate) {
  static std::mutex registry_mutex;
  static std::map<std::string, std::weak_ptr<RateGate>> registry;
  std::lock_guard lock(registry_mutex);
  if (auto existing = registry[url].lock()) {
    // the slowest configured rate wins for a shared endpoint
    const auto wanted = RateGate(rate).interval();
    std::lock_guard gate_lock(existing->mutex_);
    existing->interval_ = std::max(existing->interval_, wanted);
    return existing;
  }
  auto gate = std::make_shared<RateGate>(rate);
  registry[url] = gate;
  return gate;
}

// ---------------------------------------------------------------------------

struct RemoteOracle::Transport {
  httplib::Client client;
  std::string path;
  httplib::Headers headers;

  Transport(const Endpoint& e, const RemoteOracleConfig& config) : client(e.origin), path(e.path) {
    const auto timeout = std::chrono::milliseconds(config.timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    if (config.header) headers.emplace(config.header->first, config.header->second);
  }
};

RemoteOracle::RemoteOracle(RemoteOracleConfig config, InputGeometry geometry, std::string name)
    : config_(std::move(config)), geometry_(std::move(geometry)), name_(std::move(name)) {
  config_.validate();
  if (geometry_.dimension == 0) throw ConfigurationError("remote oracle dimension must be positive");
  if (geometry_.shape && geometry_.shape->size() != geometry_.dimension) {
    throw DimensionMismatch(geometry_.dimension, geometry_.shape->size());
  }
  gate_ = RateGate::for_endpoint(config_.endpoint_url, config_.rate_limit);
  transport_ = std::make_unique<Transport>(*split_url(config_.endpoint_url), config_);
}

RemoteOracle::~RemoteOracle() = default;

std::uint64_t RemoteOracle::requests() const {
  std::lock_guard lock(mutex_);
  return requests_;
}

std::uint64_t RemoteOracle::cache_hits() const {
  std::lock_guard lock(mutex_);
  return cache_hits_;
}

Evaluation RemoteOracle::evaluate(std::span<const double> x) const {
  std::lock_guard lock(mutex_);
  std::string key;
  if (config_.cache_enabled) {
    key = encode_point_binary(x);
    if (auto it = cache_.find(key); it != cache_.end()) {
      ++cache_hits_;
      return {it->second, config_.count_cache_hits};
    }
  }
  const Label label = fetch(encode_request(config_, x));
  if (config_.cache_enabled) cache_.emplace(std::move(key), label);
  return {label, true};
}

Label RemoteOracle::fetch(const std::string& body) const {
  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<std::int64_t>(config_.backoff_base_ms)
                                                            << (attempt - 1)));
    }
    httplib::Result res;
    {
      const auto slot = gate_->acquire();
      ++requests_;
      res = transport_->client.Post(transport_->path, transport_->headers, body, "application/json");
    }
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    const int status = res->status;
    if (status >= 200 && status < 300) {
      const double score = extract_score(config_, res->body);
      return Label{compare(score, config_.comparison, config_.threshold) ? 1u : 0u};
    }
    if (status >= 400 && status < 500) {
      throw ConfigurationError("HTTP " + std::to_string(status) + " from " + config_.endpoint_url + ": " + res->body);
    }
    if (status >= 500) {
      last_error = "HTTP " + std::to_string(status);
      continue;
    }
    throw ProtocolError("unexpected HTTP " + std::to_string(status) + " from " + config_.endpoint_url);
  }
  throw QueryFailed("query to " + config_.endpoint_url + " failed after " + std::to_string(config_.max_retries + 1) +
                        " attempts (" + last_error + ")",
                    config_.max_retries + 1);
}

}  // namespace evoprobe

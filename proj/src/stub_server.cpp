#include "evoprobe/stub_server.hpp"

#include <array>
#include <stdexcept>

#include "httplib.h"

#include "evoprobe/oracles.hpp"

namespace evoprobe {

std::string base64_decode(const std::string& in) {
  static const std::array<int, 256> table = [] {
    std::array<int, 256> t{};
    t.fill(-1);
    const std::string alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    for (std::size_t i = 0; i < alphabet.size(); ++i) t[static_cast<unsigned char>(alphabet[i])] = static_cast<int>(i);
    return t;
  }();
  std::string out;
  unsigned buffer = 0;
  int bits = 0;
  for (char c : in) {
    if (c == '=') break;
    const int v = table[static_cast<unsigned char>(c)];
    if (v < 0) throw std::invalid_argument("invalid base64 character");
    buffer = (buffer << 6) | static_cast<unsigned>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((buffer >> bits) & 0xFFu));
    }
  }
  return out;
}

std::vector<double> decode_point_payload(const nlohmann::json& payload) {
  if (payload.is_array()) return payload.get<std::vector<double>>();
  if (payload.is_string()) return decode_point_binary(base64_decode(payload.get<std::string>()));
  throw std::invalid_argument("point payload must be an array or a base64 string");
}

struct StubServer::Impl {
  httplib::Server server;
  StubOptions options;
  mutable std::mutex mutex;
  std::vector<StubRequest> log;
  int served = 0;
};

StubServer::StubServer(StubOptions options, const std::string& host, int port)
    : impl_(std::make_unique<Impl>()), host_(host) {
  impl_->options = std::move(options);
  if (!impl_->options.score) impl_->options.score = [](const std::vector<double>&) { return 95.0; };

  Impl* impl = impl_.get();
  impl->server.Post(R"(/.*)", [impl](const httplib::Request& req, httplib::Response& res) {
    const auto received = std::chrono::steady_clock::now();
    const StubOptions& opt = impl->options;
    int attempt;
    {
      std::lock_guard lock(impl->mutex);
      attempt = impl->served++;
    }
    if (opt.delay.count() > 0) std::this_thread::sleep_for(opt.delay);

    if (opt.required_header &&
        req.get_header_value(opt.required_header->first) != opt.required_header->second) {
      res.status = 401;
      res.set_content(R"({"error":"unauthorized"})", "application/json");
    } else if (attempt < opt.fail_first || (opt.fail_after >= 0 && attempt >= opt.fail_after)) {
      res.status = opt.fail_status;
      res.set_content(R"({"error":"unavailable"})", "application/json");
    } else if (opt.raw_response) {
      res.status = 200;
      res.set_content(*opt.raw_response, "application/json");
    } else {
      try {
        const auto doc = nlohmann::json::parse(req.body);
        const auto x = decode_point_payload(doc.at(nlohmann::json::json_pointer(opt.point_path)));
        res.status = 200;
        res.set_content(nlohmann::json{{opt.score_key, opt.score(x)}}.dump(), "application/json");
      } catch (const std::exception& e) {
        res.status = 400;
        res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
      }
    }
    std::lock_guard lock(impl->mutex);
    impl->log.push_back({received, req.path, req.body, res.status});
  });

  port_ = port == 0 ? impl->server.bind_to_any_port(host_) : (impl->server.bind_to_port(host_, port) ? port : -1);
  if (port_ <= 0) throw std::runtime_error("stub server could not bind to " + host_);
  thread_ = std::thread([impl] { impl->server.listen_after_bind(); });
  impl->server.wait_until_ready();
}

StubServer::~StubServer() { stop(); }

std::string StubServer::url(const std::string& path) const {
  return "http://" + host_ + ":" + std::to_string(port_) + path;
}

std::vector<StubRequest> StubServer::requests() const {
  std::lock_guard lock(impl_->mutex);
  return impl_->log;
}

void StubServer::stop() {
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

void StubServer::wait() {
  if (thread_.joinable()) thread_.join();
}

}  // namespace evoprobe

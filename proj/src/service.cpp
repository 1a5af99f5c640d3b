#include "semmark/service.hpp"

#include <fstream>
#include <httplib.h>
#include <json.hpp>
#include <mutex>
#include <thread>

#include "semmark/error.hpp"

namespace semmark {

using json = nlohmann::json;

namespace {

void send_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", {{"message", message}, {"status", status}}}}.dump(), "application/json");
}

bool is_upstream_failure(ErrorCode code) {
  return code == ErrorCode::Network || code == ErrorCode::AuthFailed || code == ErrorCode::MalformedResponse;
}

}  // namespace

void parse_bind_address(const std::string& addr, ServiceConfig& cfg) {
  const auto colon = addr.rfind(':');
  std::string port = addr;
  if (colon != std::string::npos) {
    if (colon > 0) cfg.host = addr.substr(0, colon);
    port = addr.substr(colon + 1);
  }
  try {
    std::size_t used = 0;
    const int p = std::stoi(port, &used);
    if (used != port.size() || p < 0 || p > 65535) throw std::out_of_range("port");
    cfg.port = p;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "bad bind address '" + addr + "' (expected host:port)");
  }
}

struct EmbeddingService::Impl {
  std::shared_ptr<const ProviderBundle> bundle;
  ServiceConfig cfg;
  httplib::Server server;
  std::thread thread;
  int port = -1;
  std::mutex trace_mutex;
  std::ofstream trace;

  void append_traces(const std::vector<InjectionTrace>& traces) {
    if (!trace.is_open()) return;
    std::lock_guard lock(trace_mutex);
    for (const auto& t : traces) trace << t.to_json().dump() << '\n';
    trace.flush();
  }

  void handle_embeddings(const httplib::Request& req, httplib::Response& res) {
    if (!cfg.service_key.empty() && req.get_header_value("Authorization") != "Bearer " + cfg.service_key) {
      send_error(res, 401, "missing or invalid service key");
      return;
    }
    std::vector<std::string> texts;
    try {
      const json body = json::parse(req.body);
      const json& input = body.at("input");
      if (input.is_string()) {
        texts.push_back(input.get<std::string>());
      } else if (input.is_array()) {
        for (const auto& t : input) texts.push_back(t.get<std::string>());
      } else {
        throw Error(ErrorCode::ParseError, "\"input\" must be a string or an array of strings");
      }
    } catch (const std::exception& e) {
      send_error(res, 400, std::string("malformed request: ") + e.what());
      return;
    }

    BatchOutput out;
    try {
      out = batch_process(*bundle, texts);
    } catch (const Error& e) {
      if (is_upstream_failure(e.code())) {
        res.set_header("Retry-After", std::to_string(cfg.retry_after.count()));
        send_error(res, 502, std::string("upstream encoder failed: ") + e.what());
      } else {
        send_error(res, 400, e.what());
      }
      return;
    }
    append_traces(out.traces);

    json data = json::array();
    for (std::size_t i = 0; i < out.corpus.size(); ++i) {
      data.push_back({{"object", "embedding"}, {"index", i}, {"embedding", out.corpus[i].vec}});
    }
    json reply{{"object", "list"}, {"data", std::move(data)}};
    if (!cfg.stealth) reply["watermark"] = "semmark";
    res.status = 200;
    res.set_content(reply.dump(), "application/json");
  }
};

EmbeddingService::EmbeddingService(std::shared_ptr<const ProviderBundle> bundle, ServiceConfig cfg)
    : impl_(std::make_unique<Impl>()) {
  if (!bundle) throw Error(ErrorCode::InvalidArgument, "service needs a bundle");
  impl_->bundle = std::move(bundle);
  impl_->cfg = std::move(cfg);
  if (impl_->cfg.trace_path) {
    impl_->trace.open(*impl_->cfg.trace_path, std::ios::app);
    if (!impl_->trace) throw Error(ErrorCode::Io, "cannot open trace file " + impl_->cfg.trace_path->string());
  }
  Impl* impl = impl_.get();
  impl->server.Post("/v1/embeddings", [impl](const httplib::Request& req, httplib::Response& res) {
    try {
      impl->handle_embeddings(req, res);
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  });
  impl->server.Get("/healthz", [impl](const httplib::Request&, httplib::Response& res) {
    res.set_content(json{{"status", "ok"}, {"dim", impl->bundle->dim()}}.dump(), "application/json");
  });
}

EmbeddingService::~EmbeddingService() { stop(); }

int EmbeddingService::bind() {
  if (impl_->port >= 0) return impl_->port;
  if (impl_->cfg.port == 0) {
    impl_->port = impl_->server.bind_to_any_port(impl_->cfg.host);
  } else {
    impl_->port = impl_->server.bind_to_port(impl_->cfg.host, impl_->cfg.port) ? impl_->cfg.port : -1;
  }
  if (impl_->port < 0) {
    throw Error(ErrorCode::Io, "cannot bind " + impl_->cfg.host + ":" + std::to_string(impl_->cfg.port));
  }
  return impl_->port;
}

void EmbeddingService::listen() {
  bind();
  impl_->server.listen_after_bind();
}

int EmbeddingService::start() {
  const int port = bind();
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void EmbeddingService::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace semmark

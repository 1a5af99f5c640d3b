#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "semmark/provider.hpp"

namespace semmark {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  bool stealth = true;  // when false, responses carry "watermark":"semmark"
  std::string service_key;  // empty = no client authentication
  std::optional<std::filesystem::path> trace_path;
  std::chrono::seconds retry_after{5};
};

/// Parses "host:port" (or ":port" / "port").
void parse_bind_address(const std::string& addr, ServiceConfig& cfg);

/// EaaS-style proxy: POST /v1/embeddings {"input":[...]} returns watermarked
/// embeddings; GET /healthz. Requests share the immutable bundle.
class EmbeddingService {
 public:
  EmbeddingService(std::shared_ptr<const ProviderBundle> bundle, ServiceConfig cfg);
  ~EmbeddingService();

  EmbeddingService(const EmbeddingService&) = delete;
  EmbeddingService& operator=(const EmbeddingService&) = delete;

  /// Binds the listening socket and returns the bound port.
  int bind();
  /// Serves until stop(); bind() is called first if needed.
  void listen();
  /// bind() + listen() on a background thread; returns the bound port.
  int start();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace semmark

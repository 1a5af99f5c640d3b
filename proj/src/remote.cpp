// Eigen-using headers must precede httplib.h: <resolv.h> defines a `_res` macro.
#include "semmark/encoding.hpp"
#include "semmark/error.hpp"

#include <algorithm>
#include <future>
#include <httplib.h>
#include <json.hpp>
#include <thread>

namespace semmark {

namespace {

using json = nlohmann::json;

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

ParsedUrl parse_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::InvalidArgument, "endpoint must be an http:// URL: " + url);
  std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http") throw Error(ErrorCode::InvalidArgument, "only http endpoints are supported (terminate TLS upstream): " + url);
  auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl out;
  out.origin = url.substr(0, path_start);
  out.path = path_start == std::string::npos ? "/" : url.substr(path_start);
  return out;
}

std::vector<Embedding> parse_response(const std::string& body, std::size_t expected, std::size_t dim) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedResponse, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("data") || !j["data"].is_array()) {
    throw Error(ErrorCode::MalformedResponse, "missing \"data\" array");
  }
  const auto& data = j["data"];
  if (data.size() != expected) {
    throw Error(ErrorCode::MalformedResponse, "expected " + std::to_string(expected) + " embeddings, got " + std::to_string(data.size()));
  }
  std::vector<Embedding> out(expected);
  std::vector<bool> seen(expected, false);
  for (const auto& item : data) {
    try {
      auto idx = item.at("index").get<std::int64_t>();
      if (idx < 0 || static_cast<std::size_t>(idx) >= expected || seen[static_cast<std::size_t>(idx)]) {
        throw Error(ErrorCode::MalformedResponse, "bad or duplicate index " + std::to_string(idx));
      }
      auto vec = item.at("embedding").get<std::vector<float>>();
      if (vec.empty() || (dim != 0 && vec.size() != dim)) {
        throw Error(ErrorCode::MalformedResponse, "embedding dimension mismatch at index " + std::to_string(idx));
      }
      seen[static_cast<std::size_t>(idx)] = true;
      out[static_cast<std::size_t>(idx)] = std::move(vec);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedResponse, e.what());
    }
  }
  const std::size_t d = out.front().size();
  for (const auto& v : out)
    if (v.size() != d) throw Error(ErrorCode::MalformedResponse, "inconsistent embedding dimensions");
  return out;
}

std::vector<Embedding> post_batch(const RemoteEncoderConfig& cfg, const ParsedUrl& url, std::span<const std::string> texts) {
  json body;
  body["input"] = json::array();
  for (const auto& t : texts) body["input"].push_back(t);
  if (!cfg.model.empty()) body["model"] = cfg.model;
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (!cfg.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg.api_key);

  std::string last_error = "no attempt made";
  const int attempts = std::max(1, cfg.attempts);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(cfg.backoff * (1 << (attempt - 1)));
    httplib::Client client(url.origin);
    client.set_connection_timeout(cfg.timeout);
    client.set_read_timeout(cfg.timeout);
    client.set_write_timeout(cfg.timeout);
    auto res = client.Post(url.path, headers, payload, "application/json");
    if (!res) {
      last_error = "request failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 401 || res->status == 403) {
      throw Error(ErrorCode::AuthFailed, "endpoint returned HTTP " + std::to_string(res->status));
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "endpoint returned HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw Error(ErrorCode::Network, "endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    return parse_response(res->body, texts.size(), cfg.dim);
  }
  throw Error(ErrorCode::Network, last_error + " (after " + std::to_string(attempts) + " attempts)");
}

}  // namespace

Corpus remote_encode(const RemoteEncoderConfig& cfg, std::span<const std::string> texts) {
  Corpus corpus;
  if (texts.empty()) return corpus;
  const ParsedUrl url = parse_url(cfg.endpoint);
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch);
  const std::size_t in_flight = std::max<std::size_t>(1, cfg.max_in_flight);

  std::vector<std::span<const std::string>> batches;
  for (std::size_t start = 0; start < texts.size(); start += batch) {
    batches.push_back(texts.subspan(start, std::min(batch, texts.size() - start)));
  }

  std::vector<std::vector<Embedding>> results(batches.size());
  for (std::size_t wave = 0; wave < batches.size(); wave += in_flight) {
    std::vector<std::future<std::vector<Embedding>>> pending;
    const std::size_t end = std::min(batches.size(), wave + in_flight);
    for (std::size_t b = wave; b < end; ++b) {
      pending.push_back(std::async(std::launch::async, post_batch, std::cref(cfg), std::cref(url), batches[b]));
    }
    for (std::size_t b = wave; b < end; ++b) results[b] = pending[b - wave].get();
  }

  corpus.reserve(texts.size());
  std::size_t i = 0;
  for (auto& r : results) {
    for (auto& v : r) {
      corpus.append({std::to_string(i), texts[i], std::move(v)});
      ++i;
    }
  }
  return corpus;
}

std::vector<Embedding> RemoteEncoder::encode(std::span<const std::string> texts) const {
  Corpus c = remote_encode(cfg_, texts);
  return c.vectors();
}

}  // namespace semmark

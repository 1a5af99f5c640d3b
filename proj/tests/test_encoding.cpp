#include <doctest.h>

#include <Eigen/Dense>  // before httplib.h: resolv.h defines _res
#include <httplib.h>

#include <atomic>
#include <cstring>
#include <functional>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <thread>

#include "semmark/encoding.hpp"
#include "semmark/error.hpp"
#include "semmark/rng.hpp"
#include "semmark/textgen.hpp"

using namespace semmark;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "semmark_test_encoding";
  fs::create_directories(dir);
  return dir / name;
}

// Local embeddings server for client tests.
struct MockServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> hits{0};

  explicit MockServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server.Post("/v1/embeddings", [this, handler](const httplib::Request& req, httplib::Response& res) {
      ++hits;
      handler(req, res);
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~MockServer() {
    server.stop();
    thread.join();
  }
  RemoteEncoderConfig config() const {
    RemoteEncoderConfig cfg;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/embeddings";
    cfg.backoff = std::chrono::milliseconds(1);
    return cfg;
  }
};

// Response captured from a local server for two inputs.
constexpr const char* kTwoVectorFixture =
    R"({"object":"list","data":[{"object":"embedding","index":0,"embedding":[0.6,0.8,0.0]},)"
    R"({"object":"embedding","index":1,"embedding":[0.0,0.0,1.0]}],"model":"mock"})";

}  // namespace

TEST_CASE("synthetic encoder: determinism and unit norm") {
  SyntheticEncoderConfig cfg;
  cfg.seed = 3;
  const SyntheticEncoder enc(cfg);
  CHECK(enc.encode_text("the cat sat") == enc.encode_text("the cat sat"));
  CHECK(synthetic_encode(cfg, "the cat sat") == enc.encode_text("the cat sat"));
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    std::string s = "w" + std::to_string(rng.below(100000)) + " x" + std::to_string(i);
    CHECK(std::abs(norm(enc.encode_text(s)) - 1.0) <= 1e-5);
  }
  CHECK_THROWS_AS(enc.encode_text("  ...  "), Error);
}

TEST_CASE("synthetic encoder: same-topic pairs are closer than cross-topic pairs") {
  SyntheticEncoderConfig cfg;
  const SyntheticEncoder enc(cfg);
  const auto texts = generate_sentences(500, 11);
  const auto vecs = enc.encode(texts);
  double same = 0, cross = 0;
  std::size_t ns = 0, nc = 0;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    for (std::size_t j = i + 1; j < texts.size(); ++j) {
      const double c = cosine(vecs[i], vecs[j]);
      if (enc.topic_of(texts[i]) == enc.topic_of(texts[j])) {
        same += c;
        ++ns;
      } else {
        cross += c;
        ++nc;
      }
    }
  }
  REQUIRE(ns > 0);
  CHECK(same / ns > cross / nc);
}

TEST_CASE("topic depends on the token multiset only") {
  CHECK(token_multiset_hash("a b c") == token_multiset_hash("C b A"));
  CHECK(token_multiset_hash("a a b") != token_multiset_hash("a b b"));
}

TEST_CASE("jsonl round trip, dim errors and empty files") {
  Corpus c;
  c.append({"a", std::string("first text"), {0.25f, -0.5f, 1.0f / 3.0f}});
  c.append({"b", std::nullopt, {1.0f, 0.0f, 0.0f}});
  const fs::path p = temp_path("rt.jsonl");
  save_jsonl(c, p);
  const Corpus back = load_jsonl(p);
  REQUIRE(back.size() == 2);
  CHECK(back[0].id == "a");
  CHECK(back[0].text == std::optional<std::string>("first text"));
  CHECK(!back[1].text);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(back[i].vec[k] - c[i].vec[k]) <= 1e-9);

  const fs::path bad = temp_path("bad.jsonl");
  {
    std::ofstream out(bad);
    out << R"({"id":"x","vec":[1,0]})" << '\n' << R"({"id":"y","vec":[1,0,0]})" << '\n';
  }
  try {
    load_jsonl(bad);
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimensionMismatch);
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }

  const fs::path empty = temp_path("empty.jsonl");
  { std::ofstream out(empty); }
  const Corpus none = load_jsonl(empty);
  CHECK(none.empty());
  CHECK(none.dim() == 0);
}

TEST_CASE("binary round trip, bad magic, truncation") {
  Rng rng(5);
  Corpus c;
  for (int i = 0; i < 10; ++i) {
    Embedding v(7);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    c.append({"id" + std::to_string(i), std::nullopt, v});
  }
  const fs::path p = temp_path("rt.bin");
  save_binary(c, p);
  const Corpus back = load_binary(p);
  REQUIRE(back.size() == 10);
  for (int i = 0; i < 10; ++i) {
    CHECK(back[i].id == c[i].id);
    CHECK(std::memcmp(back[i].vec.data(), c[i].vec.data(), 7 * sizeof(float)) == 0);
  }

  const fs::path magic = temp_path("magic.bin");
  {
    std::ofstream out(magic, std::ios::binary);
    out << "XXXX and then some bytes";
  }
  try {
    load_binary(magic);
    FAIL("expected BadMagic");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BadMagic);
  }

  const auto full = fs::file_size(p);
  const fs::path cut = temp_path("cut.bin");
  fs::copy_file(p, cut, fs::copy_options::overwrite_existing);
  fs::resize_file(cut, full - 20);
  try {
    load_binary(cut);
    FAIL("expected TruncatedFile");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TruncatedFile);
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
}

TEST_CASE("remote client: empty input sends nothing") {
  MockServer mock([](const httplib::Request&, httplib::Response& res) { res.set_content(kTwoVectorFixture, "application/json"); });
  const Corpus out = remote_encode(mock.config(), {});
  CHECK(out.empty());
  CHECK(mock.hits == 0);
}

TEST_CASE("remote client: fixture of two vectors") {
  MockServer mock([](const httplib::Request& req, httplib::Response& res) {
    CHECK(json::parse(req.body).at("input").size() == 2);
    res.set_content(kTwoVectorFixture, "application/json");
  });
  const std::vector<std::string> texts{"one", "two"};
  const Corpus out = remote_encode(mock.config(), texts);
  REQUIRE(out.size() == 2);
  CHECK(out.dim() == 3);
  CHECK(out[0].vec[1] == doctest::Approx(0.8));
  CHECK(out[1].text == std::optional<std::string>("two"));
}

TEST_CASE("remote client: permuted indices are restored to input order, batches split") {
  MockServer mock([](const httplib::Request& req, httplib::Response& res) {
    const auto input = json::parse(req.body).at("input");
    json data = json::array();
    for (std::size_t i = input.size(); i-- > 0;) {
      const double marker = std::stod(input[i].get<std::string>());
      data.push_back({{"index", i}, {"embedding", {marker, 1.0}}});
    }
    res.set_content(json{{"data", data}}.dump(), "application/json");
  });
  RemoteEncoderConfig cfg = mock.config();
  cfg.batch = 3;
  std::vector<std::string> texts;
  for (int i = 0; i < 10; ++i) texts.push_back(std::to_string(i));
  const Corpus out = remote_encode(cfg, texts);
  REQUIRE(out.size() == 10);
  for (int i = 0; i < 10; ++i) CHECK(out[i].vec[0] == doctest::Approx(i));
  CHECK(mock.hits == 4);
}

TEST_CASE("remote client: auth failure, retries and malformed bodies") {
  {
    MockServer mock([](const httplib::Request& req, httplib::Response& res) {
      CHECK(req.get_header_value("Authorization") == "Bearer secret");
      res.status = 401;
    });
    RemoteEncoderConfig cfg = mock.config();
    cfg.api_key = "secret";
    try {
      remote_encode(cfg, std::vector<std::string>{"a"});
      FAIL("expected AuthFailed");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::AuthFailed);
    }
    CHECK(mock.hits == 1);
  }
  {
    MockServer mock([](const httplib::Request&, httplib::Response& res) { res.status = 500; });
    try {
      remote_encode(mock.config(), std::vector<std::string>{"a"});
      FAIL("expected Network");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Network);
    }
    CHECK(mock.hits == 3);
  }
  {
    MockServer mock([](const httplib::Request&, httplib::Response& res) { res.set_content(R"({"data":[]})", "application/json"); });
    try {
      remote_encode(mock.config(), std::vector<std::string>{"a"});
      FAIL("expected MalformedResponse");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::MalformedResponse);
    }
  }
}

TEST_CASE("enforce_unit_norm renormalizes off-norm records") {
  Corpus c;
  c.append({"a", std::nullopt, {3, 4}});
  c.append({"b", std::nullopt, {1, 0}});
  CHECK(enforce_unit_norm(c) == 1);
  CHECK(c[0].vec[0] == doctest::Approx(0.6));
}

TEST_CASE("api key resolution") {
  CHECK(resolve_api_key("flag") == "flag");
  setenv("SEMMARK_API_KEY", "env", 1);
  CHECK(resolve_api_key("") == "env");
  unsetenv("SEMMARK_API_KEY");
}

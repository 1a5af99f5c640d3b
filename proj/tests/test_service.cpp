#include <doctest.h>

#include "fixtures.hpp"
#include "semmark/service.hpp"

#include <httplib.h>  // after semmark headers: resolv.h defines _res

#include <future>
#include <thread>

using namespace semmark;
using namespace semmark::testing;
using json = nlohmann::json;

namespace {

httplib::Result post(int port, const json& body, const std::string& key = {}) {
  httplib::Client cli("127.0.0.1", port);
  httplib::Headers h;
  if (!key.empty()) h.emplace("Authorization", "Bearer " + key);
  return cli.Post("/v1/embeddings", h, body.dump(), "application/json");
}

}  // namespace

TEST_CASE("service: embeddings, stealth and input forms") {
  auto bundle = std::make_shared<const ProviderBundle>(small_bundle());
  ServiceConfig cfg;
  cfg.port = 0;
  EmbeddingService svc(bundle, cfg);
  const int port = svc.start();

  const std::vector<std::string> texts{"the quick fox jumps", "a slow turtle walks", "rain falls on the hill"};
  auto res = post(port, {{"input", texts}});
  REQUIRE(res);
  CHECK(res->status == 200);
  const json j = json::parse(res->body);
  REQUIRE(j["data"].size() == 3);
  CHECK(!j.contains("watermark"));
  const auto want = batch_process(*bundle, texts);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(j["data"][i]["index"] == i);
    const auto got = j["data"][i]["embedding"].get<std::vector<float>>();
    CHECK(got == want.corpus[i].vec);
  }

  auto one = post(port, {{"input", "the quick fox jumps"}});
  REQUIRE(one);
  CHECK(json::parse(one->body)["data"].size() == 1);

  auto none = post(port, {{"input", json::array()}});
  REQUIRE(none);
  CHECK(json::parse(none->body)["data"] == json::array());

  auto f1 = std::async(std::launch::async, [&] { return post(port, {{"input", texts}})->body; });
  auto f2 = std::async(std::launch::async, [&] { return post(port, {{"input", texts}})->body; });
  CHECK(json::parse(f1.get())["data"] == json::parse(f2.get())["data"]);

  httplib::Client cli("127.0.0.1", port);
  auto bad = cli.Post("/v1/embeddings", "{not json", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  auto wrong = post(port, {{"input", 5}});
  REQUIRE(wrong);
  CHECK(wrong->status == 400);
  auto empty_text = post(port, {{"input", {"..."}}});
  REQUIRE(empty_text);
  CHECK(empty_text->status == 400);

  auto health = cli.Get("/healthz");
  REQUIRE(health);
  CHECK(health->status == 200);
  svc.stop();
}

TEST_CASE("service: marker without stealth, client key") {
  auto bundle = std::make_shared<const ProviderBundle>(small_bundle());
  ServiceConfig cfg;
  cfg.port = 0;
  cfg.stealth = false;
  cfg.service_key = "k1";
  EmbeddingService svc(bundle, cfg);
  const int port = svc.start();
  auto denied = post(port, {{"input", {"a b c"}}});
  REQUIRE(denied);
  CHECK(denied->status == 401);
  auto ok = post(port, {{"input", {"a b c"}}}, "k1");
  REQUIRE(ok);
  CHECK(ok->status == 200);
  CHECK(json::parse(ok->body)["watermark"] == "semmark");
  svc.stop();
}

TEST_CASE("service: upstream failure maps to 502 with Retry-After") {
  httplib::Server upstream;
  upstream.Post("/v1/embeddings", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  const int up_port = upstream.bind_to_any_port("127.0.0.1");
  std::thread t([&] { upstream.listen_after_bind(); });
  upstream.wait_until_ready();

  ProviderBundle b = small_bundle();
  RemoteEncoderConfig rc;
  rc.endpoint = "http://127.0.0.1:" + std::to_string(up_port) + "/v1/embeddings";
  rc.attempts = 1;
  b.encoder = std::make_shared<RemoteEncoder>(rc);
  ServiceConfig cfg;
  cfg.port = 0;
  EmbeddingService svc(std::make_shared<const ProviderBundle>(std::move(b)), cfg);
  const int port = svc.start();
  auto res = post(port, {{"input", {"a b c"}}});
  REQUIRE(res);
  CHECK(res->status == 502);
  CHECK(res->get_header_value("Retry-After") == "5");
  svc.stop();
  upstream.stop();
  t.join();
}

TEST_CASE("bind address parsing") {
  ServiceConfig cfg;
  parse_bind_address("0.0.0.0:9000", cfg);
  CHECK(cfg.host == "0.0.0.0");
  CHECK(cfg.port == 9000);
  parse_bind_address(":7000", cfg);
  CHECK(cfg.port == 7000);
  parse_bind_address("7100", cfg);
  CHECK(cfg.port == 7100);
  CHECK_THROWS(parse_bind_address("host:notaport", cfg));
}

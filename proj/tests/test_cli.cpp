#include <doctest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <thread>

#include "semmark/encoding.hpp"

#include <httplib.h>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path& work() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "semmark_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

struct Run {
  int code;
  std::string out;
};

Run run(const std::string& args) {
  const std::string log = (work() / "last.log").string();
  const std::string cmd = std::string(SEMMARK_CLI) + " --workdir " + work().string() + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  return {WEXITSTATUS(status), {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void split_lines(const std::string& from, const std::string& to, int first, int count) {
  std::ifstream in(work() / from);
  std::ofstream out(work() / to);
  std::string line;
  for (int i = 0; std::getline(in, line); ++i)
    if (i >= first && i < first + count) out << line << '\n';
}

// texts -> surrogate/mapper/attacker/pool splits and a trained bundle "b"
void prepare() {
  static bool done = false;
  if (done) return;
  REQUIRE(run("gen-texts --n 6000 --out texts.txt").code == 0);
  split_lines("texts.txt", "sur.txt", 0, 1000);
  split_lines("texts.txt", "map.txt", 1000, 1000);
  split_lines("texts.txt", "att.txt", 2000, 2000);
  split_lines("texts.txt", "pool.txt", 4000, 2000);
  REQUIRE(run("encode --in sur.txt --out sur.bin").code == 0);
  REQUIRE(run("encode --in map.txt --out map.jsonl").code == 0);
  REQUIRE(run("encode --in att.txt --out att.jsonl").code == 0);
  REQUIRE(run("--seed 3 partition-fit --surrogate sur.bin --out b").code == 0);
  REQUIRE(run("--seed 3 train-mapper --corpus map.jsonl --bundle b --epochs 30").code == 0);
  done = true;
}

}  // namespace

TEST_CASE("partition-fit: regions, determinism, missing input") {
  prepare();
  const Run r = run("--seed 3 partition-fit --surrogate sur.bin --out b2");
  CHECK(r.code == 0);
  CHECK(r.out.find("64 regions, 32 watermarked") != std::string::npos);
  const Run again = run("--seed 3 partition-fit --surrogate sur.bin --out b3");
  CHECK(again.code == 0);
  for (const char* f : {"partition.json", "weights.json", "lof.bin", "config.json"}) CHECK(slurp(work() / "b2" / f) == slurp(work() / "b3" / f));
  CHECK(run("partition-fit --surrogate missing.bin --out bx").code == 2);
  CHECK(run("partition-fit --surrogate sur.bin --out bx --alpha 0").code == 2);
  CHECK(run("partition-fit --out bx").code == 2);
}

TEST_CASE("train-mapper: epochs=0, loss csv, reproducible weights") {
  prepare();
  REQUIRE(run("--seed 3 partition-fit --surrogate sur.bin --out t1").code == 0);
  REQUIRE(run("--seed 3 partition-fit --surrogate sur.bin --out t2").code == 0);
  CHECK(run("--seed 3 train-mapper --corpus map.jsonl --bundle t1 --epochs 0").code == 0);
  CHECK(fs::exists(work() / "t1" / "mapper.json"));
  REQUIRE(run("--seed 3 train-mapper --corpus map.jsonl --bundle t1 --epochs 3").code == 0);
  REQUIRE(run("--seed 3 train-mapper --corpus map.jsonl --bundle t2 --epochs 3").code == 0);
  CHECK(slurp(work() / "t1" / "mapper.json") == slurp(work() / "t2" / "mapper.json"));
  std::ifstream csv(work() / "t1" / "loss.csv");
  std::string line;
  int rows = -1;  // header
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 3);
  CHECK(run("train-mapper --corpus map.jsonl --bundle t1 --eta 1.5").code == 2);
  CHECK(run("train-mapper --corpus map.jsonl --bundle t1 --lr 1e30 --epochs 5").code == 3);
}

TEST_CASE("inject: empty input and counts") {
  prepare();
  { std::ofstream(work() / "empty.jsonl"); }
  CHECK(run("inject --bundle b --in empty.jsonl --out empty_out.jsonl").code == 0);
  CHECK(slurp(work() / "empty_out.jsonl").empty());
  CHECK(run("inject --bundle b --in att.jsonl --out wm.jsonl").code == 0);
  CHECK(semmark::load_jsonl(work() / "wm.jsonl").size() == 2000);
  CHECK(fs::exists(work() / "traces.jsonl"));
}

TEST_CASE("verify and attacks: verdict flips between clean and watermarked imitators") {
  prepare();
  REQUIRE(run("inject --bundle b --in att.jsonl --out wm.jsonl").code == 0);
  REQUIRE(run("attack imitate --in wm.jsonl --out imi_wm.json --surrogate-encoder-seed 17").code == 0);
  REQUIRE(run("attack imitate --in att.jsonl --out imi_clean.json --surrogate-encoder-seed 17").code == 0);

  const Run wm = run("verify --bundle b --pool pool.txt --m 200 --suspect imitator:imi_wm.json --report wm_report.json");
  CHECK(wm.code == 0);
  CHECK(wm.out.find("watermarked") != std::string::npos);
  const json rep = json::parse(slurp(work() / "wm_report.json"));
  for (const char* k : {"p_value", "delta_cos", "delta_l2", "n_w", "n_n"}) CHECK(rep.contains(k));
  CHECK(rep["verdict"] == "watermarked");

  const Run clean = run("verify --bundle b --pool pool.txt --m 200 --suspect imitator:imi_clean.json --report clean_report.json");
  CHECK(clean.code == 0);
  CHECK(json::parse(slurp(work() / "clean_report.json"))["verdict"] != "watermarked");

  CHECK(run("attack dim --in wm.jsonl --out dim.jsonl --d-prime 64").code == 2);
  CHECK(run("attack dim --in wm.jsonl --out dim.jsonl --d-prime 48").code == 0);
  CHECK(run("attack cse --in wm.jsonl --out cse.jsonl --surrogate-encoder-seed 17").code == 0);
  CHECK(semmark::load_jsonl(work() / "cse.jsonl").size() == 2000);
  CHECK(run("attack detect --texts map.txt --out det.json").code == 0);
  CHECK(run("verify --bundle b --pool pool.txt --m 200 --suspect bundle:b --detector det.json").code == 0);
  CHECK(run("verify --bundle b --pool pool.txt --m 200 --suspect nonsense").code == 2);
  CHECK(run("verify --bundle b --pool pool.txt --m 5000").code == 2);
}

TEST_CASE("serve: three texts in, three embeddings out, stealth by default") {
  prepare();
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  const std::string pidfile = (work() / "serve.pid").string();
  const std::string cmd = std::string(SEMMARK_CLI) + " --workdir " + work().string() + " serve --bundle b --bind 127.0.0.1:" +
                          std::to_string(port) + " > " + (work() / "serve.log").string() + " 2>&1 & echo $! > " + pidfile;
  REQUIRE(std::system(cmd.c_str()) == 0);
  // poll with the real request until the freshly spawned server answers
  const std::string body = json{{"input", {"one more text", "the red hill", "rain falls"}}}.dump();
  httplib::Result res;
  for (int i = 0; i < 100; ++i) {
    httplib::Client cli("127.0.0.1", port);
    res = cli.Post("/v1/embeddings", body, "application/json");
    if (res && res->status == 200) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  INFO("http error " << httplib::to_string(res.error()));
  CHECK(res);
  if (res) {
    CHECK(res->status == 200);
    const json j = json::parse(res->body);
    CHECK(j["data"].size() == 3);
    CHECK(!j.contains("watermark"));
  }
  [[maybe_unused]] int rc = std::system(("kill $(cat " + pidfile + ")").c_str());
}

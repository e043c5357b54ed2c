#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "doctest.h"
#include "flowcrypt/dataset.hpp"
#include "flowcrypt/linalg.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace flowcrypt;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
  json report() const { return json::parse(out); }
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "flowcrypt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() / "flowcrypt_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  std::string operator()(const std::string& name) const { return (dir / name).string(); }
};

const Scratch& scratch() {
  static Scratch s;
  return s;
}

std::string mixture_data() {
  static const std::string path = [] {
    const auto p = scratch()("mix.ftns");
    REQUIRE(run({"--seed", "3", "gen-data", "--kind", "mixture", "--n", "1000", "--out", p}).code == 0);
    return p;
  }();
  return path;
}

std::string small_config() {
  const auto p = scratch()("cfg.json");
  std::ofstream(p) << R"({"steps": 200, "batch_size": 128, "learning_rate": 0.005,
                          "architecture": {"blocks": 3, "hidden": 16}})";
  return p;
}

std::string trained_model() {
  static const std::string path = [] {
    const auto p = scratch()("mix.fmod");
    REQUIRE(run({"--seed", "1", "train", "--data", mixture_data(), "--config", small_config(), "--out-model", p}).code == 0);
    return p;
  }();
  return path;
}

}  // namespace

TEST_CASE("keygen") {
  const auto a = scratch()("a.fkey"), b = scratch()("b.fkey");
  const auto r = run({"--seed", "11", "keygen", "--dim", "4", "--out", a});
  CHECK(r.code == 0);
  CHECK(r.report()["schema_version"] == 1);
  CHECK(run({"--seed", "11", "keygen", "--dim", "4", "--out", b}).code == 0);
  CHECK(bytes_of(a) == bytes_of(b));
  CHECK(linalg::orthogonality_error(linalg::load_key(a).matrix) < 1e-12);

  const auto zero = run({"keygen", "--dim", "0", "--out", scratch()("z.fkey")});
  CHECK(zero.code == 3);
  CHECK_FALSE(zero.err.empty());
  CHECK(run({"keygen", "--dim", "2", "--out", "/nonexistent-dir/k.fkey"}).code == 2);
  CHECK(run({"keygen", "--out", scratch()("x.fkey")}).code == 3);  // missing --dim
}

TEST_CASE("seed comes from the environment when the flag is absent") {
  const auto a = scratch()("env.fkey"), b = scratch()("flag.fkey");
  ::setenv("FLOWCRYPT_SEED", "21", 1);
  CHECK(run({"keygen", "--dim", "3", "--out", a}).code == 0);
  ::unsetenv("FLOWCRYPT_SEED");
  CHECK(run({"--seed", "21", "keygen", "--dim", "3", "--out", b}).code == 0);
  CHECK(bytes_of(a) == bytes_of(b));
}

TEST_CASE("train: deterministic, logs, and error codes") {
  const auto model = trained_model();
  const auto again = scratch()("mix2.fmod");
  const auto r = run({"--seed", "1", "train", "--data", mixture_data(), "--config", small_config(), "--out-model", again});
  REQUIRE(r.code == 0);
  CHECK(bytes_of(model) == bytes_of(again));
  const auto rep = r.report();
  CHECK(rep["final_nll"].get<double>() < rep["initial_nll"].get<double>());

  std::ifstream log(again + ".log.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    const auto rec = json::parse(line);
    CHECK(rec.contains("nll"));
    ++lines;
  }
  CHECK(lines == 200);

  CHECK(run({"train", "--data", scratch()("missing.ftns"), "--out-model", scratch()("m.fmod")}).code == 2);

  data::LabeledData flat;
  flat.samples = Eigen::MatrixXd::Ones(300, 2);
  flat.samples.col(0).setLinSpaced(300, -1, 1);
  data::save_tensor(flat, scratch()("flat.ftns"));
  CHECK(run({"train", "--data", scratch()("flat.ftns"), "--out-model", scratch()("m.fmod")}).code == 4);
}

TEST_CASE("encrypt / decrypt through files") {
  const auto key = scratch()("k2.fkey");
  REQUIRE(run({"--seed", "5", "keygen", "--dim", "2", "--out", key}).code == 0);
  const auto enc = scratch()("enc.ftns"), dec = scratch()("dec.csv");
  REQUIRE(run({"encrypt", "--model", trained_model(), "--key", key, "--data", mixture_data(), "--out", enc}).code == 0);
  REQUIRE(run({"--csv-labels", "decrypt", "--model", trained_model(), "--key", key, "--data", enc, "--out", dec}).code == 0);
  const auto original = data::load_tensor(mixture_data());
  const auto back = data::read_csv(dec, true);
  CHECK((back.samples - original.samples).cwiseAbs().maxCoeff() < 1e-5);
  CHECK(*back.labels == *original.labels);

  // Identity key leaves the data unchanged.
  const auto ident = scratch()("id.fkey");
  linalg::save_key(linalg::identity_key(2), ident);
  const auto same = scratch()("same.ftns");
  REQUIRE(run({"encrypt", "--model", trained_model(), "--key", ident, "--data", mixture_data(), "--out", same}).code == 0);
  CHECK((data::load_tensor(same).samples - original.samples).cwiseAbs().maxCoeff() < 1e-6);

  // Shape mismatch and corruption.
  const auto k3 = scratch()("k3.fkey");
  REQUIRE(run({"keygen", "--dim", "3", "--out", k3}).code == 0);
  CHECK(run({"encrypt", "--model", trained_model(), "--key", k3, "--data", mixture_data(), "--out", enc}).code == 5);
  auto bytes = bytes_of(key);
  bytes[20] = static_cast<char>(bytes[20] ^ 0x04);
  std::ofstream(scratch()("bad.fkey"), std::ios::binary) << bytes;
  CHECK(run({"encrypt", "--model", trained_model(), "--key", scratch()("bad.fkey"), "--data", mixture_data(), "--out", enc}).code == 6);
}

TEST_CASE("class-map manifest") {
  const auto dir = scratch().dir;
  for (int c = 0; c < 4; ++c)
    REQUIRE(run({"--seed", std::to_string(100 + c), "keygen", "--dim", "2", "--out", (dir / ("c" + std::to_string(c) + ".fkey")).string()}).code == 0);
  fs::copy_file(trained_model(), dir / "shared.fmod", fs::copy_options::overwrite_existing);
  json manifest;
  for (int c = 0; c < 4; ++c) manifest[std::to_string(c)] = {{"model", "shared.fmod"}, {"key", "c" + std::to_string(c) + ".fkey"}};
  std::ofstream(dir / "map.json") << manifest.dump();
  const auto enc = scratch()("cm_enc.ftns"), dec = scratch()("cm_dec.ftns");
  REQUIRE(run({"encrypt", "--class-map", (dir / "map.json").string(), "--data", mixture_data(), "--out", enc}).code == 0);
  REQUIRE(run({"decrypt", "--class-map", (dir / "map.json").string(), "--data", enc, "--out", dec}).code == 0);
  CHECK((data::load_tensor(dec).samples - data::load_tensor(mixture_data()).samples).cwiseAbs().maxCoeff() < 1e-5);

  manifest.erase("2");
  std::ofstream(dir / "partial.json") << manifest.dump();
  const auto r = run({"encrypt", "--class-map", (dir / "partial.json").string(), "--data", mixture_data(), "--out", enc});
  CHECK(r.code == 5);
  CHECK(r.err.find("label 2") != std::string::npos);
}

TEST_CASE("eval-bpd") {
  const auto untrained = scratch()("untrained.fmod");
  REQUIRE(run({"--seed", "1", "train", "--untrained", "--data", mixture_data(), "--config", small_config(), "--out-model", untrained}).code == 0);
  const auto t = run({"eval-bpd", "--model", trained_model(), "--data", mixture_data(), "--continuous"});
  const auto u = run({"eval-bpd", "--model", untrained, "--data", mixture_data(), "--continuous"});
  REQUIRE(t.code == 0);
  REQUIRE(u.code == 0);
  CHECK(t.report()["bpd"].get<double>() < u.report()["bpd"].get<double>());
  CHECK(run({"eval-bpd", "--model", trained_model(), "--data", mixture_data(), "--continuous"}).out == t.out);
  CHECK(run({"eval-bpd", "--model", trained_model(), "--data", mixture_data(), "--alpha", "0.5"}).code == 3);
  CHECK(run({"eval-bpd", "--model", trained_model(), "--data", mixture_data()}).code == 3);  // not integer data
}

TEST_CASE("estimate-tv") {
  const auto p = scratch()("p.ftns"), q = scratch()("q.ftns");
  REQUIRE(run({"--seed", "1", "gen-data", "--kind", "moons", "--n", "3000", "--out", p}).code == 0);
  REQUIRE(run({"--seed", "2", "gen-data", "--kind", "moons", "--n", "3000", "--out", q}).code == 0);
  const auto r = run({"--seed", "4", "estimate-tv", "--p", p, "--q", q, "--bootstrap", "30"});
  REQUIRE(r.code == 0);
  const auto rep = r.report();
  CHECK(rep["tv"]["method"] == "histogram");
  CHECK(rep["tv"]["value"].get<double>() <= rep["tv"]["ci"].get<double>() + 0.02);
  CHECK(run({"--seed", "4", "estimate-tv", "--p", p, "--q", q, "--bootstrap", "30"}).out == r.out);
}

TEST_CASE("audit") {
  const auto r = run({"--seed", "2", "audit", "--source", "exact-gaussian", "--theta", "0.25", "--n", "10", "--trials", "400"});
  REQUIRE(r.code == 0);
  const auto rep = r.report();
  CHECK(rep["holds"] == true);
  CHECK(std::abs(rep["p_hat"].get<double>() - 0.25) < 3 * std::sqrt(0.25 * 0.75 / 400));
  for (const char* field : {"theta", "n", "trials", "tv", "p_hat", "bound", "holds", "seed", "schema_version"})
    CHECK(rep.contains(field));

  const auto one = run({"audit", "--theta", "1", "--trials", "200"}).report();
  CHECK(one["p_hat"] == 1.0);
  CHECK(one["bound"] == 1.0);
  CHECK(run({"audit", "--trials", "10"}).code == 3);

  const auto threaded = run({"--seed", "2", "--threads", "3", "audit", "--theta", "0.25", "--n", "10", "--trials", "400"});
  CHECK(threaded.out == r.out);
}

TEST_CASE("attack-dlg") {
  const auto data = scratch()("tc.ftns");
  REQUIRE(run({"--seed", "2", "gen-data", "--kind", "two-class", "--dim", "8", "--n", "50", "--out", data}).code == 0);
  std::ofstream(scratch()("lin.json")) << R"({"type": "linear", "optimizer": "lbfgs", "iterations": 200, "restarts": 4, "seed": 2})";
  const auto lin = run({"attack-dlg", "--victim-config", scratch()("lin.json"), "--data", data, "--row", "3"});
  REQUIRE(lin.code == 0);
  CHECK(lin.report()["mse_vs_target"].get<double>() < 1e-12);  // max error well under 1e-6

  std::ofstream(scratch()("mlp.json")) << R"({"type": "mlp", "hidden": 16, "classes": 4, "seed": 2, "label": 1})";
  const auto key = scratch()("k8.fkey"), model = scratch()("u8.fmod");
  REQUIRE(run({"--seed", "5", "keygen", "--dim", "8", "--out", key}).code == 0);
  REQUIRE(run({"--seed", "1", "train", "--untrained", "--data", data, "--out-model", model}).code == 0);
  const auto enc = run({"attack-dlg", "--victim-config", scratch()("mlp.json"), "--data", data, "--encrypted", "--model", model, "--key", key});
  REQUIRE(enc.code == 0);
  const auto rep = enc.report();
  CHECK(rep["mse_vs_original"].get<double>() > 100 * rep["mse_vs_target"].get<double>());

  CHECK(run({"attack-dlg", "--victim-config", scratch()("none.json"), "--data", data}).code == 2);
  std::ofstream(scratch()("wrong.json")) << R"({"type": "mlp", "input_dim": 5})";
  CHECK(run({"attack-dlg", "--victim-config", scratch()("wrong.json"), "--data", data}).code == 5);
}

TEST_CASE("unknown subcommand and help") {
  CHECK(run({"frobnicate"}).code == 3);
  CHECK(run({"--help"}).code == 0);
}

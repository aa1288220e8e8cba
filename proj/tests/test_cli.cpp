#include "doctest_torch.hpp"

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "a4net/cli.hpp"
#include "helpers.hpp"

using namespace a4net;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(test::read_bytes(p)); }

// The effective config records its own output directory; everything else in
// it must match between runs.
nlohmann::json config_without_out(const fs::path& p) {
  auto j = read_json(p);
  j.erase("out");
  return j;
}

// Every artifact except the log and the effective config, in path order.
std::string dir_bytes(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    const auto name = e.path().filename();
    if (e.is_regular_file() && name != "run.log" && name != "effective_config.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += fs::relative(f, dir).string() + "\n" + test::read_bytes(f);
  return all;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit 1") {
  CHECK(cli({}).code == 1);
  CHECK(cli({"frobnicate"}).code == 1);
  CHECK(cli({"train", "--no-such-flag", "1"}).code == 1);
  CHECK(cli({"synth", "--samples", "many"}).code == 1);
  CHECK(cli({"synth", "--preset", "huge"}).code == 1);
  auto dir = test::scratch_dir("cli_config");
  std::ofstream(dir / "cfg.json") << R"({"samples": 4, "colour": "blue"})";
  auto r = cli({"synth", "--config", (dir / "cfg.json").string(), "--out", (dir / "o").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("colour") != std::string::npos);
}

TEST_CASE("runtime failures exit 2") {
  auto dir = test::scratch_dir("cli_runtime");
  CHECK(cli({"eval", "--checkpoint", (dir / "nothing.ckpt").string(), "--data", (dir / "m.tsv").string()}).code == 2);
}

TEST_CASE("help lists every flag with both preset defaults") {
  auto r = cli({"train", "--help"});
  CHECK(r.code == 0);
  for (const char* flag : {"--batch-size", "--learning-rate", "--weight-decay", "--epochs", "--attributes",
                           "--objective-mode", "--w-B", "--w-FE", "--seed", "--out", "--data", "--config"}) {
    CHECK_MESSAGE(r.out.find(flag) != std::string::npos, flag);
  }
  CHECK(r.out.find("[full: 80, mini: 32]") != std::string::npos);
  CHECK(r.out.find("[full: 3e-06") != std::string::npos);
  CHECK(r.out.find("[full: 20, mini:") != std::string::npos);
  CHECK(r.out.find("[default: mini]") != std::string::npos);
  auto probe = cli({"probe", "--help"});
  CHECK(probe.out.find("--protocol") != std::string::npos);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("synth is byte-identical across runs and seeds matter") {
  auto dir = test::scratch_dir("cli_synth");
  const std::vector<std::string> base = {"synth", "--samples", "8", "--test-samples", "4", "--seed", "7"};
  auto with_out = [&](const std::string& name) {
    auto args = base;
    args.insert(args.end(), {"--out", (dir / name).string()});
    return args;
  };
  REQUIRE(cli(with_out("a")).code == 0);
  REQUIRE(cli(with_out("b")).code == 0);
  CHECK(fs::exists(dir / "a" / "manifest.tsv"));
  CHECK(fs::exists(dir / "a" / "test" / "manifest.tsv"));
  CHECK(dir_bytes(dir / "a") == dir_bytes(dir / "b"));
  CHECK(config_without_out(dir / "a" / "effective_config.json") ==
        config_without_out(dir / "b" / "effective_config.json"));
  CHECK(cli({"synth", "--samples", "8", "--test-samples", "4", "--seed", "8", "--out", (dir / "c").string()}).code == 0);
  CHECK(dir_bytes(dir / "a") != dir_bytes(dir / "c"));
}

TEST_CASE("train then eval, deterministic artifacts and config precedence") {
  auto dir = test::scratch_dir("cli_train");
  REQUIRE(cli({"synth", "--samples", "16", "--test-samples", "8", "--seed", "3", "--out", (dir / "data").string()})
              .code == 0);
  std::ofstream(dir / "cfg.json") << R"({"epochs": 3, "batch_size": 16, "learning_rate": 0.0005})";
  setenv("A4NET_EPOCHS", "1", 1);
  auto train_args = [&](const std::string& name) {
    return std::vector<std::string>{"train", "--config", (dir / "cfg.json").string(), "--data",
                                    (dir / "data" / "manifest.tsv").string(), "--batch-size", "8", "--seed", "5",
                                    "--out", (dir / name).string()};
  };
  auto r1 = cli(train_args("t1"));
  auto r2 = cli(train_args("t2"));
  unsetenv("A4NET_EPOCHS");
  REQUIRE(r1.code == 0);
  REQUIRE(r2.code == 0);
  for (const char* f : {"ckpt", "metrics.json"}) {
    CHECK_MESSAGE(test::read_bytes(dir / "t1" / f) == test::read_bytes(dir / "t2" / f), f);
  }
  CHECK(config_without_out(dir / "t1" / "effective_config.json") ==
        config_without_out(dir / "t2" / "effective_config.json"));
  auto eff = read_json(dir / "t1" / "effective_config.json");
  CHECK(eff.at("epochs") == 1);            // environment beats the config file
  CHECK(eff.at("batch_size") == 8);        // flag beats both
  CHECK(eff.at("learning_rate") == 0.0005);  // config file beats the preset
  CHECK(read_json(dir / "t1" / "metrics.json").at("loss_history").size() == 1);

  auto ev = cli({"eval", "--checkpoint", (dir / "t1" / "ckpt").string(), "--data",
                 (dir / "data" / "test" / "manifest.tsv").string(), "--out", (dir / "e").string()});
  REQUIRE(ev.code == 0);
  auto metrics = read_json(dir / "e" / "metrics.json");
  CHECK(metrics.contains("emotion_top1"));
  CHECK(metrics.at("samples") == 8);

  auto clash = cli({"eval", "--checkpoint", (dir / "t1" / "ckpt").string(), "--data",
                    (dir / "data" / "manifest.tsv").string(), "--emotion-classes", "8"});
  CHECK(clash.code == 1);

  auto ex = cli({"explain", "--checkpoint", (dir / "t1" / "ckpt").string(), "--data",
                 (dir / "data" / "manifest.tsv").string(), "--index", "2", "--out", (dir / "x").string()});
  REQUIRE(ex.code == 0);
  CHECK(fs::exists(dir / "x" / "cam_overlay.png"));
  CHECK(read_json(dir / "x" / "cam.json").at("layer_id") == "backbone.stage4");

  auto pr = cli({"probe", "--checkpoint", (dir / "t1" / "ckpt").string(), "--data",
                 (dir / "data" / "manifest.tsv").string(), "--protocol", "unbiasemo", "--probe-epochs", "1",
                 "--out", (dir / "p").string()});
  REQUIRE(pr.code == 0);
  CHECK(fs::exists(dir / "p" / "probe_head.ckpt"));
  CHECK(read_json(dir / "p" / "metrics.json").at("protocol") == "unbiasemo");
}

TEST_CASE("ablate emits the eight-row table") {
  auto dir = test::scratch_dir("cli_ablate");
  auto r = cli({"ablate", "--subsets", "B,C,S,F,S+F,B+S+F,C+S+F,B+C+S+F", "--samples", "16", "--test-samples", "8",
                "--epochs", "1", "--batch-size", "16", "--out", dir.string()});
  REQUIRE(r.code == 0);
  std::istringstream table(test::read_bytes(dir / "ablation.tsv"));
  std::vector<std::string> lines;
  for (std::string line; std::getline(table, line);) lines.push_back(line);
  REQUIRE(lines.size() == 9);
  CHECK(lines[0] == "\tEmotion(%)\tB(MSE)\tC(MSE)\tS\tF");
  const char* labels[] = {"B", "C", "S", "F", "S+F", "B+S+F", "C+S+F", "B+C+S+F"};
  for (size_t i = 0; i < 8; ++i) CHECK(lines[i + 1].rfind(std::string(labels[i]) + "\t", 0) == 0);
  CHECK(lines[1].find("\t-\t-\t-") != std::string::npos);
}

}  // TEST_SUITE

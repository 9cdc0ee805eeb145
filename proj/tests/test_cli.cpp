#include <doctest.h>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>
#include <json.hpp>

#include "cli.hpp"
#include "outfit/checkpoint.hpp"
#include "outfit/index.hpp"
#include "support/fixtures.hpp"

using namespace outfit;
using namespace outfit::testing;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "outfit");
  args.insert(args.begin() + 1, {"--log-level", "warn"});
  std::ostringstream out, err;
  Run r;
  r.code = cli::cli_main(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::map<std::string, std::string> tree(const std::filesystem::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    files[std::filesystem::relative(entry.path(), root).string()] =
        std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return files;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const std::vector<std::string> kSmallData = {"--items-per-fine", "12", "--train-outfits", "40",
                                             "--valid-outfits", "12", "--test-outfits", "12"};
const std::vector<std::string> kSmallModel = {"--d-img", "4", "--d-text", "4", "--layers", "1",
                                              "--heads", "2", "--ff-hidden", "8", "--epochs", "1",
                                              "--batch-size", "8", "--negatives", "3"};

std::vector<std::string> join(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  const Run none = run({});
  CHECK(none.code == 2);
  const Run unknown = run({"generate-synthetic", "--out", "x", "--bogus-flag"});
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("bogus-flag") != std::string::npos);
  CHECK(unknown.err.find("Usage") != std::string::npos);
  CHECK(run({"train", "cp"}).code == 2);
  CHECK(run({"eval", "fitb", "--data", "d", "--checkpoint", "c", "--mode", "sideways"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("missing files give exit 1 and name the path") {
  TempDir dir("cli-missing");
  const Run gen = run(join({"generate-synthetic", "--out", (dir / "data").string()}, kSmallData));
  REQUIRE(gen.code == 0);
  const std::string missing = (dir / "no-such.ckpt").string();
  const Run r = run({"eval", "cir", "--data", (dir / "data").string(), "--checkpoint", missing});
  CHECK(r.code == 1);
  CHECK(r.err.find(missing) != std::string::npos);
  CHECK(r.err.rfind("error: ", 0) == 0);

  const Run no_data = run({"build-index", "--data", (dir / "nowhere").string(), "--checkpoint", missing, "--out",
                           (dir / "x.idx").string()});
  CHECK(no_data.code == 1);
  CHECK(no_data.err.find(missing) != std::string::npos);
}

TEST_CASE("generate-synthetic is byte-identical for a seed") {
  TempDir dir("cli-gen");
  const auto a = dir / "a";
  const auto b = dir / "b";
  const auto c = dir / "c";
  REQUIRE(run(join({"generate-synthetic", "--seed", "7", "--out", a.string()}, kSmallData)).code == 0);
  REQUIRE(run(join({"generate-synthetic", "--seed", "7", "--out", b.string()}, kSmallData)).code == 0);
  REQUIRE(run(join({"generate-synthetic", "--seed", "8", "--out", c.string()}, kSmallData)).code == 0);
  const auto ta = tree(a);
  CHECK(ta.size() >= 3);
  CHECK(ta == tree(b));
  CHECK(ta != tree(c));
  CHECK(run({"generate-synthetic", "--out", (dir / "bad").string(), "--styles", "0"}).code == 1);
}

TEST_CASE("train, index, evaluate end to end") {
  TempDir dir("cli-e2e");
  const std::string data = (dir / "data").string();
  REQUIRE(run(join({"generate-synthetic", "--seed", "3", "--out", data}, kSmallData)).code == 0);

  const std::string cp = (dir / "cp.ckpt").string();
  const Run train_cp = run(join({"train", "cp", "--data", data, "--out", cp, "--seed", "5"}, kSmallModel));
  REQUIRE(train_cp.code == 0);
  CHECK(train_cp.out.find("valid_auc") != std::string::npos);
  const Checkpoint cp_ckpt = load_checkpoint(cp);
  CHECK(cp_ckpt.config.cp_head);
  CHECK(cp_ckpt.config.items.payload_dim == 32);

  const std::string cp_again = (dir / "cp2.ckpt").string();
  REQUIRE(run(join({"train", "cp", "--data", data, "--out", cp_again, "--seed", "5"}, kSmallModel)).code == 0);
  CHECK(slurp(cp) == slurp(cp_again));

  const std::string cir = (dir / "cir.ckpt").string();
  const std::string metrics = (dir / "cir.jsonl").string();
  const Run train_cir = run(join({"train", "cir", "--data", data, "--init", cp, "--out", cir, "--metrics", metrics},
                                 kSmallModel));
  REQUIRE(train_cir.code == 0);
  CHECK(slurp(metrics).find("valid_fitb") != std::string::npos);
  CHECK(run(join({"train", "cir", "--data", data, "--out", (dir / "x.ckpt").string()}, kSmallModel)).code == 2);

  const std::string index = (dir / "items.idx").string();
  REQUIRE(run({"build-index", "--data", data, "--checkpoint", cir, "--out", index}).code == 0);
  CHECK(load_index(index).model_fingerprint() == fingerprint(load_checkpoint(cir)));
  const Run mismatched = run({"eval", "cir", "--data", data, "--checkpoint", cp, "--index", index});
  CHECK(mismatched.code == 1);

  const std::string report_a = (dir / "a.json").string();
  const std::string report_b = (dir / "b.json").string();
  REQUIRE(run({"eval", "cir", "--data", data, "--checkpoint", cir, "--index", index, "--report", report_a, "--k",
               "1,5"})
              .code == 0);
  REQUIRE(run({"eval", "cir", "--data", data, "--checkpoint", cir, "--report", report_b, "--k", "1,5"}).code == 0);
  CHECK(slurp(report_a) == slurp(report_b));
  const auto report = nlohmann::json::parse(slurp(report_a));
  CHECK(report.at("task") == "cir");
  CHECK(report.at("metrics").contains("recall@5"));

  const Run cp_eval = run({"eval", "cp", "--data", data, "--checkpoint", cp, "--split", "test"});
  CHECK(cp_eval.code == 0);
  CHECK(cp_eval.out.find("auc") != std::string::npos);
  CHECK(run({"eval", "cp", "--data", data, "--checkpoint", cir}).code == 1);
  CHECK(run({"eval", "fitb", "--data", data, "--checkpoint", cir, "--mode", "cir"}).code == 0);
  CHECK(run({"eval", "fitb", "--data", data, "--checkpoint", cp, "--mode", "auto"}).code == 0);
}

TEST_CASE("index-size reports the single and subspace byte counts") {
  const Run r = run({"index-size", "--items", "1000", "--dim", "64", "--categories", "4", "8"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("512000") != std::string::npos);
  CHECK(r.out.find("2048000") != std::string::npos);
  CHECK(r.out.find("4096000") != std::string::npos);
}

TEST_CASE("serve --port 0 prints the bound port and answers") {
  TempDir dir("cli-serve");
  const std::string data = (dir / "data").string();
  REQUIRE(run(join({"generate-synthetic", "--seed", "4", "--out", data}, kSmallData)).code == 0);
  const std::string cir = (dir / "cir.ckpt").string();
  REQUIRE(run(join({"train", "cir", "--scratch", "--data", data, "--out", cir}, kSmallModel)).code == 0);
  const std::string index = (dir / "items.idx").string();
  REQUIRE(run({"build-index", "--data", data, "--checkpoint", cir, "--out", index}).code == 0);

  int pipe_fd[2];
  REQUIRE(pipe(pipe_fd) == 0);
  const pid_t pid = fork();
  REQUIRE(pid >= 0);
  if (pid == 0) {
    dup2(pipe_fd[1], STDOUT_FILENO);
    close(pipe_fd[0]);
    close(pipe_fd[1]);
    execl(OUTFIT_BINARY, OUTFIT_BINARY, "--log-level", "warn", "serve", "--data", data.c_str(), "--checkpoint",
          cir.c_str(), "--index", index.c_str(), "--port", "0", static_cast<char*>(nullptr));
    _exit(127);
  }
  close(pipe_fd[1]);
  FILE* child_out = fdopen(pipe_fd[0], "r");
  char line[512] = {0};
  const bool got_line = fgets(line, sizeof line, child_out) != nullptr;
  const std::string text = line;
  int port = 0;
  const auto colon = text.rfind(':');
  if (got_line && colon != std::string::npos) port = std::atoi(text.c_str() + colon + 1);
  CHECK(text.find("listening on http://") == 0);
  CHECK(port > 0);
  if (port > 0) {
    httplib::Client client("127.0.0.1", port);
    client.set_read_timeout(10, 0);
    auto health = client.Get("/healthz");
    REQUIRE(health);
    CHECK(health->status == 200);
  }
  kill(pid, SIGTERM);
  int status = 0;
  waitpid(pid, &status, 0);
  fclose(child_out);
  CHECK(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);
}

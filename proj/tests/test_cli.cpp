#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

const std::string kCli = GC_CLI_PATH;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("gc_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

int run(const std::string& args, const std::string& stderr_path = "/dev/null") {
  const std::string cmd = "\"" + kCli + "\" " + args + " > /dev/null 2> \"" + stderr_path + "\"";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

// relative path -> contents for every regular file below root
std::vector<std::pair<std::string, std::string>> tree(const fs::path& root) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.emplace_back(fs::relative(e.path(), root).string(), slurp(e.path()));
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::vector<std::string>> csvRows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto& r = rows.emplace_back();
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) r.push_back(cell);
    if (!line.empty() && line.back() == ',') r.emplace_back();
  }
  return rows;
}

}  // namespace

TEST_CASE("synth is deterministic") {
  TempDir a("synth_a"), b("synth_b");
  const std::string args = " --n 150 --seed 7 --set synth.patch_size=32 --set synth.session_length=50";
  REQUIRE(run("synth --out " + a.path.string() + args) == 0);
  REQUIRE(run("synth --out " + b.path.string() + args) == 0);
  const auto ta = tree(a.path), tb = tree(b.path);
  CHECK(ta.size() == 151);
  CHECK(ta == tb);
}

TEST_CASE("synth label mean follows the positive rate") {
  TempDir d("rate");
  REQUIRE(run("synth --out " + d.path.string() + " --n 2000 --seed 3 --set synth.patch_size=32 --set synth.positive_rate=0.08") == 0);
  const auto rows = csvRows(slurp(d.path / "manifest.csv"));
  REQUIRE(rows.size() == 2001);
  double sum = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) sum += std::stoi(rows[i][4]);
  const double mean = sum / 2000;
  MESSAGE("label mean " << mean);
  CHECK(mean >= 0.06);
  CHECK(mean <= 0.10);
}

TEST_CASE("usage and io failures exit nonzero") {
  TempDir d("fail");
  CHECK(run("synth --out " + (d / "missing") + " --n 10 --seed 1", d / "err.txt") == 3);
  CHECK(slurp(d / "err.txt").find("does not exist") != std::string::npos);
  CHECK(run("synth --n 10 --seed 1") == 2);
  CHECK(run("synth --out " + d.path.string() + " --n 10") == 2);
  CHECK(run("synth --out " + d.path.string() + " --n 10 --seed 1 --set picnn.nope=3", d / "err.txt") == 2);
  CHECK(slurp(d / "err.txt").find("picnn.nope") != std::string::npos);
  CHECK(run("frobnicate") == 2);
}

TEST_CASE("eval reports perfect scores and is deterministic") {
  TempDir d("eval");
  std::string scores = "session_id,frame_index,truth,score\n";
  for (int i = 0; i < 50; ++i) scores += "s," + std::to_string(i) + "," + (i % 5 == 0 ? "1,0.9" : "0,0.1") + "\n";
  spit(d.path / "scores.csv", scores);
  REQUIRE(run("eval --scores " + (d / "scores.csv") + " --report " + (d / "r1.csv") + " --curve " + (d / "c1.csv") +
              " --svg " + (d / "p1.svg")) == 0);
  REQUIRE(run("eval --scores " + (d / "scores.csv") + " --report " + (d / "r2.csv") + " --curve " + (d / "c2.csv") +
              " --svg " + (d / "p2.svg")) == 0);
  const auto report = slurp(d.path / "r1.csv");
  CHECK(report.find("max_f1,1\n") != std::string::npos);
  CHECK(report == slurp(d.path / "r2.csv"));
  CHECK(slurp(d.path / "c1.csv") == slurp(d.path / "c2.csv"));
  CHECK(slurp(d.path / "p1.svg") == slurp(d.path / "p2.svg"));
}

TEST_CASE("picnn and alexnet models differ, and training repeats exactly") {
  TempDir d("train");
  REQUIRE(run("synth --out " + d.path.string() + " --n 120 --seed 5 --set synth.patch_size=48 --set synth.positive_rate=0.3") == 0);
  const std::string common = " --manifest " + (d / "manifest.csv") +
                             " --seed 9 --quiet --set picnn.input_size=40 --set picnn.channel_scale=0.1"
                             " --set picnn.fc_width=16 --set picnn.iterations=3 --set picnn.batch_size=8";
  REQUIRE(run("train picnn --out " + (d / "p1.gcm") + " --log " + (d / "p1.csv") + common) == 0);
  REQUIRE(run("train picnn --out " + (d / "p2.gcm") + common) == 0);
  REQUIRE(run("train alexnet --out " + (d / "a.gcm") + common) == 0);
  CHECK(slurp(d.path / "p1.gcm") == slurp(d.path / "p2.gcm"));
  CHECK(slurp(d.path / "p1.gcm") != slurp(d.path / "a.gcm"));
  CHECK(csvRows(slurp(d.path / "p1.csv")).size() == 4);

  REQUIRE(run("predict --model " + (d / "p1.gcm") + " --manifest " + (d / "manifest.csv") + " --out " + (d / "s1.csv")) == 0);
  REQUIRE(run("predict --model " + (d / "p2.gcm") + " --manifest " + (d / "manifest.csv") + " --out " + (d / "s2.csv")) == 0);
  CHECK(slurp(d.path / "s1.csv") == slurp(d.path / "s2.csv"));
  CHECK(csvRows(slurp(d.path / "s1.csv")).size() == 121);
}

TEST_CASE("peec without head poses names the missing precondition") {
  TempDir d("nopose");
  REQUIRE(run("synth --out " + d.path.string() + " --n 60 --seed 2 --set synth.patch_size=32") == 0);
  auto rows = csvRows(slurp(d.path / "manifest.csv"));
  std::string text;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0) rows[i][5] = rows[i][6] = rows[i][7] = "";
    for (std::size_t j = 0; j < rows[i].size(); ++j) text += (j ? "," : "") + rows[i][j];
    text += "\n";
  }
  spit(d.path / "manifest.csv", text);
  const int code = run("train peec --manifest " + (d / "manifest.csv") + " --out " + (d / "m.gcm") + " --seed 1", d / "err.txt");
  CHECK(code == 3);
  const auto err = slurp(d.path / "err.txt");
  MESSAGE(err);
  CHECK(err.find("pose") != std::string::npos);
  CHECK_FALSE(fs::exists(d.path / "m.gcm"));
}

TEST_CASE("stream, select and boxeval") {
  TempDir d("select");
  REQUIRE(run("stream --out " + d.path.string() + " --frames 60 --seed 4") == 0);
  REQUIRE(run("select --detections " + (d / "detections.jsonl") + " --frames " + (d / "frames") + " --out " +
              (d / "child.csv") + " --jsonl " + (d / "child.jsonl")) == 0);
  const auto rows = csvRows(slurp(d.path / "child.csv"));
  CHECK(rows.size() == 61);
  CHECK(run("boxeval --pred " + (d / "child.jsonl") + " --truth " + (d / "truth.jsonl")) == 0);
  CHECK(run("stats --detections " + (d / "detections.jsonl") + " --frame-width 320 --frame-height 240 --csv " +
            (d / "stats.csv")) == 0);
  CHECK(fs::exists(d.path / "stats.csv"));
}

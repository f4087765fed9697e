#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "abfr/anchors.hpp"
#include "abfr/binary_io.hpp"
#include "abfr/optim.hpp"
#include "abfr/sampling.hpp"
#include "abfr/volume.hpp"
#include "cli.hpp"

using namespace abfr;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / name) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& rel) const { return (path_ / rel).string(); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

// Small cohort shared by several cases: phantom, random anchors, representations.
struct Cohort {
  TempDir dir{"abfr_cli_cohort"};
  Cohort() {
    REQUIRE(run({"phantom", "--n", "10", "--seed", "5", "--dims", "20,20,20", "--timepoints", "48",
                 "--out", dir / "ph"})
                .code == 0);
    REQUIRE(run({"anchors", "--mask", dir / "ph/mask.abfv", "--out", dir / "anc", "--H", "8", "--s", "5",
                 "--tau", "20", "--seed", "5"})
                .code == 0);
    REQUIRE(run({"represent", "--manifest", dir / "ph/manifest.csv", "--mask", dir / "ph/mask.abfv",
                 "--anchors", dir / "anc/anchors.json", "--out", dir / "rep", "--N", "16", "--sizes",
                 "4,6", "--seed", "5"})
                .code == 0);
  }
};

const Cohort& cohort() {
  static Cohort c;
  return c;
}

std::vector<std::string> small_model() {
  return {"--embed-dim", "8", "--layers", "1", "--heads", "2", "--grid-size", "4", "--epochs", "3"};
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"phantom"}).code == 2);
  CHECK(run({"--help"}).code == 0);
  TempDir t("abfr_cli_usage");
  CHECK(run({"phantom", "--n", "0", "--seed", "1", "--out", t / "a"}).code == 2);
  CHECK(run({"anchors", "--mask", t / "missing.abfv", "--out", t / "b", "--seed", "1"}).code == 2);
}

TEST_CASE("phantom output is deterministic and complete") {
  TempDir t("abfr_cli_phantom");
  const std::vector<std::string> args{"phantom", "--n", "4", "--seed", "7", "--dims", "12,12,12",
                                      "--timepoints", "20"};
  REQUIRE(run(concat(args, {"--out", t / "a"})).code == 0);
  REQUIRE(run(concat(args, {"--out", t / "a2", "--jobs", "3"})).code == 0);
  const auto a = snapshot(t.path() / "a");
  auto b = snapshot(t.path() / "a2");
  CHECK(a.size() == 7);  // mask, 4 subjects, manifest, config
  for (const auto& [name, bytes] : a)
    if (name != "config.json") CHECK(bytes == b[name]);
  const std::string manifest = slurp(t.path() / "a/manifest.csv");
  CHECK(lines(manifest) == 5);
  CHECK(manifest.rfind("subject_id,path,label\nsub-0000,sub-0000.abfv,0\nsub-0001,sub-0001.abfv,1\n", 0) == 0);
  CHECK(manifest.find('\r') == std::string::npos);

  REQUIRE(run(concat(args, {"--out", t / "a"})).code == 0);
  CHECK(snapshot(t.path() / "a") == a);

  REQUIRE(run({"phantom", "--n", "4", "--seed", "8", "--dims", "12,12,12", "--timepoints", "20", "--out",
               t / "c"})
              .code == 0);
  CHECK(slurp(t.path() / "c/sub-0000.abfv") != a.at("sub-0000.abfv"));
}

TEST_CASE("seed precedence: flag, then config file, then ABFR_SEED") {
  TempDir t("abfr_cli_seed");
  const auto dump = [&](const std::string& out) {
    return nlohmann::json::parse(slurp(fs::path(out) / "config.json"));
  };
  {
    std::ofstream(t / "cfg.json") << R"({"seed": 11, "phantom": {"subjects": 2, "dims": [10, 10, 10], "timepoints": 8}})";
  }
  REQUIRE(run({"phantom", "--config", t / "cfg.json", "--out", t / "a"}).code == 0);
  CHECK(dump(t / "a")["seed"] == 11);
  CHECK(dump(t / "a")["phantom"]["subjects"] == 2);
  REQUIRE(run({"phantom", "--config", t / "cfg.json", "--seed", "12", "--n", "3", "--out", t / "b"}).code == 0);
  CHECK(dump(t / "b")["seed"] == 12);
  CHECK(dump(t / "b")["phantom"]["subjects"] == 3);
  CHECK(dump(t / "b")["phantom"]["timepoints"] == 8);

  ::setenv("ABFR_SEED", "13", 1);
  REQUIRE(run({"phantom", "--n", "1", "--dims", "10,10,10", "--timepoints", "8", "--out", t / "c"}).code == 0);
  CHECK(dump(t / "c")["seed"] == 13);
  REQUIRE(run({"phantom", "--config", t / "cfg.json", "--out", t / "d"}).code == 0);
  CHECK(dump(t / "d")["seed"] == 11);
  ::setenv("ABFR_SEED", "not-a-number", 1);
  CHECK(run({"phantom", "--n", "1", "--out", t / "e"}).code == 2);
  ::unsetenv("ABFR_SEED");
  CHECK(run({"phantom", "--n", "1", "--out", t / "e"}).code == 2);

  {
    std::ofstream(t / "bad.json") << R"({"seed": 1, "phantom": {"subjcts": 2}})";
  }
  const Run bad = run({"phantom", "--config", t / "bad.json", "--out", t / "f"});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("phantom.subjcts") != std::string::npos);
  {
    std::ofstream(t / "broken.json") << "{\"seed\": ";
  }
  CHECK(run({"phantom", "--config", t / "broken.json", "--out", t / "g"}).code == 2);
}

TEST_CASE("anchors: random beats grid on the phantom shell") {
  TempDir t("abfr_cli_anchors");
  REQUIRE(run({"phantom", "--n", "1", "--seed", "1", "--timepoints", "8", "--out", t / "ph"}).code == 0);
  const std::string mask = t / "ph/mask.abfv";
  REQUIRE(run({"anchors", "--mask", mask, "--out", t / "grid", "--mode", "grid", "--s", "8", "--tau", "100"})
              .code == 0);
  CHECK(fs::exists(t.path() / "grid/anchors.json"));
  // 100 cubes of side 8 crowd this small shell: some anchor is fully shadowed,
  // so only the diagnostics are written.
  const Run crowded = run({"anchors", "--mask", mask, "--out", t / "rnd", "--mode", "random", "--H", "100",
                           "--s", "8", "--tau", "100", "--seed", "4"});
  CHECK(crowded.code == 2);
  CHECK(crowded.err.find("starved") != std::string::npos);
  CHECK(!fs::exists(t.path() / "rnd/anchors.json"));
  const auto grid = nlohmann::json::parse(slurp(t.path() / "grid/report.json"));
  const auto rnd = nlohmann::json::parse(slurp(t.path() / "rnd/report.json"));
  CHECK(rnd["anchors"] == 100);
  CHECK(grid["label_image"] == "ok");
  CHECK(rnd["mean_distance"].get<double>() < grid["mean_distance"].get<double>());
  CHECK(lines(slurp(t.path() / "rnd/distances.csv")) == 101);
  CHECK(slurp(t.path() / "rnd/histogram.csv").rfind("bin_left,bin_right,count\n", 0) == 0);

  REQUIRE(run({"anchors", "--mask", mask, "--out", t / "few", "--H", "12", "--s", "8", "--tau", "100", "--seed",
               "4"})
              .code == 0);
  CHECK(fs::exists(t.path() / "few/labels.abfl"));
  CHECK(load_anchor_set(t / "few/anchors.json").size() == 12);

  CHECK(run({"anchors", "--mask", mask, "--out", t / "x", "--H", "0", "--seed", "1"}).code == 2);
  CHECK(run({"anchors", "--mask", mask, "--out", t / "x", "--mode", "hex", "--seed", "1"}).code == 2);
  CHECK(run({"anchors", "--mask", mask, "--out", t / "x", "--mode", "random"}).code == 2);  // no seed
  const Run infeasible = run({"anchors", "--mask", mask, "--out", t / "x", "--s", "4", "--tau", "65", "--seed", "1"});
  CHECK(infeasible.code == 2);
  CHECK(infeasible.err.find("tau") != std::string::npos);
}

TEST_CASE("represent: reruns are byte-identical, failures are partial") {
  const auto& c = cohort();
  const auto& d = c.dir;
  const auto first = snapshot(d.path() / "rep");
  CHECK(lines(first.at("manifest.csv")) == 11);
  CHECK(lines(first.at("coverage.csv")) == 11);
  CHECK(lines(first.at("flags.csv")) == 21);
  const std::vector<std::string> args{"represent", "--manifest", d / "ph/manifest.csv", "--mask",
                                      d / "ph/mask.abfv", "--anchors", d / "anc/anchors.json",
                                      "--N", "16", "--sizes", "4,6", "--seed", "5"};
  REQUIRE(run(concat(args, {"--out", d / "rep_b", "--jobs", "4"})).code == 0);
  const auto second = snapshot(d.path() / "rep_b");
  for (const auto& [name, bytes] : first)
    if (name != "config.json") CHECK(bytes == second.at(name));
  const auto rep = load_representation(d / "rep/sub-0003.abfr");
  CHECK(rep.fc.rows == 16);
  CHECK(rep.fc.cols == 8);
  CHECK(rep.positions.cols == 6);
  CHECK(rep.label == 1);

  // A missing volume and an all-zero volume next to a healthy subject.
  const Volume4D v = load_raw(d / "ph/sub-0000.abfv");
  save_raw(Volume4D(v.timepoints(), v.spatial(), std::vector<double>(v.data().size(), 0.0)),
           d / "ph/zero.abfv");
  {
    std::ofstream(d / "ph/mixed.csv") << "subject_id,path,label\nsub-0000,sub-0000.abfv,0\n"
                                         "ghost,ghost.abfv,1\nzero,zero.abfv,\n";
  }
  const Run mixed = run({"represent", "--manifest", d / "ph/mixed.csv", "--mask", d / "ph/mask.abfv",
                         "--anchors", d / "anc/anchors.json", "--N", "16", "--sizes", "4,6", "--seed", "5",
                         "--out", d / "rep_mixed"});
  CHECK(mixed.code == 1);
  CHECK(mixed.err.find("ghost") != std::string::npos);
  const std::string manifest = slurp(d.path() / "rep_mixed/manifest.csv");
  CHECK(manifest == "subject_id,path,label\nsub-0000,sub-0000.abfr,0\nzero,zero.abfr,\n");
  CHECK(slurp(d.path() / "rep_mixed/sub-0000.abfr") == first.at("sub-0000.abfr"));
  const std::string flags = slurp(d.path() / "rep_mixed/flags.csv");
  CHECK(flags.find("zero,1,4,128,128\n") != std::string::npos);
  CHECK(flags.find("zero,2,6,128,128\n") != std::string::npos);
  const auto zero = load_representation(d / "rep_mixed/zero.abfr");
  for (double x : zero.fc.data) CHECK(x == 0.0);
  CHECK(!zero.label.has_value());
}

TEST_CASE("represent: variance CSV shrinks from R=1 to R=3") {
  const auto& d = cohort().dir;
  const auto mean_variance = [&](const std::string& sizes, const std::string& out) {
    REQUIRE(run({"represent", "--manifest", d / "ph/manifest.csv", "--mask", d / "ph/mask.abfv", "--anchors",
                 d / "anc/anchors.json", "--N", "16", "--sizes", sizes, "--seed", "9", "--variance-repeats",
                 "4", "--out", d / out})
                .code == 0);
    std::istringstream in(slurp(d.path() / out / "variance.csv"));
    std::string line;
    std::getline(in, line);
    CHECK(line == "subject_id,R,repeats,variance");
    double total = 0;
    int n = 0;
    while (std::getline(in, line)) {
      total += std::stod(line.substr(line.rfind(',') + 1));
      ++n;
    }
    CHECK(n == 10);
    return total / n;
  };
  CHECK(mean_variance("5,5,5", "var3") < mean_variance("5", "var1"));
  CHECK(run({"represent", "--manifest", d / "ph/manifest.csv", "--mask", d / "ph/mask.abfv", "--anchors",
             d / "anc/anchors.json", "--seed", "1", "--variance-repeats", "1", "--out", d / "v"})
            .code == 2);
}

TEST_CASE("train writes checkpoints, logs and summaries") {
  const auto& d = cohort().dir;
  const Run r = run(concat({"train", "--manifest", d / "rep/manifest.csv", "--out", d / "tr", "--seed", "2",
                            "--encoder-block", "fastkan", "--head-block", "wavkan"},
                           small_model()));
  REQUIRE(r.code == 0);
  CHECK(r.out.find("fastkan-wavkan") != std::string::npos);
  for (int f = 0; f < 5; ++f) {
    const auto stem = d.path() / "tr" / ("fold-" + std::to_string(f));
    CHECK(!load_checkpoint(stem.string() + ".abfk").empty());
    CHECK(lines(slurp(stem.string() + "_log.csv")) == 4);
  }
  CHECK(lines(slurp(d.path() / "tr/metrics.csv")) == 6);
  CHECK(slurp(d.path() / "tr/summary.csv").rfind("stat,acc,auc,f1,precision,recall,specificity\n", 0) == 0);
  CHECK(lines(slurp(d.path() / "tr/predictions.csv")) == 11);
  const auto cfg = nlohmann::json::parse(slurp(d.path() / "tr/config.json"));
  CHECK(cfg["model"]["encoder_block"] == "fastkan");
  CHECK(cfg["model"]["input_dim"] == 8);
  CHECK(cfg["model"]["pos_dim"] == 6);
  CHECK(cfg["train"]["epochs"] == 3);

  const Run again = run(concat({"train", "--manifest", d / "rep/manifest.csv", "--out", d / "tr2", "--seed", "2",
                                "--encoder-block", "fastkan", "--head-block", "wavkan", "--jobs", "3"},
                               small_model()));
  REQUIRE(again.code == 0);
  const auto a = snapshot(d.path() / "tr"), b = snapshot(d.path() / "tr2");
  for (const auto& [name, bytes] : a)
    if (name != "config.json") CHECK(bytes == b.at(name));

  const Run bad = run({"train", "--manifest", d / "rep/manifest.csv", "--out", d / "tr3", "--seed", "2",
                       "--encoder-block", "kanformer"});
  CHECK(bad.code == 2);
  for (const char* name : {"mlp", "efficientkan", "fastkan", "fasterkan", "wavkan", "chebykan"})
    CHECK(bad.err.find(name) != std::string::npos);
  CHECK(run({"train", "--manifest", d / "nope.csv", "--out", d / "tr3", "--seed", "2"}).code == 2);
  CHECK(run(concat({"train", "--manifest", d / "rep/manifest.csv", "--out", d / "tr3", "--seed", "2", "--folds",
                    "1"},
                   small_model()))
            .code == 2);
}

TEST_CASE("bench and eval") {
  const auto& d = cohort().dir;
  const Run b = run(concat({"bench", "--manifest", d / "rep/manifest.csv", "--out", d / "bench", "--seed", "1",
                            "--configs", "mlp-mlp,fastkan", "--folds", "2"},
                           small_model()));
  REQUIRE(b.code == 0);
  const std::string csv = slurp(d.path() / "bench/bench.csv");
  CHECK(lines(csv) == 3);
  CHECK(csv.find("\nmlp-mlp,") != std::string::npos);
  CHECK(csv.find("\nfastkan,") != std::string::npos);
  CHECK(run({"bench", "--manifest", d / "rep/manifest.csv", "--out", d / "bench", "--seed", "1", "--configs",
             "mlp-bogus"})
            .code == 2);

  TempDir t("abfr_cli_eval");
  {
    std::ofstream(t / "a.csv") << "fold,acc,auc,f1,precision,recall,specificity\n"
                                  "0,0.9,0.9,0.9,0.9,0.9,0.9\n1,0.8,0.85,0.8,0.8,0.8,0.8\n2,0.95,1,0.9,0.9,1,0.9\n";
    std::ofstream(t / "b.csv") << "fold,acc,auc,f1,precision,recall,specificity\n"
                                  "0,0.7,0.8,0.7,0.7,0.7,0.7\n1,0.75,0.8,0.7,0.8,0.7,0.8\n2,0.8,0.9,0.8,0.8,0.9,0.8\n";
    std::ofstream(t / "short.csv") << "fold,acc,auc,f1,precision,recall,specificity\n0,1,1,1,1,1,1\n";
  }
  const Run e = run({"eval", "--a", t / "a.csv", "--b", t / "b.csv", "--out", t / "report/ttest.csv"});
  REQUIRE(e.code == 0);
  const std::string report = slurp(t.path() / "report/ttest.csv");
  CHECK(report == e.out);
  CHECK(lines(report) == 7);
  // acc differences 0.2, 0.05, 0.15; reference values from scipy.stats.ttest_rel.
  std::istringstream in(report);
  std::string header, acc;
  std::getline(in, header);
  std::getline(in, acc);
  CHECK(acc.rfind("acc,", 0) == 0);
  std::vector<std::string> f;
  std::stringstream ss(acc);
  for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
  CHECK(std::stod(f[4]) == doctest::Approx(3.023715784073818).epsilon(1e-9));
  CHECK(f[5] == "2");
  CHECK(std::stod(f[6]) == doctest::Approx(0.047089186342161686).epsilon(1e-9));
  CHECK(run({"eval", "--a", t / "a.csv", "--b", t / "short.csv"}).code == 2);
  CHECK(run({"eval", "--a", t / "a.csv", "--b", t / "missing.csv"}).code == 2);
}

TEST_CASE("nifti-info") {
  const Run r = run({"nifti-info", std::string(ABFR_TEST_DATA) + "/ramp_i16_4d.nii", "--json"});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["dim0"] == 4);
  CHECK(j["dims"] == std::vector<int>{2, 2, 2, 3});
  CHECK(j["datatype"] == 4);
  CHECK(j["scl_slope"] == 0.5);
  CHECK(run({"nifti-info", std::string(ABFR_TEST_DATA) + "/wrong_magic.nii"}).code == 2);
  CHECK(run({"nifti-info", std::string(ABFR_TEST_DATA) + "/truncated.nii"}).code == 2);
  CHECK(run({"nifti-info", std::string(ABFR_TEST_DATA) + "/absent.nii"}).code == 2);
}

// Command-line front end: list parsing, exit codes, provenance echo, config
// layering, and end-to-end subcommand runs against tiny fixtures.
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rxsim/cli.hpp"
#include "rxsim/dataset.hpp"
#include "rxsim/faults.hpp"
#include "rxsim/harness.hpp"
#include "rxsim/mapping.hpp"
#include "rxsim/model_io.hpp"
#include "rxsim/nn.hpp"
#include "rxsim/pruning.hpp"
#include "rxsim/rng.hpp"

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rxsim;

namespace {

int run(const std::vector<std::string>& args, std::string* out_text = nullptr,
        std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (out_text != nullptr) *out_text = out.str();
  if (err_text != nullptr) *err_text = err.str();
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

// One shared fixture dir: a 6-input 4-class model and a 30-sample IDX pair
// with 2x3 "images".
struct CliFixture {
  fs::path dir;
  std::string model_path, images_path, labels_path;
  Model model;
  Dataset loaded;

  CliFixture() {
    dir = fs::temp_directory_path() / "rxsim-test-cli";
    fs::remove_all(dir);
    fs::create_directories(dir);

    model = make_mlp(6, 5, 4, 2);
    model_path = (dir / "m.rfsm").string();
    save_model(model, model_path);

    const std::int64_t n = 30;
    Tensor images({n, 6});
    Rng rng(12);
    for (auto& v : images.data) v = static_cast<float>(rng.uniform());
    std::vector<std::int32_t> labels(static_cast<std::size_t>(n));
    for (auto& l : labels) l = static_cast<std::int32_t>(rng.uniform_int(4));
    images_path = (dir / "ti.idx").string();
    labels_path = (dir / "tl.idx").string();
    save_idx_images(images_path, images, 2, 3);
    save_idx_labels(labels_path, labels);
    loaded = load_idx_dataset(images_path, labels_path);
  }
  ~CliFixture() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
};

}  // namespace

TEST_CASE("value lists parse numbers, ranges, and mixes of both") {
  CHECK(parse_value_list("0.01,0.05") == std::vector<double>{0.01, 0.05});
  CHECK(parse_value_list("").empty());
  CHECK(parse_value_list("1:3:1") == std::vector<double>{1.0, 2.0, 3.0});

  const auto ramp = parse_value_list("0.1:0.9:0.1");
  REQUIRE(ramp.size() == 9);
  CHECK(ramp.front() == doctest::Approx(0.1));
  CHECK(ramp.back() == doctest::Approx(0.9));
  for (std::size_t i = 0; i < ramp.size(); ++i) CHECK(ramp[i] == doctest::Approx(0.1 * (1.0 + static_cast<double>(i))));

  const auto mixed = parse_value_list("0,0.3:0.5:0.1,1");
  REQUIRE(mixed.size() == 5);
  CHECK(mixed[0] == 0.0);
  CHECK(mixed[1] == doctest::Approx(0.3));
  CHECK(mixed[3] == doctest::Approx(0.5));
  CHECK(mixed[4] == 1.0);

  CHECK_THROWS_WITH_AS(parse_value_list("0.1,,0.2"), doctest::Contains("empty entry"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_value_list("abc"), doctest::Contains("not a number"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_value_list("1x"), doctest::Contains("not a number"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_value_list("0.5:0.9"), doctest::Contains("start:stop:step"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_value_list("0.9:0.1:0.1"), doctest::Contains("stop below start"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_value_list("0.1:0.5:0"), doctest::Contains("step must be positive"), std::runtime_error);
}

TEST_CASE("scheme lists accept canonical names and short aliases") {
  const auto canonical = parse_scheme_list("two-column,offset,differential");
  REQUIRE(canonical.size() == 3);
  CHECK(canonical[0] == MappingScheme::TwoColumn);
  CHECK(canonical[1] == MappingScheme::Offset);
  CHECK(canonical[2] == MappingScheme::Differential);

  const auto aliased = parse_scheme_list("tc,off,diff");
  CHECK(aliased == canonical);

  CHECK_THROWS_WITH_AS(parse_scheme_list("tc,,off"), doctest::Contains("empty entry"), std::runtime_error);
  CHECK_THROWS_AS(parse_scheme_list("bogus"), std::runtime_error);
}

TEST_CASE("exit codes distinguish success, usage errors, and runtime failures") {
  std::string out, err;
  CHECK(run({"rxsim"}, &out, &err) == 2);                // subcommand required
  CHECK(run({"rxsim", "frobnicate"}, &out, &err) == 2);  // unknown subcommand

  CHECK(run({"rxsim", "--help"}, &out, &err) == 0);
  CHECK(out.find("train") != std::string::npos);
  CHECK(out.find("sweep") != std::string::npos);

  CHECK(run({"rxsim", "inject", "--help"}, &out, &err) == 0);
  CHECK(out.find("--fault-rate") != std::string::npos);

  CHECK(run({"rxsim", "inject", "--bogus-flag"}, &out, &err) == 2);

  CHECK(run({"rxsim", "inject"}, &out, &err) == 2);
  CHECK(err.find("missing --model") != std::string::npos);

  CHECK(run({"rxsim", "inject", "--model", "/nonexistent/m.rfsm"}, &out, &err) == 2);
  CHECK(err.find("not found") != std::string::npos);

  CHECK(run({"rxsim", "train"}, &out, &err) == 2);
  CHECK(err.find("missing --out") != std::string::npos);

  CHECK(run({"rxsim", "inject", "--config", "/nonexistent/cfg.json"}, &out, &err) == 2);
  CHECK(err.find("config file not found") != std::string::npos);

  // A present-but-corrupt model is a pipeline failure, not a usage error.
  const fs::path dir = fs::temp_directory_path() / "rxsim-test-cli-exit";
  fs::create_directories(dir);
  const fs::path junk = dir / "junk.rfsm";
  std::ofstream(junk) << "garbage";
  CHECK(run({"rxsim", "inject", "--model", junk.string()}, &out, &err) == 1);
  CHECK(err.find("error:") != std::string::npos);

  const fs::path badcfg = dir / "bad.json";
  std::ofstream(badcfg) << "{oops";
  CHECK(run({"rxsim", "inject", "--config", badcfg.string()}, &out, &err) == 2);
  CHECK(err.find("invalid config JSON") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("every registered flag appears in its subcommand help text") {
  const auto subs = cli_subcommand_names();
  CHECK(subs == std::vector<std::string>{"train", "prune", "search", "inject", "sweep",
                                         "verify-expectation", "inspect"});
  for (const auto& sub : subs) {
    const std::string help = cli_help_text(sub);
    CHECK_FALSE(help.empty());
    for (const auto& flag : cli_flag_names(sub)) {
      INFO(sub << " " << flag);
      CHECK(help.find(flag) != std::string::npos);
    }
  }
  // Spot-check a few load-bearing flags exist at all.
  auto has = [](const std::vector<std::string>& v, const char* name) {
    for (const auto& s : v)
      if (s == name) return true;
    return false;
  };
  CHECK(has(cli_flag_names("train"), "--epochs"));
  CHECK(has(cli_flag_names("sweep"), "--jobs"));
  CHECK(has(cli_flag_names("sweep"), "--rates"));
  CHECK(has(cli_flag_names("inject"), "--p-off"));
  CHECK(has(cli_flag_names("search"), "--th"));
  CHECK(has(cli_flag_names("verify-expectation"), "--cells"));
}

TEST_CASE("verify-expectation reproduces the closed-form value") {
  const fs::path dir = fs::temp_directory_path() / "rxsim-test-cli-verify";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path report = dir / "verify.json";

  std::string out, err;
  const int code = run({"rxsim", "verify-expectation", "--cells", "20000", "--rates", "0.062",
                        "--ratios", "0.6", "--trials", "2", "--seed", "3", "--out", report.string()},
                       &out, &err);
  CHECK(code == 0);
  CHECK(out.find("\"command\": \"verify-expectation\"") != std::string::npos);
  CHECK(out.find("E_prime") != std::string::npos);

  const json doc = json::parse(slurp(report));
  REQUIRE(doc.at("rows").size() == 1);
  const json& row = doc.at("rows").at(0);
  // r = 0.062 at on:off 5.2 splits into p_off = 0.01, p_on = 0.052; with 60%
  // of cells pruned the expected disturbed fraction is 0.01*0.4 + 0.052.
  CHECK(row.at("p_off").get<double>() == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(row.at("p_on").get<double>() == doctest::Approx(0.052).epsilon(1e-12));
  CHECK(row.at("E_prime").get<double>() == doctest::Approx(0.056).epsilon(1e-12));
  CHECK(std::fabs(row.at("z").get<double>()) < 5.0);
  CHECK(row.at("cells").get<std::int64_t>() == 20000);
  fs::remove_all(dir);
}

TEST_CASE("inject matches the library evaluation and writes its report") {
  CliFixture fx;
  const fs::path report = fx.dir / "inject.json";
  std::string out, err;
  const int code = run({"rxsim", "inject", "--model", fx.model_path, "--images", fx.images_path,
                        "--labels", fx.labels_path, "--scheme", "two-column", "--fault-rate", "0.1",
                        "--trials", "3", "--seed", "5", "--tile-rows", "16", "--tile-cols", "16",
                        "--out", report.string()},
                       &out, &err);
  REQUIRE(code == 0);
  CHECK(out.find("\"command\": \"inject\"") != std::string::npos);

  EvalOptions opts;
  opts.trials = 3;
  opts.seed = 5;
  opts.tile_rows = 16;
  opts.tile_cols = 16;
  const FaultModel fm = FaultModel::from_total_rate(0.1, 5.2);
  const PointStats direct =
      evaluate_with_faults(fx.model, fx.loaded, MappingScheme::TwoColumn, fm, opts);

  const json doc = json::parse(slurp(report));
  const json& results = doc.at("results");
  CHECK(results.at("acc_mean").get<double>() == direct.acc_mean);
  CHECK(results.at("acc_std").get<double>() == direct.acc_std);
  CHECK(results.at("mismatch_cell").get<double>() == direct.mismatch_cell_mean);
  CHECK(results.at("p_off").get<double>() == fm.p_off);
  CHECK(results.at("trial_acc").size() == 3);
  CHECK(doc.at("config").at("scheme").get<std::string>() == "two-column");
}

TEST_CASE("sweep subcommand writes CSV, report, and progress byte-stably") {
  CliFixture fx;
  const fs::path csv = fx.dir / "out.csv";
  std::string out, err;
  const std::vector<std::string> args{
      "rxsim",    "sweep",        "--model",  fx.model_path, "--images",    fx.images_path,
      "--labels", fx.labels_path, "--scheme", "differential", "--rates",    "0.01,0.02",
      "--ratios", "0,0.5",        "--trials", "2",            "--seed",     "4",
      "--eval-subset", "20",      "--tile-rows", "16",        "--tile-cols", "16",
      "--out",    csv.string()};
  REQUIRE(run(args, &out, &err) == 0);
  CHECK(out.find("\"command\": \"sweep\"") != std::string::npos);
  CHECK(out.find("\"points\": 4") != std::string::npos);
  CHECK(out.find("\"failed_points\": 0") != std::string::npos);

  REQUIRE(fs::exists(csv));
  REQUIRE(fs::exists(fx.dir / "out.csv.json"));
  REQUIRE(fs::exists(fx.dir / "out.csv.progress.jsonl"));
  const std::string csv_text = slurp(csv);
  const auto lines = lines_of(csv_text);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == kSweepCsvHeader);
  CHECK(lines_of(slurp(fx.dir / "out.csv.progress.jsonl")).size() == 4);

  // The library produces the same bytes for the same spec.
  ExperimentSpec spec;
  spec.schemes = {MappingScheme::Differential};
  spec.rates = {0.01, 0.02};
  spec.prune_ratios = {0.0, 0.5};
  spec.trials = 2;
  spec.seed = 4;
  spec.eval_subset = 20;
  spec.tile_rows = 16;
  spec.tile_cols = 16;
  const SweepResult direct = sweep(spec, fx.model, fx.loaded);
  CHECK(csv_text == direct.csv_text);

  // Re-running resumes: same bytes, no new progress entries.
  REQUIRE(run(args, &out, &err) == 0);
  CHECK(slurp(csv) == csv_text);
  CHECK(lines_of(slurp(fx.dir / "out.csv.progress.jsonl")).size() == 4);

  const json report = json::parse(slurp(fx.dir / "out.csv.json"));
  CHECK(report.at("points").size() == 4);
  CHECK(report.at("config").at("trials").get<int>() == 2);
}

TEST_CASE("prune subcommand zeroes the smallest weights and reports ratios") {
  CliFixture fx;
  const fs::path pruned_path = fx.dir / "p.rfsm";
  std::string out, err;
  REQUIRE(run({"rxsim", "prune", "--model", fx.model_path, "--out", pruned_path.string(),
               "--ratio", "0.5"},
              &out, &err) == 0);
  CHECK(out.find("\"prune_ratio_before\": 0.0") != std::string::npos);
  CHECK(out.find("\"prune_ratio_after\": 0.5") != std::string::npos);

  const Model pruned = load_model(pruned_path.string());
  CHECK(prune_ratio(pruned) == 0.5);

  CHECK(run({"rxsim", "prune", "--model", fx.model_path, "--out", pruned_path.string(),
             "--ratio", "1.5"},
            &out, &err) == 2);
  CHECK(err.find("--ratio must lie in [0, 1]") != std::string::npos);
}

TEST_CASE("search subcommand writes a best model and a readable trace") {
  CliFixture fx;
  const fs::path best = fx.dir / "best.rfsm";
  const fs::path trace = fx.dir / "best.rfsm.trace.jsonl";  // default: <out>.trace.jsonl
  std::string out, err;
  const int code = run({"rxsim", "search", "--model", fx.model_path, "--images", fx.images_path,
                        "--labels", fx.labels_path, "--out", best.string(), "--ratios", "0.3,0.5",
                        "--th", "100", "--trials", "1", "--fault-rate", "0", "--seed", "2"},
                       &out, &err);
  REQUIRE(code == 0);
  REQUIRE(fs::exists(best));
  REQUIRE(fs::exists(trace));

  const auto lines = lines_of(slurp(trace));
  REQUIRE(lines.size() >= 3);  // header + initial round + at least one candidate
  const json head = json::parse(lines[0]);
  CHECK(head.at("command").get<std::string>() == "search");
  const json initial = json::parse(lines[1]);
  CHECK(initial.at("round").get<int>() == 0);
  CHECK(initial.at("initial").get<bool>());
  const json first = json::parse(lines[2]);
  CHECK(first.at("round").get<int>() == 1);
  CHECK(first.at("ratio").get<double>() == 0.3);
  CHECK(first.contains("accepted"));

  // th = 100 accuracy points accepts everything, so the search reaches 0.5.
  const Model loaded_best = load_model(best.string());
  CHECK(json::parse(lines.back()).at("accepted").get<bool>());
  const json header = read_model_header(best.string());
  CHECK(header.at("metadata").contains("best_acc"));
}

TEST_CASE("inspect prints the stored header and per-layer statistics") {
  CliFixture fx;
  std::string out, err;
  REQUIRE(run({"rxsim", "prune", "--model", fx.model_path, "--out",
               (fx.dir / "p.rfsm").string(), "--ratio", "0.25"},
              &out, &err) == 0);
  REQUIRE(run({"rxsim", "inspect", "--model", (fx.dir / "p.rfsm").string()}, &out, &err) == 0);
  CHECK(out.find("\"kind\": \"dense\"") != std::string::npos);
  // Per-block floors: 5 of 20 and 7 of 30 weights -> 12/50 pruned.
  CHECK(out.find("\"prune_ratio\": 0.24") != std::string::npos);
  CHECK(out.find("\"mask_zero_fraction\"") != std::string::npos);
  CHECK(out.find("\"weight_params\": 50") != std::string::npos);
}

TEST_CASE("config files preload flags and explicit flags override them") {
  const fs::path dir = fs::temp_directory_path() / "rxsim-test-cli-config";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path cfg = dir / "cfg.json";
  const fs::path report = dir / "report.json";
  {
    std::ofstream f(cfg);
    f << json{{"cells", 500}, {"rates", "0.062"}, {"ratios", "0.25"}, {"trials", 2}, {"seed", 9}}
             .dump();
  }

  std::string out, err;
  const int code = run({"rxsim", "verify-expectation", "--config", cfg.string(), "--trials", "3",
                        "--out", report.string()},
                       &out, &err);
  REQUIRE(code == 0);
  const json doc = json::parse(slurp(report));
  CHECK(doc.at("config").at("cells").get<std::int64_t>() == 500);  // from the file
  CHECK(doc.at("config").at("trials").get<int>() == 3);            // flag wins
  CHECK(doc.at("config").at("seed").get<std::uint64_t>() == 9);
  REQUIRE(doc.at("rows").size() == 1);
  CHECK(doc.at("rows").at(0).at("prune_ratio").get<double>() == 0.25);
  CHECK(doc.at("rows").at(0).at("trials").get<int>() == 3);
  fs::remove_all(dir);
}

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "apckit/config.hpp"
#include "apckit/errors.hpp"
#include "apckit/report.hpp"
#include "support.hpp"

using namespace apckit;
namespace fs = std::filesystem;

namespace {

eval::EvalReport sample_report(const std::string& defense, double pgd, double drop) {
  eval::EvalReport r;
  r.victim_name = "pointnet_mini";
  r.defense_name = defense;
  r.per_attack_accuracy = {{"pgd", pgd}, {"drop", drop}};
  r.per_attack_count = {{"pgd", 10}, {"drop", 10}};
  r.average = (pgd + drop) / 2.0;
  r.clean_accuracy = 90.0;
  r.clean_count = 10;
  r.metadata_json = R"({"seed":1})";
  return r;
}

report::Triptych sample_triptych() {
  report::Triptych t;
  t.example_id = "test_cube_0001";
  t.attack_name = "pgd";
  t.class_names = {"sphere", "cube"};
  t.true_label = 1;
  t.clean = testing_support::random_cloud(20, 1);
  t.adversarial = testing_support::random_cloud(20, 2);
  t.purified = testing_support::random_cloud(20, 3);
  t.pred_clean = 1;
  t.pred_adversarial = 0;
  t.pred_purified = 1;
  return t;
}

std::string slurp(const fs::path& f) {
  std::ifstream in(f);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("report") {

TEST_CASE("percent formatting") {
  CHECK(report::format_percent(87.25) == "87.2");
  CHECK(report::format_percent(100.0) == "100.0");
  CHECK(report::format_percent(0.0) == "0.0");
  CHECK(report::format_percent(33.333) == "33.3");
}

TEST_CASE("robustness tables") {
  const std::vector<eval::EvalReport> reps = {sample_report("none", 10.0, 40.0), sample_report("apc", 70.0, 80.0)};
  const std::string md = report::robustness_markdown(reps);
  CHECK(md.find("Avg.") != std::string::npos);
  CHECK(md.find("Clean") != std::string::npos);
  CHECK(md.find("| apc |") != std::string::npos);
  CHECK(md.find("75.0") != std::string::npos);
  const std::string csv = report::robustness_csv(reps);
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "victim,defense,attack,accuracy,average,clean_accuracy");
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 4);
  CHECK(csv.find("pointnet_mini,apc,pgd,70.0,75.0,90.0") != std::string::npos);
}

TEST_CASE("json round trips") {
  const eval::EvalReport r = sample_report("sor", 12.5, 50.0);
  const eval::EvalReport back = report::eval_report_from_json(report::to_json(r));
  CHECK(back.per_attack_accuracy == r.per_attack_accuracy);
  CHECK(back.per_attack_count == r.per_attack_count);
  CHECK(back.average == r.average);
  CHECK(back.defense_name == "sor");

  eval::AblationTable t{"loss_terms", {"clean", "adv"}, {{"ce", {{"clean", 80.0}, {"adv", 40.0}}}}};
  const eval::AblationTable tb = report::ablation_from_json(report::to_json(t));
  CHECK(tb.kind == t.kind);
  CHECK(tb.columns == t.columns);
  CHECK(tb.rows[0].values == t.rows[0].values);
  CHECK(report::ablation_markdown(t).find("ce") != std::string::npos);

  eval::TransferMatrix m;
  m.average["pointnet_mini"]["dgcnn_mini"] = 55.0;
  m.with_apc["dgcnn_mini"] = sample_report("apc", 60.0, 50.0);
  m.without_defense["dgcnn_mini"] = sample_report("none", 10.0, 20.0);
  const eval::TransferMatrix mb = report::transfer_from_json(report::to_json(m));
  CHECK(mb.average == m.average);
  CHECK(mb.with_apc.at("dgcnn_mini").average == 55.0);
  CHECK(report::transfer_markdown(m).find("dgcnn_mini") != std::string::npos);

  const std::vector<eval::EfficiencyRow> e = {{"apc", 0.002, 8707}, {"sor", 0.001, 0}};
  const auto eb = report::efficiency_from_json(report::to_json(e));
  REQUIRE(eb.size() == 2);
  CHECK(eb[0].param_count == 8707);
  CHECK(eb[1].median_seconds == 0.001);
  CHECK(report::efficiency_markdown(e).find("8707") != std::string::npos);
  CHECK_THROWS_AS(report::eval_report_from_json("{"), IoError);
}

TEST_CASE("triptych svg") {
  const std::string svg = report::triptych_svg(sample_triptych());
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("pred: cube (correct)") != std::string::npos);
  CHECK(svg.find("pred: sphere (wrong)") != std::string::npos);
  CHECK(svg.find("<circle") != std::string::npos);
}

TEST_CASE("render_report writes a complete, deterministic bundle") {
  report::ReportBundle b;
  b.reports = {sample_report("none", 10.0, 40.0), sample_report("apc", 70.0, 80.0)};
  b.efficiency = {{"apc", 0.002, 8707}};
  b.triptychs = {sample_triptych()};
  const fs::path out = fs::temp_directory_path() / "apckit_test_report";
  fs::remove_all(out);
  const auto files = report::render_report(b, out, {report::Format::kMarkdown, report::Format::kCsv, report::Format::kPlots});
  REQUIRE_FALSE(files.empty());
  CHECK(files.back().filename() == "manifest.json");
  CHECK(fs::exists(out / "report.md"));
  CHECK(fs::exists(out / "robustness.csv"));
  CHECK(fs::exists(out / "plots" / "test_cube_0001__pgd.svg"));
  const std::string first = slurp(out / "report.md");
  report::render_report(b, out, {report::Format::kMarkdown, report::Format::kCsv, report::Format::kPlots});
  CHECK(slurp(out / "report.md") == first);

  const fs::path md_only = fs::temp_directory_path() / "apckit_test_report_md";
  fs::remove_all(md_only);
  report::render_report(b, md_only, {report::Format::kMarkdown});
  CHECK_FALSE(fs::exists(md_only / "robustness.csv"));
  CHECK(fs::exists(md_only / "manifest.json"));

  const fs::path blocked = out / "report.md" / "sub";
  CHECK_THROWS_AS(report::render_report(b, blocked, {report::Format::kMarkdown}), IoError);
  CHECK(report::format_from_name("csv") == report::Format::kCsv);
  CHECK_THROWS_AS(report::format_from_name("pdf"), InvalidArgument);
}

}  // TEST_SUITE

TEST_SUITE("config") {

TEST_CASE("defaults") {
  const config::ToolkitConfig c = config::default_config();
  CHECK(c.dataset.train_per_class == 100);
  CHECK(c.dataset.test_per_class == 25);
  CHECK(c.dataset.points == 256);
  CHECK(c.attack_names.size() == 7);
  CHECK(c.apc.k == 8);
  CHECK(c.sor.sor_k == 2);
  CHECK(c.srs.srs_drop_count == 128);
  CHECK(c.attack("pgd").epsilon == 0.05);
  CHECK_THROWS_AS(c.attack("hit"), InvalidArgument);
}

TEST_CASE("parsing layers over defaults and rejects mistakes") {
  const auto c = config::parse_config(R"({"schema_version": 1, "apc": {"epochs": 3, "local_block": "flattened"},
                                          "attacks": {"pgd": {"epsilon": 0.02}}})");
  CHECK(c.apc.epochs == 3);
  CHECK(c.apc.local_block == purifier::LocalBlock::kFlattened);
  CHECK(c.attack("pgd").epsilon == 0.02);
  CHECK(c.attack("pgd").steps == 50);
  CHECK(c.apc.k == 8);
  CHECK_THROWS_AS(config::parse_config(R"({"apc": {}})"), InvalidArgument);
  CHECK_THROWS_AS(config::parse_config(R"({"schema_version": 2})"), InvalidArgument);
  CHECK_THROWS_AS(config::parse_config(R"({"schema_version": 1, "apc": {"epoch": 3}})"), InvalidArgument);
  CHECK_THROWS_AS(config::parse_config(R"({"schema_version": 1, "apc": {"epochs": "3"}})"), InvalidArgument);
  CHECK_THROWS_AS(config::parse_config(R"({"schema_version": 1, "apc": {"epochs": -3}})"), InvalidArgument);
  CHECK_THROWS_AS(config::parse_config(R"({"schema_version": 1, "apc": {"geo_distance": "emd"}})"), InvalidArgument);
  CHECK_THROWS_AS(config::parse_config("not json"), InvalidArgument);
  CHECK_THROWS_AS(config::load_config("/nonexistent/apckit.json"), IoError);
}

TEST_CASE("round trip and seeding") {
  config::ToolkitConfig c = config::default_config();
  config::set_seed(c, 42);
  CHECK(c.seed == 42);
  CHECK(c.dataset.seed == 42);
  CHECK(c.apc.seed == 42);
  const config::ToolkitConfig back = config::parse_config(config::to_json(c));
  CHECK(config::to_json(back) == config::to_json(c));
  CHECK(back.victim(victims::Architecture::kDgcnnMini).architecture == victims::Architecture::kDgcnnMini);
}

}  // TEST_SUITE

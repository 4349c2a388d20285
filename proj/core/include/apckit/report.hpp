#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "apckit/evaluation.hpp"
#include "apckit/point_cloud.hpp"

namespace apckit::report {

enum class Format { kMarkdown, kCsv, kPlots };

Format format_from_name(const std::string& name);

/// Clean, adversarial and purified views of one example with the victim's predictions.
struct Triptych {
  std::string example_id;
  std::string attack_name;
  std::vector<std::string> class_names;
  std::size_t true_label = 0;
  PointCloud clean;
  PointCloud adversarial;
  PointCloud purified;
  std::size_t pred_clean = 0;
  std::size_t pred_adversarial = 0;
  std::size_t pred_purified = 0;
};

struct ReportBundle {
  std::vector<eval::EvalReport> reports;
  std::optional<eval::TransferMatrix> transfer;
  std::vector<eval::AblationTable> ablations;
  std::vector<eval::EfficiencyRow> efficiency;
  std::vector<Triptych> triptychs;
};

/// Markdown robustness table per victim: one row per defense, one column per attack, then Avg. and Clean.
std::string robustness_markdown(const std::vector<eval::EvalReport>& reports);
/// Header victim,defense,attack,accuracy,average,clean_accuracy and one row per (report, attack).
std::string robustness_csv(const std::vector<eval::EvalReport>& reports);
std::string transfer_markdown(const eval::TransferMatrix& m);
std::string ablation_markdown(const eval::AblationTable& t);
std::string efficiency_markdown(const std::vector<eval::EfficiencyRow>& rows);
/// Three orthographic panels with the predicted label under each.
std::string triptych_svg(const Triptych& t);

/// Writes report.md / robustness.csv / plots/*.svg as requested plus manifest.json, and returns
/// every written path (manifest last). File names depend only on the bundle contents.
/// Throws IoError when out_dir cannot be written.
std::vector<std::filesystem::path> render_report(const ReportBundle& bundle, const std::filesystem::path& out_dir,
                                                 const std::set<Format>& formats);

/// JSON text round trips used by the command-line tool.
std::string to_json(const eval::EvalReport& r);
eval::EvalReport eval_report_from_json(const std::string& text);
std::string to_json(const eval::TransferMatrix& m);
eval::TransferMatrix transfer_from_json(const std::string& text);
std::string to_json(const eval::AblationTable& t);
eval::AblationTable ablation_from_json(const std::string& text);
std::string to_json(const std::vector<eval::EfficiencyRow>& rows);
std::vector<eval::EfficiencyRow> efficiency_from_json(const std::string& text);

/// Accuracy to one decimal place.
std::string format_percent(double value);

}  // namespace apckit::report

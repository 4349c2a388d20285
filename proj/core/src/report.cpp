#include "apckit/report.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "apckit/errors.hpp"

namespace apckit::report {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << text;
  if (!out) throw IoError("write failed: " + file.string());
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

std::string label_name(const Triptych& t, std::size_t label) {
  return label < t.class_names.size() ? t.class_names[label] : std::to_string(label);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// Union of attack names across reports, in sorted order.
std::vector<std::string> attack_columns(const std::vector<const eval::EvalReport*>& reports) {
  std::map<std::string, int> seen;
  for (const auto* r : reports) {
    for (const auto& [name, acc] : r->per_attack_accuracy) seen[name] = 1;
  }
  std::vector<std::string> out;
  for (const auto& [name, unused] : seen) out.push_back(name);
  return out;
}

std::string safe_name(std::string s) {
  for (char& c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  }
  return s;
}

json report_json(const eval::EvalReport& r) {
  return {{"victim", r.victim_name},
          {"defense", r.defense_name},
          {"per_attack_accuracy", r.per_attack_accuracy},
          {"per_attack_count", r.per_attack_count},
          {"average", r.average},
          {"clean_accuracy", r.clean_accuracy},
          {"clean_count", r.clean_count},
          {"fallback_count", r.fallback_count},
          {"wall_time_per_example", r.wall_time_per_example},
          {"metadata", json::parse(r.metadata_json)}};
}

eval::EvalReport report_from(const json& j) {
  eval::EvalReport r;
  r.victim_name = j.at("victim").get<std::string>();
  r.defense_name = j.at("defense").get<std::string>();
  r.per_attack_accuracy = j.at("per_attack_accuracy").get<std::map<std::string, double>>();
  r.per_attack_count = j.value("per_attack_count", std::map<std::string, std::size_t>{});
  r.average = j.at("average").get<double>();
  r.clean_accuracy = j.at("clean_accuracy").get<double>();
  r.clean_count = j.value("clean_count", std::size_t{0});
  r.fallback_count = j.value("fallback_count", std::size_t{0});
  r.wall_time_per_example = j.value("wall_time_per_example", 0.0);
  r.metadata_json = j.value("metadata", json::object()).dump();
  return r;
}

template <typename F>
auto parse_or_throw(const std::string& text, const char* what, F&& f) {
  try {
    return f(json::parse(text));
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed ") + what + " JSON: " + e.what());
  }
}

}  // namespace

Format format_from_name(const std::string& name) {
  if (name == "markdown" || name == "md") return Format::kMarkdown;
  if (name == "csv") return Format::kCsv;
  if (name == "plots") return Format::kPlots;
  throw InvalidArgument("unknown report format: " + name);
}

std::string format_percent(double value) { return fixed(value, 1); }

std::string robustness_markdown(const std::vector<eval::EvalReport>& reports) {
  std::map<std::string, std::vector<const eval::EvalReport*>> by_victim;
  for (const auto& r : reports) by_victim[r.victim_name].push_back(&r);
  std::ostringstream md;
  for (const auto& [victim, rows] : by_victim) {
    const auto cols = attack_columns(rows);
    md << "### " << victim << "\n\n| Defense |";
    for (const auto& c : cols) md << ' ' << c << " |";
    md << " Avg. | Clean |\n|---|";
    for (std::size_t i = 0; i < cols.size() + 2; ++i) md << "---:|";
    md << '\n';
    for (const auto* r : rows) {
      md << "| " << r->defense_name << " |";
      for (const auto& c : cols) {
        const auto it = r->per_attack_accuracy.find(c);
        md << ' ' << (it == r->per_attack_accuracy.end() ? std::string("-") : format_percent(it->second)) << " |";
      }
      md << ' ' << format_percent(r->average) << " | " << format_percent(r->clean_accuracy) << " |\n";
    }
    md << '\n';
  }
  return md.str();
}

std::string robustness_csv(const std::vector<eval::EvalReport>& reports) {
  std::ostringstream csv;
  csv << "victim,defense,attack,accuracy,average,clean_accuracy\n";
  for (const auto& r : reports) {
    for (const auto& [attack, acc] : r.per_attack_accuracy) {
      csv << r.victim_name << ',' << r.defense_name << ',' << attack << ',' << format_percent(acc) << ','
          << format_percent(r.average) << ',' << format_percent(r.clean_accuracy) << '\n';
    }
  }
  return csv.str();
}

std::string transfer_markdown(const eval::TransferMatrix& m) {
  std::ostringstream md;
  md << "| Source \\ Target | Target | No Defense | APC |\n|---|---|---:|---:|\n";
  for (const auto& [source, row] : m.average) {
    for (const auto& [target, acc] : row) {
      const auto base = m.without_defense.find(target);
      md << "| " << source << " | " << target << " | "
         << (base == m.without_defense.end() ? std::string("-") : format_percent(base->second.average)) << " | "
         << format_percent(acc) << " |\n";
    }
  }
  return md.str();
}

std::string ablation_markdown(const eval::AblationTable& t) {
  std::ostringstream md;
  md << "### Ablation: " << t.kind << "\n\n| Setting |";
  for (const auto& c : t.columns) md << ' ' << c << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < t.columns.size(); ++i) md << "---:|";
  md << '\n';
  for (const auto& row : t.rows) {
    md << "| " << row.label << " |";
    for (const auto& c : t.columns) {
      const auto it = row.values.find(c);
      if (it == row.values.end()) {
        md << " - |";
      } else {
        md << ' ' << (c == "pairs" ? fixed(it->second, 0) : format_percent(it->second)) << " |";
      }
    }
    md << '\n';
  }
  return md.str();
}

std::string efficiency_markdown(const std::vector<eval::EfficiencyRow>& rows) {
  std::ostringstream md;
  md << "| Defense | Time (s) | #Params |\n|---|---:|---:|\n";
  for (const auto& r : rows) md << "| " << r.defense << " | " << fixed(r.median_seconds, 5) << " | " << r.param_count << " |\n";
  return md.str();
}

std::string triptych_svg(const Triptych& t) {
  constexpr double kPanel = 240.0;
  constexpr double kCaption = 44.0;
  // Fixed view: azimuth 35 degrees, elevation 20 degrees.
  const double az = 35.0 * M_PI / 180.0;
  const double el = 20.0 * M_PI / 180.0;
  const double ca = std::cos(az), sa = std::sin(az), ce = std::cos(el), se = std::sin(el);

  struct Panel {
    const PointCloud* cloud;
    std::string title;
    std::size_t pred;
  };
  const Panel panels[3] = {{&t.clean, "clean", t.pred_clean},
                           {&t.adversarial, "adversarial (" + t.attack_name + ")", t.pred_adversarial},
                           {&t.purified, "purified", t.pred_purified}};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 3 * kPanel << "\" height=\"" << kPanel + kCaption
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int p = 0; p < 3; ++p) {
    const double x0 = p * kPanel;
    const Points& pts = panels[p].cloud->points();
    std::vector<std::array<double, 3>> proj;  // screen x, screen y, depth
    proj.reserve(static_cast<std::size_t>(pts.rows()));
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      const double x = pts(i, 0), y = pts(i, 1), z = pts(i, 2);
      const double u = ca * x - sa * y;
      const double d = sa * x + ca * y;
      const double v = ce * z - se * d;
      const double depth = se * z + ce * d;
      proj.push_back({x0 + kPanel / 2 + u * kPanel * 0.42, kPanel / 2 - v * kPanel * 0.42, depth});
    }
    std::sort(proj.begin(), proj.end(), [](const auto& a, const auto& b) { return a[2] > b[2]; });
    for (const auto& q : proj) {
      const int shade = static_cast<int>(std::clamp(110.0 + 90.0 * q[2], 20.0, 200.0));
      svg << "<circle cx=\"" << fixed(q[0], 2) << "\" cy=\"" << fixed(q[1], 2) << "\" r=\"1.8\" fill=\"rgb(" << shade / 3
          << ',' << shade / 2 << ',' << shade << ")\"/>\n";
    }
    const bool correct = panels[p].pred == t.true_label;
    svg << "<text x=\"" << x0 + kPanel / 2 << "\" y=\"" << kPanel + 16 << "\" text-anchor=\"middle\">"
        << xml_escape(panels[p].title) << "</text>\n";
    svg << "<text x=\"" << x0 + kPanel / 2 << "\" y=\"" << kPanel + 34 << "\" text-anchor=\"middle\" fill=\""
        << (correct ? "#1a7f37" : "#cf222e") << "\">pred: " << xml_escape(label_name(t, panels[p].pred))
        << (correct ? " (correct)" : " (wrong)") << "</text>\n";
  }
  svg << "<text x=\"6\" y=\"14\">" << xml_escape(t.example_id) << ", true: " << xml_escape(label_name(t, t.true_label))
      << "</text>\n</svg>\n";
  return svg.str();
}

std::vector<fs::path> render_report(const ReportBundle& bundle, const fs::path& out_dir,
                                    const std::set<Format>& formats) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create report directory " + out_dir.string());
  std::vector<fs::path> written;

  if (formats.count(Format::kMarkdown) != 0) {
    std::ostringstream md;
    md << "# Robustness report\n\n";
    if (!bundle.reports.empty()) md << "## Adversarial accuracy (%)\n\n" << robustness_markdown(bundle.reports);
    if (bundle.transfer) md << "## Cross-model transfer (average adversarial accuracy, %)\n\n" << transfer_markdown(*bundle.transfer) << '\n';
    for (const auto& t : bundle.ablations) md << ablation_markdown(t) << '\n';
    if (!bundle.efficiency.empty()) md << "## Efficiency\n\n" << efficiency_markdown(bundle.efficiency) << '\n';
    const fs::path file = out_dir / "report.md";
    write_text(file, md.str());
    written.push_back(file);
  }
  if (formats.count(Format::kCsv) != 0) {
    const fs::path file = out_dir / "robustness.csv";
    write_text(file, robustness_csv(bundle.reports));
    written.push_back(file);
  }
  if (formats.count(Format::kPlots) != 0 && !bundle.triptychs.empty()) {
    fs::create_directories(out_dir / "plots", ec);
    if (ec) throw IoError("cannot create " + (out_dir / "plots").string());
    for (const auto& t : bundle.triptychs) {
      const fs::path file = out_dir / "plots" / (safe_name(t.example_id + "__" + t.attack_name) + ".svg");
      write_text(file, triptych_svg(t));
      written.push_back(file);
    }
  }
  json manifest = {{"format_version", "1"}, {"files", json::array()}};
  for (const auto& f : written) manifest["files"].push_back(fs::relative(f, out_dir).generic_string());
  const fs::path file = out_dir / "manifest.json";
  write_text(file, manifest.dump(2) + "\n");
  written.push_back(file);
  return written;
}

std::string to_json(const eval::EvalReport& r) { return report_json(r).dump(2); }

eval::EvalReport eval_report_from_json(const std::string& text) {
  return parse_or_throw(text, "report", [](const json& j) { return report_from(j); });
}

std::string to_json(const eval::TransferMatrix& m) {
  json with = json::object();
  json without = json::object();
  for (const auto& [k, r] : m.with_apc) with[k] = report_json(r);
  for (const auto& [k, r] : m.without_defense) without[k] = report_json(r);
  return json{{"average", m.average}, {"with_apc", with}, {"without_defense", without}}.dump(2);
}

eval::TransferMatrix transfer_from_json(const std::string& text) {
  return parse_or_throw(text, "transfer", [](const json& j) {
    eval::TransferMatrix m;
    m.average = j.at("average").get<std::map<std::string, std::map<std::string, double>>>();
    for (const auto& [k, v] : j.at("with_apc").items()) m.with_apc[k] = report_from(v);
    for (const auto& [k, v] : j.at("without_defense").items()) m.without_defense[k] = report_from(v);
    return m;
  });
}

std::string to_json(const eval::AblationTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) rows.push_back({{"label", r.label}, {"values", r.values}});
  return json{{"kind", t.kind}, {"columns", t.columns}, {"rows", rows}}.dump(2);
}

eval::AblationTable ablation_from_json(const std::string& text) {
  return parse_or_throw(text, "ablation", [](const json& j) {
    eval::AblationTable t;
    t.kind = j.at("kind").get<std::string>();
    t.columns = j.at("columns").get<std::vector<std::string>>();
    for (const auto& r : j.at("rows")) {
      t.rows.push_back({r.at("label").get<std::string>(), r.at("values").get<std::map<std::string, double>>()});
    }
    return t;
  });
}

std::string to_json(const std::vector<eval::EfficiencyRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"defense", r.defense}, {"median_seconds", r.median_seconds}, {"param_count", r.param_count}});
  }
  return out.dump(2);
}

std::vector<eval::EfficiencyRow> efficiency_from_json(const std::string& text) {
  return parse_or_throw(text, "efficiency", [](const json& j) {
    std::vector<eval::EfficiencyRow> rows;
    for (const auto& r : j) {
      rows.push_back({r.at("defense").get<std::string>(), r.at("median_seconds").get<double>(),
                      r.at("param_count").get<std::size_t>()});
    }
    return rows;
  });
}

}  // namespace apckit::report

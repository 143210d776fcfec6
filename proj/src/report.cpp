#include "exposome/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "exposome/csv.hpp"
#include "exposome/errors.hpp"

namespace exposome::report {

using nlohmann::json;

std::string format_estimate(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  // Avoid the "-0.00" artifact.
  if (std::string(buf) == "-0.00") return "0.00";
  return buf;
}

std::string format_p(double p) {
  if (p < 0.001) return "<0.001";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3f", p);
  return buf;
}

namespace {

std::string escape_xml(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

const char* predictor_name(const stats::LmmFit& fit, size_t i) {
  static const char* fallback[] = {"(intercept)", "b1", "b2", "b3", "b4", "b5"};
  if (i < fit.x_names.size() && !fit.x_names[i].empty())
    return fit.x_names[i].c_str();
  return i < 6 ? fallback[i] : "b?";
}

}  // namespace

std::string markdown_model_table(const std::string& title,
                                 const std::vector<FitColumn>& columns) {
  if (columns.empty()) throw ConfigError("model table: no columns");
  const size_t n_pred = columns.front().fit.beta.size();
  for (const auto& col : columns)
    if (col.fit.beta.size() != n_pred)
      throw ConfigError("model table: predictor count differs across columns");

  std::ostringstream out;
  out << "## " << title << "\n\n";
  out << "| Predictors |";
  for (const auto& col : columns)
    out << " " << col.indicator << " Estimates | Conf. Int (95%) | p-value |";
  out << "\n|---|";
  for (size_t i = 0; i < columns.size(); ++i) out << "---|---|---|";
  out << "\n";
  for (size_t pred = 0; pred < n_pred; ++pred) {
    out << "| " << predictor_name(columns.front().fit, pred) << " |";
    for (const auto& col : columns) {
      const auto& fit = col.fit;
      out << " " << format_estimate(fit.beta[pred]) << " | "
          << format_estimate(fit.ci_lo[pred]) << " – "
          << format_estimate(fit.ci_hi[pred]) << " | "
          << format_p(fit.p_value[pred]) << " |";
    }
    out << "\n";
  }
  const auto block_row = [&](const std::string& label, auto getter) {
    out << "| " << label << " |";
    for (const auto& col : columns) out << " " << getter(col.fit) << " |  |  |";
    out << "\n";
  };
  out << "| **Random Effects** |";
  for (size_t i = 0; i < columns.size(); ++i) out << "  |  |  |";
  out << "\n";
  block_row("σ²", [](const stats::LmmFit& f) { return num(f.sigma2); });
  block_row("τ00", [](const stats::LmmFit& f) { return num(f.tau00) + " Participant"; });
  block_row("ICC", [](const stats::LmmFit& f) { return num(f.icc); });
  block_row("N", [](const stats::LmmFit& f) {
    return std::to_string(f.n_groups) + " Participant";
  });
  block_row("Observations", [](const stats::LmmFit& f) {
    return std::to_string(f.n_obs);
  });
  block_row("Marginal R² / Conditional R²", [](const stats::LmmFit& f) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f / %.3f", f.r2_marginal, f.r2_conditional);
    return std::string(buf);
  });
  return out.str();
}

void write_model_table_csv(const std::string& path,
                           const std::vector<FitColumn>& columns) {
  csv::Table table;
  table.header = {"indicator",  "predictor", "estimate", "se",
                  "df",         "t",         "p",        "ci_lo",
                  "ci_hi",      "sigma2",    "tau00",    "icc",
                  "r2_marginal", "r2_conditional", "n_obs", "n_groups"};
  for (const auto& col : columns) {
    const auto& fit = col.fit;
    for (size_t pred = 0; pred < fit.beta.size(); ++pred)
      table.rows.push_back({col.indicator,
                            predictor_name(fit, pred),
                            csv::format_double(fit.beta[pred]),
                            csv::format_double(fit.se[pred]),
                            csv::format_double(fit.satterthwaite_df[pred]),
                            csv::format_double(fit.t_value[pred]),
                            csv::format_double(fit.p_value[pred]),
                            csv::format_double(fit.ci_lo[pred]),
                            csv::format_double(fit.ci_hi[pred]),
                            csv::format_double(fit.sigma2),
                            csv::format_double(fit.tau00),
                            csv::format_double(fit.icc),
                            csv::format_double(fit.r2_marginal),
                            csv::format_double(fit.r2_conditional),
                            std::to_string(fit.n_obs),
                            std::to_string(fit.n_groups)});
  }
  csv::write_file(path, table);
}

std::string fit_to_json(const stats::LmmFit& fit) {
  json j;
  j["beta"] = fit.beta;
  j["se"] = fit.se;
  j["satterthwaite_df"] = fit.satterthwaite_df;
  j["t"] = fit.t_value;
  j["p"] = fit.p_value;
  j["ci95_lo"] = fit.ci_lo;
  j["ci95_hi"] = fit.ci_hi;
  j["sigma2"] = fit.sigma2;
  j["tau00"] = fit.tau00;
  j["theta"] = fit.theta;
  j["icc"] = fit.icc;
  j["r2_marginal"] = fit.r2_marginal;
  j["r2_conditional"] = fit.r2_conditional;
  j["n_obs"] = fit.n_obs;
  j["n_groups"] = fit.n_groups;
  j["reml_deviance"] = fit.reml_deviance;
  j["converged"] = fit.converged;
  j["boundary"] = fit.boundary;
  j["df_fallback"] = fit.df_fallback;
  j["predictors"] = fit.x_names;
  return j.dump(2) + "\n";
}

// --- SVG ----------------------------------------------------------------------

namespace {

std::string svg_open(int width, int height, const std::string& title) {
  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n"
      << "<rect width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n"
      << "<text x=\"" << width / 2
      << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"16\">"
      << escape_xml(title) << "</text>\n";
  return out.str();
}

std::string coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string svg_bar_chart(const std::string& title,
                          const std::vector<std::string>& labels,
                          const std::vector<double>& values,
                          const std::string& value_label) {
  if (labels.size() != values.size())
    throw ConfigError("bar chart: labels/values mismatch");
  const int width = 640;
  const int row_h = 28;
  const int top = 48, left = 200, right = 40, bottom = 36;
  const int height = top + row_h * static_cast<int>(labels.size()) + bottom;
  double max_abs = 1e-9;
  for (double v : values) max_abs = std::max(max_abs, std::abs(v));
  const double plot_w = width - left - right;
  const double zero_x = left + plot_w / 2.0;
  const double unit = (plot_w / 2.0) / max_abs;

  std::ostringstream out;
  out << svg_open(width, height, title);
  out << "<line x1=\"" << coord(zero_x) << "\" y1=\"" << top - 8 << "\" x2=\""
      << coord(zero_x) << "\" y2=\"" << height - bottom + 4
      << "\" stroke=\"#888\"/>\n";
  for (size_t i = 0; i < labels.size(); ++i) {
    const double y = top + row_h * static_cast<double>(i);
    const double v = values[i];
    const double w = std::abs(v) * unit;
    const double x = v >= 0 ? zero_x : zero_x - w;
    const char* fill = v >= 0 ? "#4477cc" : "#cc6688";
    out << "<rect x=\"" << coord(x) << "\" y=\"" << coord(y + 5)
        << "\" width=\"" << coord(w) << "\" height=\"" << row_h - 10
        << "\" fill=\"" << fill << "\"/>\n";
    out << "<text x=\"" << left - 8 << "\" y=\"" << coord(y + row_h / 2.0 + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">"
        << escape_xml(labels[i]) << "</text>\n";
    out << "<text x=\"" << coord(v >= 0 ? x + w + 6 : x - 6) << "\" y=\""
        << coord(y + row_h / 2.0 + 4) << "\" text-anchor=\""
        << (v >= 0 ? "start" : "end")
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << num(v)
        << "</text>\n";
  }
  out << "<text x=\"" << width / 2 << "\" y=\"" << height - 10
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\">"
      << escape_xml(value_label) << "</text>\n";
  out << "</svg>\n";
  return out.str();
}

std::string svg_scatter(const std::string& title, const std::vector<double>& xs,
                        const std::vector<double>& ys,
                        const std::string& x_label, const std::string& y_label,
                        double r) {
  if (xs.size() != ys.size()) throw ConfigError("scatter: xs/ys mismatch");
  const int width = 480, height = 480;
  const int top = 48, left = 64, right = 24, bottom = 56;
  double lo = 1e300, hi = -1e300;
  for (double v : xs) { lo = std::min(lo, v); hi = std::max(hi, v); }
  for (double v : ys) { lo = std::min(lo, v); hi = std::max(hi, v); }
  if (!(hi > lo)) { lo -= 1.0; hi += 1.0; }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  const auto px = [&](double v) { return left + (v - lo) / (hi - lo) * plot_w; };
  const auto py = [&](double v) {
    return top + plot_h - (v - lo) / (hi - lo) * plot_h;
  };

  std::ostringstream out;
  out << svg_open(width, height, title);
  out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\""
      << coord(plot_w) << "\" height=\"" << coord(plot_h)
      << "\" fill=\"none\" stroke=\"#888\"/>\n";
  out << "<line x1=\"" << coord(px(lo)) << "\" y1=\"" << coord(py(lo))
      << "\" x2=\"" << coord(px(hi)) << "\" y2=\"" << coord(py(hi))
      << "\" stroke=\"#bbb\" stroke-dasharray=\"4 3\"/>\n";
  for (size_t i = 0; i < xs.size(); ++i)
    out << "<circle cx=\"" << coord(px(xs[i])) << "\" cy=\"" << coord(py(ys[i]))
        << "\" r=\"3\" fill=\"#4477cc\" fill-opacity=\"0.55\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"" << height - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\">"
      << escape_xml(x_label) << "</text>\n";
  out << "<text x=\"16\" y=\"" << height / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\" transform=\"rotate(-90 16 "
      << height / 2 << ")\">" << escape_xml(y_label) << "</text>\n";
  char annot[48];
  std::snprintf(annot, sizeof annot, "r = %.2f", r);
  out << "<text x=\"" << left + 10 << "\" y=\"" << top + 18
      << "\" font-family=\"sans-serif\" font-size=\"13\">" << annot
      << "</text>\n";
  out << "</svg>\n";
  return out.str();
}

std::string svg_stacked_counts(const std::string& title,
                               const std::vector<std::string>& categories,
                               const std::vector<std::string>& series,
                               const std::vector<std::vector<double>>& counts) {
  if (counts.size() != series.size())
    throw ConfigError("stacked counts: series/counts mismatch");
  for (const auto& row : counts)
    if (row.size() != categories.size())
      throw ConfigError("stacked counts: ragged counts");
  const int width = 640, height = 400;
  const int top = 56, left = 64, right = 24, bottom = 96;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  double max_total = 1e-9;
  for (size_t c = 0; c < categories.size(); ++c) {
    double total = 0.0;
    for (size_t s = 0; s < series.size(); ++s) total += counts[s][c];
    max_total = std::max(max_total, total);
  }
  static const char* palette[] = {"#4477cc", "#cc6688", "#66aa55", "#cc9944"};

  std::ostringstream out;
  out << svg_open(width, height, title);
  const double band = plot_w / static_cast<double>(categories.size());
  const double bar_w = band * 0.6;
  for (size_t c = 0; c < categories.size(); ++c) {
    double y_base = top + plot_h;
    const double x = left + band * static_cast<double>(c) + (band - bar_w) / 2;
    for (size_t s = 0; s < series.size(); ++s) {
      const double h = counts[s][c] / max_total * plot_h;
      y_base -= h;
      out << "<rect x=\"" << coord(x) << "\" y=\"" << coord(y_base)
          << "\" width=\"" << coord(bar_w) << "\" height=\"" << coord(h)
          << "\" fill=\"" << palette[s % 4] << "\"/>\n";
    }
    out << "<text x=\"" << coord(x + bar_w / 2) << "\" y=\""
        << coord(top + plot_h + 14)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\" "
           "transform=\"rotate(-35 "
        << coord(x + bar_w / 2) << " " << coord(top + plot_h + 14) << ")\">"
        << escape_xml(categories[c]) << "</text>\n";
  }
  for (size_t s = 0; s < series.size(); ++s) {
    const double y = 36.0 + 0.0;
    const double x = left + 120.0 * static_cast<double>(s);
    out << "<rect x=\"" << coord(x) << "\" y=\"" << coord(y - 10)
        << "\" width=\"12\" height=\"12\" fill=\"" << palette[s % 4]
        << "\"/>\n";
    out << "<text x=\"" << coord(x + 16) << "\" y=\"" << coord(y)
        << "\" font-family=\"sans-serif\" font-size=\"12\">"
        << escape_xml(series[s]) << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::string markdown_screening_summary(const stats::ScreeningSummary& summary) {
  std::ostringstream out;
  out << "## Screening summary\n\n";
  out << "| Cell | Tested | Significant | Hits | Hit rate | Significance rate "
         "| Exceedance p (hits) |\n";
  out << "|---|---|---|---|---|---|---|\n";
  for (const auto& cell : summary.cells) {
    char rate[32], sig[32];
    std::snprintf(rate, sizeof rate, "%.3f", cell.hit_rate);
    std::snprintf(sig, sizeof sig, "%.3f", cell.significance_rate);
    out << "| " << cell.key << " | " << cell.n_tested << " | "
        << cell.n_significant << " | " << cell.n_hit << " | " << rate << " | "
        << sig << " | " << format_p(cell.exceedance_p) << " |\n";
  }
  out << "\nSkipped features: " << summary.n_skipped << "\n";
  if (!summary.diagnostics.empty()) {
    out << "\n### Diagnostics\n\n";
    for (const auto& d : summary.diagnostics) out << "- " << d << "\n";
  }
  return out.str();
}

}  // namespace exposome::report

#pragma once

#include <string>
#include <vector>

#include "exposome/screening.hpp"
#include "exposome/stats.hpp"

namespace exposome::report {

// One fitted indicator column of a multi-indicator model table.
struct FitColumn {
  std::string indicator;
  stats::LmmFit fit;
};

// Human-readable rounding: 2 decimals for estimates and CIs, 3 for p with
// "<0.001" below a millionth of a chance of display. CSV/JSON keep full
// precision.
std::string format_estimate(double v);
std::string format_p(double p);

// Markdown table in the layout of a per-indicator model summary: predictor
// rows (estimate, CI, p) and a random-effects block (sigma^2, tau00, ICC,
// N, observations, marginal/conditional R^2).
std::string markdown_model_table(const std::string& title,
                                 const std::vector<FitColumn>& columns);

// Same content, machine-readable, full precision.
void write_model_table_csv(const std::string& path,
                           const std::vector<FitColumn>& columns);

// All LmmFit fields, full precision.
std::string fit_to_json(const stats::LmmFit& fit);

// --- SVG ----------------------------------------------------------------------

// Horizontal bar chart (one bar per label, e.g. trait correlations).
std::string svg_bar_chart(const std::string& title,
                          const std::vector<std::string>& labels,
                          const std::vector<double>& values,
                          const std::string& value_label);

// Scatter with an identity line and the correlation annotated.
std::string svg_scatter(const std::string& title, const std::vector<double>& xs,
                        const std::vector<double>& ys,
                        const std::string& x_label, const std::string& y_label,
                        double r);

// Stacked counts per category (e.g. screening hits/misses per outcome cell).
std::string svg_stacked_counts(const std::string& title,
                               const std::vector<std::string>& categories,
                               const std::vector<std::string>& series,
                               const std::vector<std::vector<double>>& counts);

std::string markdown_screening_summary(const stats::ScreeningSummary& summary);

}  // namespace exposome::report

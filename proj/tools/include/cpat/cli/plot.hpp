#pragma once

#include "cpat/evaluation.hpp"

#include <iosfwd>
#include <vector>

namespace cpat::cli {

struct PlotPoint {
  Eigen::Index vocab = 0;
  double alpha = 0.0;
  std::string method;
  std::size_t count = 0;
  double mean = 0.0;  // mean unseen-pair MAE
  double se = 0.0;
  double lower() const { return mean - 2.0 * se; }
  double upper() const { return mean + 2.0 * se; }
};

/// Aggregates result rows into one point per (vocab, alpha, method).
std::vector<PlotPoint> plot_points(const std::vector<ResultRow>& rows);

/// One panel per vocabulary size; x is the perturbation strength, one series
/// per method with mean +/- 2 SE error bars.
void write_plot_svg(std::ostream& out, const std::vector<PlotPoint>& points);
void write_plot_csv(std::ostream& out, const std::vector<PlotPoint>& points);

}  // namespace cpat::cli

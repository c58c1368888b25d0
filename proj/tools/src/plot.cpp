#include "cpat/cli/plot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace cpat::cli {
namespace {

constexpr double kPanelWidth = 320, kPanelHeight = 260, kMargin = 48, kLegendHeight = 28;
constexpr const char* kPalette[] = {"#1b6ca8", "#d1495b", "#3c9d5d", "#edae49", "#6a4c93", "#00798c", "#8d6a9f"};

std::string num(double x) { return format_number(std::round(x * 100.0) / 100.0); }

template <typename T>
std::vector<T> unique_sorted(std::vector<T> values) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  return values;
}

}  // namespace

std::vector<PlotPoint> plot_points(const std::vector<ResultRow>& rows) {
  std::vector<PlotPoint> points;
  for (const SummaryRow& s : summarize(rows))
    points.push_back(PlotPoint{s.vocab, s.alpha, s.method, s.count, s.mean_mae_unseen, s.se_mae_unseen});
  return points;
}

void write_plot_csv(std::ostream& out, const std::vector<PlotPoint>& points) {
  out << "vocab,alpha,method,n_ok,mean_mae_unseen,se_mae_unseen,lower,upper\n";
  auto field = [](double x) { return std::isnan(x) ? std::string("nan") : format_number(x); };
  for (const auto& p : points)
    out << p.vocab << ',' << format_number(p.alpha) << ',' << p.method << ',' << p.count << ',' << field(p.mean)
        << ',' << field(p.se) << ',' << field(p.lower()) << ',' << field(p.upper()) << '\n';
}

void write_plot_svg(std::ostream& out, const std::vector<PlotPoint>& points) {
  std::vector<Eigen::Index> vocabs;
  std::vector<double> alphas;
  std::vector<std::string> methods;
  for (const auto& p : points) {
    vocabs.push_back(p.vocab);
    alphas.push_back(p.alpha);
    if (std::find(methods.begin(), methods.end(), p.method) == methods.end()) methods.push_back(p.method);
  }
  vocabs = unique_sorted(vocabs);
  alphas = unique_sorted(alphas);

  const double width = std::max<double>(1, vocabs.size()) * kPanelWidth;
  const double height = kPanelHeight + kLegendHeight;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
      << "\" viewBox=\"0 0 " << num(width) << ' ' << num(height) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  for (std::size_t panel = 0; panel < vocabs.size(); ++panel) {
    const double x0 = panel * kPanelWidth + kMargin, x1 = (panel + 1) * kPanelWidth - 12;
    const double y0 = 24, y1 = kPanelHeight - 32;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& p : points) {
      if (p.vocab != vocabs[panel] || std::isnan(p.mean)) continue;
      const double spread = std::isnan(p.se) ? 0.0 : 2.0 * p.se;
      lo = std::min(lo, p.mean - spread);
      hi = std::max(hi, p.mean + spread);
    }
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) lo -= 0.5 * std::abs(lo) + 1e-3, hi += 0.5 * std::abs(hi) + 1e-3;
    const double pad = 0.08 * (hi - lo);
    lo -= pad;
    hi += pad;
    auto ypos = [&](double v) { return y1 - (v - lo) / (hi - lo) * (y1 - y0); };
    const double slot = (x1 - x0) / alphas.size();
    auto xpos = [&](std::size_t a, std::size_t m) {
      return x0 + slot * (a + 0.5) + (methods.size() > 1 ? (m - 0.5 * (methods.size() - 1)) * slot * 0.6 /
                                                               methods.size()
                                                         : 0.0);
    };

    out << "<g>\n<text x=\"" << num(0.5 * (x0 + x1)) << "\" y=\"16\" text-anchor=\"middle\">|V| = " << vocabs[panel]
        << "</text>\n";
    out << "<rect x=\"" << num(x0) << "\" y=\"" << num(y0) << "\" width=\"" << num(x1 - x0) << "\" height=\""
        << num(y1 - y0) << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
      const double v = lo + (hi - lo) * tick / 4.0;
      out << "<text x=\"" << num(x0 - 4) << "\" y=\"" << num(ypos(v) + 4) << "\" text-anchor=\"end\">"
          << format_number(std::round(v * 1e5) / 1e5) << "</text>\n";
    }
    for (std::size_t a = 0; a < alphas.size(); ++a)
      out << "<text x=\"" << num(x0 + slot * (a + 0.5)) << "\" y=\"" << num(y1 + 16)
          << "\" text-anchor=\"middle\">alpha = " << format_number(alphas[a]) << "</text>\n";
    if (panel == 0)
      out << "<text transform=\"translate(12 " << num(0.5 * (y0 + y1)) << ") rotate(-90)\" text-anchor=\"middle\">"
          << "MAE (unseen pairs)</text>\n";

    for (std::size_t m = 0; m < methods.size(); ++m) {
      const char* colour = kPalette[m % std::size(kPalette)];
      std::string path;
      for (std::size_t a = 0; a < alphas.size(); ++a) {
        const auto it = std::find_if(points.begin(), points.end(), [&](const PlotPoint& p) {
          return p.vocab == vocabs[panel] && p.alpha == alphas[a] && p.method == methods[m];
        });
        if (it == points.end() || std::isnan(it->mean)) continue;
        const double x = xpos(a, m), y = ypos(it->mean);
        path += (path.empty() ? "M" : " L") + num(x) + ' ' + num(y);
        if (!std::isnan(it->se))
          out << "<line x1=\"" << num(x) << "\" x2=\"" << num(x) << "\" y1=\"" << num(ypos(it->lower()))
              << "\" y2=\"" << num(ypos(it->upper())) << "\" stroke=\"" << colour << "\" stroke-width=\"1.5\"/>\n";
        out << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"3\" fill=\"" << colour << "\"/>\n";
      }
      if (!path.empty())
        out << "<path d=\"" << path << "\" fill=\"none\" stroke=\"" << colour << "\" stroke-opacity=\"0.6\"/>\n";
    }
    out << "</g>\n";
  }

  for (std::size_t m = 0; m < methods.size(); ++m) {
    const double x = 12 + 130.0 * m, y = kPanelHeight + 10;
    out << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"10\" height=\"10\" fill=\""
        << kPalette[m % std::size(kPalette)] << "\"/>\n<text x=\"" << num(x + 14) << "\" y=\"" << num(y + 9) << "\">"
        << methods[m] << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace cpat::cli

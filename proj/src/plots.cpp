#include "retrodiff/plots.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "retrodiff/error.hpp"

namespace retrodiff {

namespace {

constexpr double kW = 640, kH = 400, kLeft = 70, kRight = 150, kTop = 40, kBottom = 60;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void pad() {
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    const double m = 0.08 * (hi - lo);
    lo -= m;
    hi += m;
  }
};

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

void frame(std::ostream& os, const std::string& title, const std::string& x_label, const std::string& y_label,
           const Range& y) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(title) << "</text>\n"
     << "<line x1=\"" << kLeft << "\" y1=\"" << kH - kBottom << "\" x2=\"" << kW - kRight << "\" y2=\"" << kH - kBottom
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kH - kBottom
     << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << (kLeft + kW - kRight) / 2 << "\" y=\"" << kH - 15 << "\" text-anchor=\"middle\">" << esc(x_label)
     << "</text>\n"
     << "<text transform=\"translate(18," << (kTop + kH - kBottom) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << esc(y_label) << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = y.lo + (y.hi - y.lo) * i / 4.0;
    const double py = kH - kBottom - (kH - kTop - kBottom) * i / 4.0;
    os << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << py << "\" x2=\"" << kLeft << "\" y2=\"" << py
       << "\" stroke=\"black\"/><text x=\"" << kLeft - 6 << "\" y=\"" << py + 4 << "\" text-anchor=\"end\">" << num(v)
       << "</text>\n";
  }
}

void legend(std::ostream& os, std::size_t i, const std::string& name) {
  const double y = kTop + 10 + 20 * double(i);
  os << "<rect x=\"" << kW - kRight + 15 << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"12\" fill=\""
     << kColors[i % 6] << "\"/><text x=\"" << kW - kRight + 32 << "\" y=\"" << y + 2 << "\">" << esc(name)
     << "</text>\n";
}

std::ofstream open(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  return os;
}

}  // namespace

void write_line_svg(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<LineSeries>& series) {
  Range xr, yr;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      xr.add(s.x.at(i));
      const double e = i < s.err.size() && std::isfinite(s.err[i]) ? s.err[i] : 0;
      yr.add(s.y[i] - e);
      yr.add(s.y[i] + e);
    }
  xr.pad();
  yr.pad();
  auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * (kW - kLeft - kRight); };
  auto py = [&](double y) { return kH - kBottom - (y - yr.lo) / (yr.hi - yr.lo) * (kH - kTop - kBottom); };

  auto os = open(path);
  frame(os, title, x_label, y_label, yr);
  if (!series.empty())
    for (double x : series.front().x)
      os << "<text x=\"" << px(x) << "\" y=\"" << kH - kBottom + 16 << "\" text-anchor=\"middle\">" << num(x)
         << "</text>\n";
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kColors[si % 6];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.y.size(); ++i) os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    os << "\"/>\n";
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3.5\" fill=\"" << color << "\"/>\n";
      if (i < s.err.size() && s.err[i] > 0)
        os << "<line x1=\"" << px(s.x[i]) << "\" y1=\"" << py(s.y[i] - s.err[i]) << "\" x2=\"" << px(s.x[i])
           << "\" y2=\"" << py(s.y[i] + s.err[i]) << "\" stroke=\"" << color << "\"/>\n";
    }
    legend(os, si, s.name);
  }
  os << "</svg>\n";
}

void write_bar_svg(const std::filesystem::path& path, const std::string& title, const std::vector<std::string>& categories,
                   const std::string& y_label, const std::vector<BarSeries>& series) {
  Range yr;
  yr.add(0);
  for (const auto& s : series)
    for (double v : s.values) yr.add(v);
  yr.pad();
  auto py = [&](double y) { return kH - kBottom - (y - yr.lo) / (yr.hi - yr.lo) * (kH - kTop - kBottom); };

  auto os = open(path);
  frame(os, title, "train-split occurrences", y_label, yr);
  const double group = (kW - kLeft - kRight) / double(std::max<std::size_t>(1, categories.size()));
  const double bar = group * 0.8 / double(std::max<std::size_t>(1, series.size()));
  for (std::size_t c = 0; c < categories.size(); ++c)
    os << "<text x=\"" << kLeft + group * (double(c) + 0.5) << "\" y=\"" << kH - kBottom + 16
       << "\" text-anchor=\"middle\">" << esc(categories[c]) << "</text>\n";
  for (std::size_t si = 0; si < series.size(); ++si) {
    for (std::size_t c = 0; c < categories.size() && c < series[si].values.size(); ++c) {
      const double v = series[si].values[c];
      if (!std::isfinite(v)) continue;
      const double x = kLeft + group * double(c) + group * 0.1 + bar * double(si);
      const double y0 = py(std::max(v, 0.0)), y1 = py(std::min(v, 0.0));
      os << "<rect x=\"" << x << "\" y=\"" << y0 << "\" width=\"" << bar << "\" height=\"" << y1 - y0 << "\" fill=\""
         << kColors[si % 6] << "\"/>\n";
    }
    legend(os, si, series[si].name);
  }
  os << "</svg>\n";
}

}  // namespace retrodiff

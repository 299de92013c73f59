#include "amrpg/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace amrpg {

// --- CSV --------------------------------------------------------------------

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw std::runtime_error("CSV has no column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

double CsvTable::number(std::size_t row, std::size_t col) const {
  const std::string& cell = rows.at(row).at(col);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != cell.size()) {
    throw std::runtime_error("CSV cell '" + cell + "' in column '" + header.at(col) + "' is not a number");
  }
  return v;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ls(line);
  while (std::getline(ls, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream is(text);
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (first) {
      t.header = std::move(cells);
      first = false;
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw std::runtime_error("CSV row has " + std::to_string(cells.size()) + " cells, header has " +
                               std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("missing file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_csv(ss.str());
}

void write_text_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << content;
    if (!os) throw std::runtime_error("error writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// --- SVG drawing ------------------------------------------------------------

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 55;

const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Linear or log10 axis mapping a data range onto a pixel span.
struct Axis {
  double lo = 0, hi = 1;
  double p0 = 0, p1 = 1;
  bool log = false;

  double operator()(double v) const {
    double a = v, l = lo, h = hi;
    if (log) {
      a = std::log10(std::max(v, lo));
      l = std::log10(lo);
      h = std::log10(hi);
    }
    const double f = h > l ? (a - l) / (h - l) : 0.5;
    return p0 + f * (p1 - p0);
  }

  std::vector<double> ticks() const {
    std::vector<double> out;
    if (log) {
      for (double e = std::floor(std::log10(lo)); e <= std::ceil(std::log10(hi)); e += 1.0) {
        const double v = std::pow(10.0, e);
        if (v >= lo * (1 - 1e-12) && v <= hi * (1 + 1e-12)) out.push_back(v);
      }
      return out;
    }
    const double span = hi - lo;
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
      if (raw <= m * mag) {
        step = m * mag;
        break;
      }
    }
    for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * step; v += step) out.push_back(v);
    return out;
  }
};

Axis linear_axis(double lo, double hi, double p0, double p1) {
  if (!(hi > lo)) {
    const double pad = std::max(std::abs(lo) * 0.1, 0.5);
    lo -= pad;
    hi += pad;
  }
  return {lo, hi, p0, p1, false};
}

class Svg {
 public:
  Svg(double w, double h) {
    os_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 "
        << w << " " << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os_ << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  }
  void text(double x, double y, const std::string& s, const char* anchor = "middle", double rotate = 0,
            int size = 12) {
    os_ << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" text-anchor=\"" << anchor << "\" font-size=\"" << size
        << "\"";
    if (rotate != 0) os_ << " transform=\"rotate(" << rotate << " " << fmt(x) << " " << fmt(y) << ")\"";
    os_ << ">" << escape(s) << "</text>\n";
  }
  void line(double x0, double y0, double x1, double y1, const char* stroke = "black", double width = 1) {
    os_ << "<line x1=\"" << fmt(x0) << "\" y1=\"" << fmt(y0) << "\" x2=\"" << fmt(x1) << "\" y2=\"" << fmt(y1)
        << "\" stroke=\"" << stroke << "\" stroke-width=\"" << width << "\"/>\n";
  }
  void raw(const std::string& s) { os_ << s; }
  std::string finish() {
    os_ << "</svg>\n";
    return os_.str();
  }

 private:
  std::ostringstream os_;
};

void frame(Svg& svg, const Axis& x, const Axis& y, double top, double bottom, const std::string& xlabel,
           const std::string& ylabel, bool categorical_x = false) {
  svg.line(x.p0, bottom, x.p1, bottom);
  svg.line(x.p0, top, x.p0, bottom);
  for (double v : y.ticks()) {
    const double py = y(v);
    svg.line(x.p0 - 4, py, x.p0, py);
    svg.line(x.p0, py, x.p1, py, "#e0e0e0");
    svg.text(x.p0 - 6, py + 4, y.log ? "1e" + std::to_string(static_cast<int>(std::lround(std::log10(v)))) : tick_label(v),
             "end");
  }
  if (!categorical_x) {
    for (double v : x.ticks()) {
      const double px = x(v);
      svg.line(px, bottom, px, bottom + 4);
      svg.text(px, bottom + 17, tick_label(v));
    }
  }
  svg.text((x.p0 + x.p1) / 2, bottom + 35, xlabel);
  svg.text(16, (top + bottom) / 2, ylabel, "middle", -90);
}

}  // namespace

std::string training_curves_svg(const CsvTable& metrics) {
  if (metrics.rows.empty()) throw EmptyPlotError("metrics table has no rows");
  const std::size_t cs = metrics.column("seed"), ce = metrics.column("epoch"), cc = metrics.column("mean_cost"),
                    cr = metrics.column("retained_dims");
  // Series per seed, in order of first appearance.
  std::vector<std::string> seeds;
  std::map<std::string, std::vector<std::size_t>> rows_of;
  double emax = 0, cmin = INFINITY, cmax = -INFINITY, rmax = 0;
  for (std::size_t i = 0; i < metrics.rows.size(); ++i) {
    const std::string& s = metrics.rows[i][cs];
    if (!rows_of.count(s)) seeds.push_back(s);
    rows_of[s].push_back(i);
    emax = std::max(emax, metrics.number(i, ce));
    cmin = std::min(cmin, metrics.number(i, cc));
    cmax = std::max(cmax, metrics.number(i, cc));
    rmax = std::max(rmax, metrics.number(i, cr));
  }
  const double height = 620;
  Svg svg(kWidth, height);
  svg.text(kWidth / 2, 22, "Training curves", "middle", 0, 15);

  const double panel = (height - kTop - 2 * kBottom) / 2;
  struct Panel {
    std::size_t col;
    double top, bottom, lo, hi;
    const char* label;
  };
  const Panel panels[] = {{cc, kTop, kTop + panel, cmin, cmax, "mean episode cost"},
                          {cr, kTop + panel + kBottom, kTop + 2 * panel + kBottom, 0, std::max(rmax, 1.0),
                           "retained memory dims"}};
  const Axis x = linear_axis(0, std::max(emax, 1.0), kLeft, kWidth - kRight - 90);
  for (const auto& p : panels) {
    const Axis y = linear_axis(p.lo, p.hi, p.bottom, p.top);
    frame(svg, x, y, p.top, p.bottom, "epoch", p.label);
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      std::ostringstream pts;
      for (std::size_t i : rows_of[seeds[k]]) pts << fmt(x(metrics.number(i, ce))) << "," << fmt(y(metrics.number(i, p.col))) << " ";
      svg.raw("<polyline fill=\"none\" stroke=\"" + std::string(kPalette[k % 10]) +
              "\" stroke-width=\"1.2\" points=\"" + pts.str() + "\"/>\n");
    }
  }
  for (std::size_t k = 0; k < seeds.size() && k < 20; ++k) {
    const double ly = kTop + 14 * static_cast<double>(k);
    svg.line(kWidth - kRight - 80, ly, kWidth - kRight - 64, ly, kPalette[k % 10], 2);
    svg.text(kWidth - kRight - 60, ly + 4, "seed " + seeds[k], "start");
  }
  return svg.finish();
}

std::string saliency_bars_svg(const CsvTable& ranks, std::size_t top_k) {
  if (ranks.rows.empty()) throw EmptyPlotError("saliency table has no rows");
  const std::size_t cr = ranks.column("rank"), cm = ranks.column("mean"), cs = ranks.column("std");
  const std::size_t n = std::min(top_k, ranks.rows.size());
  double lo = INFINITY, hi = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double m = ranks.number(i, cm), s = ranks.number(i, cs);
    if (m > 0) lo = std::min(lo, m);
    if (m - s > 0) lo = std::min(lo, m - s);
    hi = std::max(hi, m + s);
  }
  if (!(hi > 0)) throw EmptyPlotError("all saliency values are zero");
  if (!std::isfinite(lo)) lo = hi * 1e-6;
  Axis y{std::pow(10.0, std::floor(std::log10(lo))), std::pow(10.0, std::ceil(std::log10(hi))), kHeight - kBottom, kTop,
         true};
  if (y.hi <= y.lo) y.hi = y.lo * 10;
  Axis x = linear_axis(0, static_cast<double>(n), kLeft, kWidth - kRight);

  Svg svg(kWidth, kHeight);
  svg.text(kWidth / 2, 22, "Top " + std::to_string(n) + " memory saliency values (mean +- std over seeds)", "middle",
           0, 15);
  frame(svg, x, y, kTop, kHeight - kBottom, "rank", "memory saliency", true);
  const double slot = (x.p1 - x.p0) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double m = ranks.number(i, cm), s = ranks.number(i, cs);
    const double left = x.p0 + slot * static_cast<double>(i) + slot * 0.15;
    const double top = y(std::max(m, y.lo));
    std::ostringstream r;
    r << "<rect x=\"" << fmt(left) << "\" y=\"" << fmt(top) << "\" width=\"" << fmt(slot * 0.7) << "\" height=\""
      << fmt(y.p0 - top) << "\" fill=\"#4c72b0\"><title>rank " << ranks.rows[i][cr] << ": mean "
      << ranks.rows[i][cm] << ", std " << ranks.rows[i][cs] << "</title></rect>\n";
    svg.raw(r.str());
    const double cx = left + slot * 0.35;
    const double e0 = y(std::max(m - s, y.lo)), e1 = y(std::max(m + s, y.lo));
    svg.line(cx, e0, cx, e1, "black", 1.2);
    svg.line(cx - 4, e0, cx + 4, e0);
    svg.line(cx - 4, e1, cx + 4, e1);
    svg.text(cx, kHeight - kBottom + 17, ranks.rows[i][cr]);
  }
  return svg.finish();
}

std::string state_histogram_svg(const CsvTable& histogram) {
  if (histogram.rows.empty()) throw EmptyPlotError("state histogram has no rows");
  const std::size_t cs = histogram.column("states"), cn = histogram.column("seeds");
  double ymax = 0;
  for (std::size_t i = 0; i < histogram.rows.size(); ++i) ymax = std::max(ymax, histogram.number(i, cn));
  const std::size_t n = histogram.rows.size();
  const Axis x = linear_axis(0, static_cast<double>(n), kLeft, kWidth - kRight);
  const Axis y = linear_axis(0, std::max(ymax, 1.0), kHeight - kBottom, kTop);
  Svg svg(kWidth, kHeight);
  svg.text(kWidth / 2, 22, "Number of memory states needed", "middle", 0, 15);
  frame(svg, x, y, kTop, kHeight - kBottom, "memory states", "seeds", true);
  const double slot = (x.p1 - x.p0) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = histogram.number(i, cn);
    const double left = x.p0 + slot * static_cast<double>(i) + slot * 0.15;
    std::ostringstream r;
    r << "<rect x=\"" << fmt(left) << "\" y=\"" << fmt(y(v)) << "\" width=\"" << fmt(slot * 0.7) << "\" height=\""
      << fmt(y.p0 - y(v)) << "\" fill=\"#55a868\"><title>" << histogram.rows[i][cs] << " states: "
      << histogram.rows[i][cn] << " seeds</title></rect>\n";
    svg.raw(r.str());
    svg.text(left + slot * 0.35, kHeight - kBottom + 17, histogram.rows[i][cs]);
  }
  return svg.finish();
}

}  // namespace amrpg

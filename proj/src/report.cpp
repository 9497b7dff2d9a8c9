#include "ccm/report.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "ccm/byte_io.hpp"
#include "ccm/error.hpp"

namespace ccm {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), r.ptr);
}

double parse_number(const std::string& text) {
  if (text == "nan" || text.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size()) {
    throw InvalidArgument("not a number: '" + text + "'");
  }
  return v;
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

void CsvTable::add_row(std::vector<std::string> row) {
  if (row.size() != header_.size()) {
    throw InvalidArgument("csv row has " + std::to_string(row.size()) + " cells, header has " +
                          std::to_string(header_.size()));
  }
  rows_.push_back(std::move(row));
}

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header_.begin(), header_.end(), name);
  if (it == header_.end()) throw InvalidArgument("csv has no column '" + name + "'");
  return static_cast<std::size_t>(it - header_.begin());
}

const std::string& CsvTable::cell(std::size_t row, const std::string& name) const {
  return rows_.at(row).at(column(name));
}

double CsvTable::number(std::size_t row, const std::string& name) const {
  return parse_number(cell(row, name));
}

namespace {

std::string quote(const std::string& cell) {
  if (cell.find_first_of(",\"\n\r") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void append_line(std::string& out, const std::vector<std::string>& cells) {
  for (std::size_t k = 0; k < cells.size(); ++k) {
    if (k) out += ',';
    out += quote(cells[k]);
  }
  out += '\n';
}

}  // namespace

std::string CsvTable::text() const {
  std::string out;
  append_line(out, header_);
  for (const auto& r : rows_) append_line(out, r);
  return out;
}

CsvTable CsvTable::parse(const std::string& text) {
  std::vector<std::vector<std::string>> lines;
  std::vector<std::string> row;
  std::string cell;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
      continue;
    }
    any = true;
    if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(cell));
      cell.clear();
    } else if (c == '\n') {
      row.push_back(std::move(cell));
      cell.clear();
      lines.push_back(std::move(row));
      row.clear();
      any = false;
    } else if (c != '\r') {
      cell += c;
    }
  }
  if (quoted) throw InvalidArgument("csv ends inside a quoted cell");
  if (any || !cell.empty() || !row.empty()) {
    row.push_back(std::move(cell));
    lines.push_back(std::move(row));
  }
  if (lines.empty()) throw InvalidArgument("csv has no header");
  CsvTable t(lines.front());
  for (std::size_t k = 1; k < lines.size(); ++k) t.add_row(std::move(lines[k]));
  return t;
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, table.text());
}

CsvTable read_csv(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifact("missing csv " + path.string());
  try {
    return CsvTable::parse(read_file_bytes(path));
  } catch (const InvalidArgument& e) {
    throw CorruptCheckpoint(path.string() + ": " + e.what());
  }
}

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 460.0;
constexpr double kLeft = 80.0;
constexpr double kRight = 190.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;

const std::array<const char*, 10> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

struct Range {
  double lo = 0.0;
  double hi = 1.0;
};

Range padded(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {0.0, 1.0};
  if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) {
    const double pad = std::max(1e-3, std::abs(hi) * 0.1);
    return {lo - pad, hi + pad};
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

std::vector<double> ticks(Range r, int target = 6) {
  const double span = r.hi - r.lo;
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  }
  std::vector<double> out;
  for (double t = std::ceil(r.lo / step) * step; t <= r.hi + 1e-9 * step; t += step) {
    out.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
  }
  return out;
}

std::string svg_open(const std::string& title) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) +
                  "\" height=\"" + num(kHeight) + "\" viewBox=\"0 0 " + num(kWidth) + " " +
                  num(kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
       escape(title) + "</text>\n";
  return s;
}

}  // namespace

std::string render_line_plot(const LinePlot& plot) {
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
  double ylo = xlo, yhi = -xlo;
  for (const auto& s : plot.series) {
    if (s.x.size() != s.y.size()) throw InvalidArgument("plot series '" + s.label + "' x/y lengths differ");
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
      xlo = std::min(xlo, s.x[k]);
      xhi = std::max(xhi, s.x[k]);
      ylo = std::min(ylo, s.y[k]);
      yhi = std::max(yhi, s.y[k]);
    }
  }
  const Range xr = padded(xlo, xhi);
  const Range yr = padded(ylo, yhi);
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  const auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  const auto py = [&](double y) { return kTop + ph - (y - yr.lo) / (yr.hi - yr.lo) * ph; };

  std::string s = svg_open(plot.title);
  s += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" + num(pw) + "\" height=\"" +
       num(ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double t : ticks(xr)) {
    s += "<line x1=\"" + num(px(t)) + "\" y1=\"" + num(kTop + ph) + "\" x2=\"" + num(px(t)) +
         "\" y2=\"" + num(kTop + ph + 5) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + num(px(t)) + "\" y=\"" + num(kTop + ph + 18) + "\" text-anchor=\"middle\">" +
         num(t) + "</text>\n";
  }
  for (double t : ticks(yr)) {
    s += "<line x1=\"" + num(kLeft - 5) + "\" y1=\"" + num(py(t)) + "\" x2=\"" + num(kLeft) +
         "\" y2=\"" + num(py(t)) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + num(kLeft - 8) + "\" y=\"" + num(py(t) + 4) + "\" text-anchor=\"end\">" +
         num(t) + "</text>\n";
  }
  s += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"" + num(kHeight - 15) +
       "\" text-anchor=\"middle\">" + escape(plot.x_label) + "</text>\n";
  s += "<text x=\"18\" y=\"" + num(kTop + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
       num(kTop + ph / 2) + ")\">" + escape(plot.y_label) + "</text>\n";

  for (std::size_t i = 0; i < plot.series.size(); ++i) {
    const auto& ser = plot.series[i];
    const std::string color = kPalette[i % kPalette.size()];
    std::string pts;
    for (std::size_t k = 0; k < ser.x.size(); ++k) {
      if (!std::isfinite(ser.x[k]) || !std::isfinite(ser.y[k])) continue;
      pts += num(px(ser.x[k])) + "," + num(py(ser.y[k])) + " ";
    }
    if (ser.lines && !pts.empty()) {
      s += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\"" +
           (ser.dashed ? " stroke-dasharray=\"5,4\"" : "") + " points=\"" + pts + "\"/>\n";
    }
    if (ser.markers) {
      for (std::size_t k = 0; k < ser.x.size(); ++k) {
        if (!std::isfinite(ser.x[k]) || !std::isfinite(ser.y[k])) continue;
        s += "<circle cx=\"" + num(px(ser.x[k])) + "\" cy=\"" + num(py(ser.y[k])) +
             "\" r=\"3\" fill=\"" + color + "\"/>\n";
      }
    }
    const double ly = kTop + 12 + 16.0 * static_cast<double>(i);
    const double lx = kLeft + pw + 12;
    s += "<line x1=\"" + num(lx) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" + num(lx + 18) + "\" y2=\"" +
         num(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + num(lx + 24) + "\" y=\"" + num(ly) + "\">" + escape(ser.label) + "</text>\n";
  }
  return s + "</svg>\n";
}

std::string render_bar_plot(const BarPlot& plot) {
  if (plot.labels.size() != plot.values.size()) throw InvalidArgument("bar labels and values differ in length");
  double hi = 0.0;
  for (double v : plot.values) {
    if (std::isfinite(v)) hi = std::max(hi, v);
  }
  if (hi <= 0.0) hi = 1.0;
  const Range yr{0.0, hi * 1.08};
  const double right = 20.0;
  const double bottom = 120.0;
  const double pw = kWidth - kLeft - right;
  const double ph = kHeight - kTop - bottom;
  const auto py = [&](double y) { return kTop + ph - (y - yr.lo) / (yr.hi - yr.lo) * ph; };

  std::string s = svg_open(plot.title);
  s += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" + num(pw) + "\" height=\"" +
       num(ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double t : ticks(yr)) {
    s += "<line x1=\"" + num(kLeft - 5) + "\" y1=\"" + num(py(t)) + "\" x2=\"" + num(kLeft) +
         "\" y2=\"" + num(py(t)) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + num(kLeft - 8) + "\" y=\"" + num(py(t) + 4) + "\" text-anchor=\"end\">" +
         num(t) + "</text>\n";
  }
  s += "<text x=\"18\" y=\"" + num(kTop + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
       num(kTop + ph / 2) + ")\">" + escape(plot.y_label) + "</text>\n";
  const std::size_t n = plot.values.size();
  const double slot = n ? pw / static_cast<double>(n) : pw;
  for (std::size_t k = 0; k < n; ++k) {
    const double v = plot.values[k];
    const double x = kLeft + slot * static_cast<double>(k);
    if (std::isfinite(v)) {
      s += "<rect x=\"" + num(x + 0.15 * slot) + "\" y=\"" + num(py(v)) + "\" width=\"" +
           num(0.7 * slot) + "\" height=\"" + num(kTop + ph - py(v)) + "\" fill=\"" +
           kPalette[k % kPalette.size()] + "\"/>\n";
    }
    const double cx = x + 0.5 * slot;
    const double cy = kTop + ph + 10;
    s += "<text x=\"" + num(cx) + "\" y=\"" + num(cy) + "\" text-anchor=\"end\" transform=\"rotate(-45 " +
         num(cx) + " " + num(cy) + ")\">" + escape(plot.labels[k]) + "</text>\n";
  }
  return s + "</svg>\n";
}

}  // namespace ccm

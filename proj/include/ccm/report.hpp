#pragma once

// CSV tables and static SVG plots for the pipeline reports.

#include <filesystem>
#include <string>
#include <vector>

namespace ccm {

// Shortest text that parses back to the same double; "nan", "inf", "-inf"
// for non-finite values.
std::string format_number(double v);
double parse_number(const std::string& text);

class CsvTable {
 public:
  CsvTable() = default;
  explicit CsvTable(std::vector<std::string> header);

  const std::vector<std::string>& header() const noexcept { return header_; }
  const std::vector<std::vector<std::string>>& rows() const noexcept { return rows_; }
  std::size_t size() const noexcept { return rows_.size(); }

  // Throws InvalidArgument if the width differs from the header.
  void add_row(std::vector<std::string> row);
  // Column index by name; throws InvalidArgument if absent.
  std::size_t column(const std::string& name) const;
  const std::string& cell(std::size_t row, const std::string& name) const;
  double number(std::size_t row, const std::string& name) const;

  // RFC-4180 style: cells containing ',', '"' or newlines are quoted.
  std::string text() const;
  static CsvTable parse(const std::string& text);

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool lines = true;    // polyline through the points
  bool markers = true;  // circle per point
  bool dashed = false;
};

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
};

// Axes, ticks, legend, one polyline/marker set per series. Non-finite points
// are skipped.
std::string render_line_plot(const LinePlot& plot);

struct BarPlot {
  std::string title;
  std::string y_label;
  std::vector<std::string> labels;
  std::vector<double> values;
};

std::string render_bar_plot(const BarPlot& plot);

}  // namespace ccm

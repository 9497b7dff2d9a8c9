#include <cmath>
#include <filesystem>
#include <limits>
#include <string>

#include "ccm/error.hpp"
#include "ccm/pipeline.hpp"
#include "ccm/report.hpp"
#include "ccm/rng.hpp"
#include "doctest.h"

using namespace ccm;

namespace {

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = text.find(needle); p != std::string::npos; p = text.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("number formatting round-trips") {
  Rng rng(5);
  for (int k = 0; k < 500; ++k) {
    const double v = rng.normal() * std::pow(10.0, rng.uniform(-30.0, 30.0));
    CHECK(parse_number(format_number(v)) == v);
  }
  CHECK(format_number(0.25) == "0.25");
  CHECK(format_number(-1.5) == "-1.5");
  CHECK(format_number(std::nan("")) == "nan");
  CHECK(std::isnan(parse_number("nan")));
  CHECK(parse_number(format_number(-std::numeric_limits<double>::infinity())) ==
        -std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(parse_number("1.0x"), InvalidArgument);
}

TEST_CASE("csv quoting and parse round trip") {
  CsvTable t({"name", "value", "note"});
  t.add_row({"a", "1", "plain"});
  t.add_row({"b,c", "2", "has \"quotes\""});
  t.add_row({"d", "3", "two\nlines"});
  const auto back = CsvTable::parse(t.text());
  CHECK(back.header() == t.header());
  CHECK(back.rows() == t.rows());
  CHECK(back.cell(1, "name") == "b,c");
  CHECK(back.number(2, "value") == 3.0);
  CHECK_THROWS_AS(t.add_row({"short"}), InvalidArgument);
  CHECK_THROWS_AS(t.column("missing"), InvalidArgument);
}

TEST_CASE("empty table keeps its header") {
  const CsvTable t({"method", "value"});
  CHECK(t.text() == "method,value\n");
  const auto back = CsvTable::parse(t.text());
  CHECK(back.size() == 0);
  CHECK(back.header().size() == 2);

  const auto dir = std::filesystem::temp_directory_path() / "ccm_report_empty";
  std::filesystem::remove_all(dir);
  write_csv(dir / "nested" / "t.csv", t);
  CHECK(read_csv(dir / "nested" / "t.csv").header() == t.header());
  CHECK_THROWS_AS(read_csv(dir / "absent.csv"), MissingArtifact);
  std::filesystem::remove_all(dir);
}

TEST_CASE("line plot emits one marker per finite point") {
  PlotSeries a{"a", {0, 1, 2, 3}, {1, 2, 3, 4}};
  PlotSeries b{"b", {0, 1, 2}, {1, std::nan(""), 0}, true, true, true};
  PlotSeries c{"c", {0, 1}, {0, 1}, true, false};
  const auto svg = render_line_plot({"t <&>", "x", "y", {a, b, c}});
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(count(svg, "<circle") == 6);
  CHECK(count(svg, "<polyline") == 3);
  CHECK(count(svg, "stroke-dasharray") == 1);
  CHECK(svg.find("t &lt;&amp;&gt;") != std::string::npos);

  const auto bars = render_bar_plot({"bars", "v", {"p", "q", "r"}, {1.0, 2.0, std::nan("")}});
  CHECK(count(bars, "<rect") >= 3);
  CHECK_THROWS_AS(render_bar_plot({"bars", "v", {"p"}, {}}), InvalidArgument);
}

TEST_CASE("main table gains recompute from the raw rows") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    CsvTable regimes({"regime", "lambda", "s", "role", "group", "samples"});
    const int nreg = 2 + static_cast<int>(rng.uniform(0.0, 4.0));
    std::vector<std::string> roles;
    for (int r = 0; r < nreg; ++r) {
      const std::string role = r == 0 ? "ood-low" : r == 1 ? "interpolation" : (rng.uniform() < 0.5 ? "ood-high" : "interpolation");
      roles.push_back(role);
      regimes.add_row({"r" + std::to_string(r), "0", "0", role, "g", "1"});
    }
    const std::vector<std::string> methods{"base", "endpoint-average", "ccm-coord"};
    CsvTable results({"family", "regime", "method", "metric", "value"});
    std::map<std::string, std::vector<double>> ood, interp;
    for (const auto& m : methods) {
      for (int r = 0; r < nreg; ++r) {
        const double v = rng.uniform(0.1, 2.0);
        results.add_row({"f", "r" + std::to_string(r), m, "future_l2", format_number(v)});
        results.add_row({"f", "r" + std::to_string(r), m, "full_l2", "99"});
        (roles[static_cast<std::size_t>(r)].rfind("ood", 0) == 0 ? ood : interp)[m].push_back(v);
      }
    }
    const auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    const auto table = build_main_table(results, regimes);
    REQUIRE(table.size() == methods.size());
    for (std::size_t r = 0; r < table.size(); ++r) {
      const auto& m = table.cell(r, "method");
      CHECK(m == methods[r]);
      const double o = mean(ood[m]);
      CHECK(table.number(r, "ood_mean") == o);
      CHECK(table.number(r, "interp_mean") == mean(interp[m]));
      CHECK(table.number(r, "ood_worst") == *std::max_element(ood[m].begin(), ood[m].end()));
      const double base = mean(ood["base"]);
      const double avg = mean(ood["endpoint-average"]);
      CHECK(table.number(r, "gain_vs_base_ood") == doctest::Approx((base - o) / base).epsilon(1e-14));
      CHECK(table.number(r, "gain_vs_average_ood") == doctest::Approx((avg - o) / avg).epsilon(1e-14));
    }
  }
}

TEST_CASE("main table of empty results is a header") {
  const CsvTable results({"family", "regime", "method", "metric", "value"});
  const CsvTable regimes({"regime", "lambda", "s", "role", "group", "samples"});
  const auto t = build_main_table(results, regimes);
  CHECK(t.size() == 0);
  CHECK(t.header().front() == "method");
}

TEST_CASE("coordinate law has one row per regime with the sweep argmin") {
  CsvTable sweep({"regime", "split", "group", "s", "alpha", "full_l2", "calibration_l2", "future_l2"});
  CsvTable regimes({"regime", "lambda", "s", "role", "group", "samples"});
  const std::vector<double> s_values{-2.0, -0.5, 0.75, 2.5};
  for (std::size_t r = 0; r < s_values.size(); ++r) {
    const std::string name = "r" + std::to_string(r);
    regimes.add_row({name, "0", format_number(s_values[r]), "ood-low", "g", "1"});
    for (int k = 0; k <= 12; ++k) {
      const double a = -1.5 + 0.25 * k;
      const double target = std::clamp(s_values[r], -1.5, 1.5);
      sweep.add_row({name, "eval", "g", format_number(s_values[r]), format_number(a), "0", "0",
                     format_number((a - target) * (a - target) + 0.1)});
    }
  }
  const auto law = build_coordinate_law(sweep, regimes, -1.5, 1.5);
  REQUIRE(law.size() == s_values.size());
  CHECK(law.number(0, "oracle_alpha") == -1.5);
  CHECK(law.number(1, "oracle_alpha") == -0.5);
  CHECK(law.number(2, "oracle_alpha") == 0.75);
  CHECK(law.number(3, "oracle_alpha") == 1.5);
  CHECK(law.number(3, "coord_alpha") == 1.5);
  CHECK(law.number(1, "oracle_future_l2") == doctest::Approx(0.1));
}

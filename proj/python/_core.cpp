#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>

#include "ccm/ccm_select.hpp"
#include "ccm/error.hpp"
#include "ccm/eval_metrics.hpp"
#include "ccm/merge_engine.hpp"
#include "ccm/pipeline.hpp"
#include "ccm/theory_checks.hpp"

namespace py = pybind11;

namespace {

ccm::ExperimentConfig configured(const std::filesystem::path& path, std::optional<std::uint64_t> seed) {
  auto cfg = ccm::load_config(path);
  if (seed) cfg.seed = *seed;
  return cfg;
}

py::dict stage_dict(const ccm::StageResult& r) {
  py::list checks;
  for (const auto& c : r.checks) {
    py::dict d;
    d["name"] = c.name;
    d["passed"] = c.passed;
    d["detail"] = c.detail;
    checks.append(d);
  }
  py::dict d;
  d["stage"] = ccm::to_string(r.stage);
  d["outputs"] = r.outputs;
  d["checks"] = checks;
  d["ok"] = r.ok();
  d["wall_time_s"] = r.wall_time_s;
  return d;
}

// Points on the coordinate line for flat parameter vectors.
std::vector<std::vector<double>> line_points(const std::vector<double>& anchor, const std::vector<double>& low,
                                             const std::vector<double>& high, const std::vector<double>& alphas) {
  if (low.size() != anchor.size() || high.size() != anchor.size()) {
    throw ccm::InvalidArgument("anchor, low and high must have equal length");
  }
  const auto make = [&](const std::vector<double>& v, ccm::CheckpointRole role, const ccm::Checkpoint* parent) {
    ccm::Checkpoint c;
    ccm::Tensor t({static_cast<int>(v.size())});
    t.data = v;
    c.weights.emplace("w", std::move(t));
    c.normalizer = ccm::identity_normalizer(1);
    c.lineage.role = role;
    if (parent) {
      c.lineage.parent_hash = ccm::content_hash(*parent);
      c.lineage.anchor_hash = ccm::anchor_of(*parent);
    }
    return c;
  };
  const auto a = make(anchor, ccm::CheckpointRole::anchor, nullptr);
  double lo = -1.0, hi = 1.0;
  for (double x : alphas) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  const ccm::CoordinateLine line(ccm::decompose(a, make(low, ccm::CheckpointRole::endpoint_low, &a),
                                                make(high, ccm::CheckpointRole::endpoint_high, &a)),
                                 lo, hi);
  std::vector<std::vector<double>> out;
  for (double x : alphas) out.push_back(ccm::compose_at(line, x).weights.at("w").data);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Coordinate-conditioned merging lab: pipeline stages and selector helpers";

  py::register_exception<ccm::MissingArtifact>(m, "MissingArtifact");
  py::register_exception<ccm::DigestMismatch>(m, "DigestMismatch");
  py::register_exception<ccm::InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);

  m.def("stages", [] {
    std::vector<std::string> names;
    for (auto s : ccm::pipeline_stages()) names.push_back(ccm::to_string(s));
    return names;
  });
  m.def("config_digest", [](const std::filesystem::path& p) { return ccm::config_digest(ccm::load_config(p)); },
        py::arg("config"));
  m.def(
      "run_stage",
      [](const std::filesystem::path& config, const std::string& stage, const std::filesystem::path& out, int jobs,
         std::optional<std::uint64_t> seed) {
        const auto cfg = configured(config, seed);
        const auto which = ccm::stage_from_string(stage);
        ccm::StageResult r;
        {
          py::gil_scoped_release release;
          r = ccm::run_stage(cfg, which, {out, jobs});
        }
        return stage_dict(r);
      },
      py::arg("config"), py::arg("stage"), py::arg("out"), py::arg("jobs") = 1, py::arg("seed") = py::none());
  m.def(
      "run_pipeline",
      [](const std::filesystem::path& config, const std::filesystem::path& out, int jobs,
         std::optional<std::uint64_t> seed) {
        const auto cfg = configured(config, seed);
        std::vector<ccm::StageResult> results;
        {
          py::gil_scoped_release release;
          results = ccm::run_pipeline(cfg, {out, jobs});
        }
        py::list l;
        for (const auto& r : results) l.append(stage_dict(r));
        return l;
      },
      py::arg("config"), py::arg("out"), py::arg("jobs") = 1, py::arg("seed") = py::none());
  m.def(
      "verify",
      [](const std::filesystem::path& out) {
        const auto v = ccm::verify_run(out);
        return py::make_tuple(v.ok, v.lines);
      },
      py::arg("out"), "Recheck every recorded digest; returns (ok, lines).");

  m.def("line_points", &line_points, py::arg("anchor"), py::arg("low"), py::arg("high"), py::arg("alphas"),
        "theta(alpha) for flat parameter vectors; alpha = -1 and +1 return the experts exactly.");
  m.def("default_bank", [] { return ccm::default_bank().values; });
  m.def("select_coord", &ccm::select_coord, py::arg("s"), py::arg("lo") = -1.5, py::arg("hi") = 1.5);
  m.def("select_scale", &ccm::select_scale, py::arg("s"), py::arg("gamma"), py::arg("lo") = -1.5,
        py::arg("hi") = 1.5);
  m.def("wrong_sign", &ccm::wrong_sign, py::arg("s"), py::arg("lo") = -1.5, py::arg("hi") = 1.5);
  m.def("argmin_alpha", &ccm::argmin_alpha, py::arg("alphas"), py::arg("losses"));
  m.def(
      "split_protocol",
      [](int frames, int prefix) {
        const auto p = ccm::split_protocol(frames, prefix);
        return py::make_tuple(p.calibration.indices, p.future.indices);
      },
      py::arg("frames"), py::arg("prefix"));
  m.def("continuation_bound", &ccm::continuation_bound, py::arg("eps_minus"), py::arg("eps_plus"), py::arg("k_e"),
        py::arg("alpha"));
}

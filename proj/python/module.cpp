#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tdom/config.hpp"
#include "tdom/harness.hpp"
#include "tdom/simenv.hpp"

namespace py = pybind11;
using namespace tdom;

namespace {

py::dict oracle_dict(const cfg::RunConfig& c, const std::string& scenario,
                     uint64_t seed) {
  sim::StackState s = sim::reset(c, scenario, seed);
  sim::OracleResult best = sim::oracle_best(c, s);
  PhysicalAction act =
      decode_action(grid_for(best.outer.selection), best.inner);
  py::dict d;
  d["selection"] =
      best.outer.selection == Granularity::Fine ? "fine" : "coarse";
  d["x_mm"] = act.x_mm;
  d["z_mm"] = act.z_mm;
  d["theta_deg"] = act.theta_deg;
  d["p"] = best.p;
  return d;
}

}  // namespace

PYBIND11_MODULE(_tdom, m) {
  m.doc() = "layered-stack singulation workbench bindings";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<RuntimeFailure>(m, "RuntimeFailure");

  py::class_<cfg::RunConfig>(m, "RunConfig")
      .def_readwrite("seed", &cfg::RunConfig::seed)
      .def_readwrite("episodes", &cfg::RunConfig::episodes)
      .def_readwrite("eval_episodes", &cfg::RunConfig::eval_episodes)
      .def_readwrite("scenarios", &cfg::RunConfig::scenarios)
      .def_property(
          "mode",
          [](const cfg::RunConfig& c) { return fusion::mode_name(c.mode); },
          [](cfg::RunConfig& c, const std::string& s) {
            c.mode = fusion::mode_from_name(s);
          })
      .def("__repr__", [](const cfg::RunConfig& c) {
        return "<RunConfig " + cfg::config_hash(c) + ">";
      });

  m.def("default_config", &cfg::default_config);
  m.def("load_config", &cfg::load_config, py::arg("path"));
  m.def("parse_config", &cfg::parse_config, py::arg("text"),
        py::arg("origin") = "<string>");
  m.def("dump_config", &cfg::dump_config);
  m.def("config_hash", &cfg::config_hash);

  m.def("contact_force",
        [](const cfg::RunConfig& c, double d_mm) {
          return sim::contact_force(c.sim, d_mm);
        },
        py::arg("config"), py::arg("d_mm"));

  m.def("oracle_best", &oracle_dict, py::arg("config"), py::arg("scenario"),
        py::arg("seed") = 1);

  m.def("evaluate_oracle",
        [](const cfg::RunConfig& c, const std::string& scenario,
           int episodes, uint64_t seed) {
          grad::ParamStore<float> no_slip;
          agent::Agent dummy(fusion::Mode::NT, 1);
          harness::EvalResult r = harness::evaluate(
              c, dummy, no_slip, scenario, episodes, seed, true);
          py::dict d;
          d["episodes"] = r.episodes;
          d["successes"] = r.successes;
          d["rate"] = r.rate;
          d["ci"] = py::make_tuple(r.ci_lo, r.ci_hi);
          d["oracle_p"] = r.mean_oracle_p;
          return d;
        },
        py::arg("config"), py::arg("scenario"), py::arg("episodes") = 100,
        py::arg("seed") = 1);

  m.def("heatmap",
        [](const cfg::RunConfig& c, const std::string& scenario, int trials,
           uint64_t seed) {
          sim::StackState s = sim::reset(c, scenario, seed);
          sim::OracleResult best = sim::oracle_best(c, s);
          PhysicalAction act =
              decode_action(grid_for(best.outer.selection), best.inner);
          harness::Heatmap h =
              harness::heatmap_experiment(c, scenario, act, trials, seed);
          std::vector<std::vector<double>> grid(6, std::vector<double>(6));
          for (int ia = 0; ia < 6; ++ia)
            for (int ib = 0; ib < 6; ++ib) grid[ia][ib] = h.at(ia, ib);
          return grid;
        },
        py::arg("config"), py::arg("scenario"), py::arg("trials") = 100,
        py::arg("seed") = 9);

  m.def("compliance",
        [](const cfg::RunConfig& c, const std::string& scenario) {
          harness::ComplianceResult r =
              harness::compliance_experiment(c, scenario);
          py::dict d;
          d["band_lo"] = r.band_lo;
          d["band_hi"] = r.band_hi;
          d["tolerated_mm"] = r.tolerated_mm;
          d["overshoot_mm"] = r.overshoot_mm;
          d["force_n"] = r.force_n;
          return d;
        },
        py::arg("config"), py::arg("scenario"));
}

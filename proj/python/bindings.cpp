#include <cstdlib>
#include <string>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <spdlog/spdlog.h>

#include "swarmstage/behavior.hpp"
#include "swarmstage/error.hpp"
#include "swarmstage/graycode.hpp"
#include "swarmstage/kinematics.hpp"
#include "swarmstage/simulation.hpp"
#include "swarmstage/uwb.hpp"

namespace py = pybind11;
using namespace swarmstage;

namespace {

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

TraceSource source_from(const std::string& name) {
  for (auto s : {TraceSource::Truth, TraceSource::UwbRaw, TraceSource::Fused}) {
    if (to_string(s) == name) return s;
  }
  throw Error(Errc::InvalidInput, "unknown trajectory source '" + name + "'");
}

py::dict trajectories(const RunTrace& trace, const std::string& source) {
  const auto want = source_from(source);
  std::vector<double> t, x, y, z, yaw;
  std::vector<std::uint16_t> id;
  for (const auto& r : trace.trajectories) {
    if (r.source != want) continue;
    t.push_back(r.t);
    id.push_back(r.id);
    x.push_back(r.x);
    y.push_back(r.y);
    z.push_back(r.z);
    yaw.push_back(r.yaw);
  }
  py::dict out;
  out["t"] = py::array_t<double>(t.size(), t.data());
  out["id"] = py::array_t<std::uint16_t>(id.size(), id.data());
  out["x"] = py::array_t<double>(x.size(), x.data());
  out["y"] = py::array_t<double>(y.size(), y.data());
  out["z"] = py::array_t<double>(z.size(), z.data());
  out["yaw"] = py::array_t<double>(yaw.size(), yaw.data());
  return out;
}

py::dict robot_dict(const RobotSnapshot& r) {
  py::dict d;
  d["id"] = r.id;
  d["class"] = std::string(to_string(r.kind));
  d["mode"] = std::string(to_string(r.mode));
  d["truth"] = py::make_tuple(r.truth.x, r.truth.y, r.truth.z, r.truth.yaw);
  d["fused"] = py::make_tuple(r.fused.x, r.fused.y, r.fused.z, r.fused.yaw);
  d["program"] = r.program;
  d["phase"] = r.phase;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "swarmstage simulator core";

  spdlog::set_level(spdlog::level::warn);
  if (const char* lvl = std::getenv("SWARMSTAGE_LOG")) spdlog::set_level(spdlog::level::from_str(lvl));

  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object inst = py::handle(error.ptr())(e.what());
      inst.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(error.ptr(), inst.ptr());
    }
  });

  py::class_<PerformanceScript>(m, "Script")
      .def_static(
          "from_json",
          [](const std::string& text, const std::string& base_dir) {
            nlohmann::json doc;
            try {
              doc = nlohmann::json::parse(text);
            } catch (const nlohmann::json::parse_error& e) {
              throw Error(Errc::ConfigInvalid, std::string("invalid JSON: ") + e.what());
            }
            return script_from_json(doc, base_dir);
          },
          py::arg("text"), py::arg("base_dir") = ".")
      .def_readwrite("name", &PerformanceScript::name)
      .def_readwrite("duration", &PerformanceScript::duration)
      .def_property(
          "seed", [](const PerformanceScript& s) { return s.seed; },
          [](PerformanceScript& s, std::uint64_t seed) {
            s.seed = seed;
            s.net.seed = seed;
          })
      .def_property_readonly("node_count", &PerformanceScript::node_count)
      .def("to_dict", [](const PerformanceScript& s) { return to_py(script_to_json(s)); })
      .def("__repr__", [](const PerformanceScript& s) {
        return "<Script '" + s.name + "' " + std::to_string(s.node_count()) + " nodes>";
      });

  py::class_<RunTrace>(m, "Trace")
      .def_readonly("seed", &RunTrace::seed)
      .def_readonly("duration", &RunTrace::duration)
      .def_readonly("dt", &RunTrace::dt)
      .def("write", [](const RunTrace& t, const std::string& dir) { write_trace(t, dir); }, py::arg("dir"))
      .def("trajectories", &trajectories, py::arg("source") = "truth",
           "Columns t, id, x, y, z, yaw for one source: truth, uwb_raw or fused.")
      .def("bandwidth",
           [](const RunTrace& t) {
             std::vector<double> ts, total, gossip, transfer;
             for (const auto& b : t.bandwidth) {
               ts.push_back(b.t);
               total.push_back(b.bytes_per_s);
               gossip.push_back(b.gossip_Bps);
               transfer.push_back(b.transfer_Bps);
             }
             py::dict out;
             out["t"] = py::array_t<double>(ts.size(), ts.data());
             out["total_Bps"] = py::array_t<double>(total.size(), total.data());
             out["gossip_Bps"] = py::array_t<double>(gossip.size(), gossip.data());
             out["transfer_Bps"] = py::array_t<double>(transfer.size(), transfer.data());
             return out;
           })
      .def("events", [](const RunTrace& t) {
        py::list out;
        for (const auto& e : t.events) {
          py::dict d;
          d["t"] = e.t;
          d["kind"] = e.kind;
          d["node"] = e.node;
          d["detail"] = e.detail;
          out.append(d);
        }
        return out;
      });

  py::class_<Simulation>(m, "Simulation")
      .def(py::init<PerformanceScript>(), py::arg("script"))
      .def_property_readonly("time", &Simulation::time)
      .def_property_readonly("step_count", &Simulation::step_count)
      .def("step", &Simulation::step)
      .def("run_until", &Simulation::run_until, py::arg("t"))
      .def("robots", [](const Simulation& s) {
        py::list out;
        for (const auto& r : s.robots()) out.append(robot_dict(r));
        return out;
      });

  m.def("load_script", &load_script, py::arg("path"));
  m.def("run", &run, py::arg("script"), py::call_guard<py::gil_scoped_release>());
  m.def("load_trace", &load_trace, py::arg("dir"));
  m.def(
      "export_figure",
      [](const RunTrace& t, const std::string& figure, const std::string& out_dir) {
        return replay_figure(t, figure_from_string(figure), out_dir).paths;
      },
      py::arg("trace"), py::arg("figure"), py::arg("out_dir"));

  m.def(
      "calibrate_anchors",
      [](const Eigen::MatrixXd& ranges, double sigma) {
        CalibrationOptions opt;
        opt.range_sigma = sigma;
        const auto res = calibrate_anchors(ranges, opt);
        Eigen::MatrixXd pos(res.constellation.anchors.size(), 3);
        for (std::size_t i = 0; i < res.constellation.anchors.size(); ++i) {
          pos.row(static_cast<Eigen::Index>(i)) = res.constellation.anchors[i].position.transpose();
        }
        return py::make_tuple(pos, res.residual_rms);
      },
      py::arg("ranges"), py::arg("sigma") = 0.02,
      "Anchor positions (n x 3, in the calibration gauge) and residual RMS from a range matrix (NaN = missing).");

  m.def(
      "diffdrive_step",
      [](double x, double y, double yaw, double left, double right, double track, double dt) {
        Pose p;
        p.x = x;
        p.y = y;
        p.yaw = yaw;
        const auto q = diffdrive_step(p, {left, right}, track, dt);
        return py::make_tuple(q.x, q.y, q.yaw);
      },
      py::arg("x"), py::arg("y"), py::arg("yaw"), py::arg("left"), py::arg("right"), py::arg("track"), py::arg("dt"));

  m.def("gray_encode", &gray_encode, py::arg("cell"), py::arg("width_bits"));

  m.def("library_programs", [] {
    std::vector<std::string> names;
    for (const auto& p : behavior_library()) names.push_back(p.name);
    return names;
  });
  m.def(
      "program_fingerprint",
      [](const std::string& name_or_path) {
        for (const auto& p : behavior_library()) {
          if (p.name == name_or_path) return program_fingerprint(p);
        }
        return program_fingerprint(load_program_file(name_or_path));
      },
      py::arg("name_or_path"), "Fingerprint of a library program by name, or of a program file.");
}

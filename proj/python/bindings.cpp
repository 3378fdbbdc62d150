// Python bindings for the core library. Arrays cross the boundary as 1-D
// float64 numpy arrays; configuration travels as keyword arguments.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>
#include <optional>

#include "pdeco/checkpoint.hpp"
#include "pdeco/dataset.hpp"
#include "pdeco/error.hpp"
#include "pdeco/gradcheck.hpp"
#include "pdeco/heat_problem.hpp"
#include "pdeco/hybrid.hpp"
#include "pdeco/pipeline.hpp"
#include "pdeco/trajectory.hpp"

namespace py = pybind11;
using namespace pdeco;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_array(const std::vector<double>& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::array_t<double> to_array(const Tensor& t) { return to_array(std::vector<double>(t.data().begin(), t.data().end())); }

std::vector<double> from_array(const Array& a, std::size_t expected, const char* name) {
  if (a.ndim() != 1 || static_cast<std::size_t>(a.size()) != expected)
    throw DimensionError(std::string(name) + " must be a 1-D array of " + std::to_string(expected) + " values");
  return {a.data(), a.data() + a.size()};
}

py::dict state_dict(const heat::State& s) {
  py::dict d;
  d["rho"] = to_array(s.rho);
  d["T"] = to_array(s.T);
  d["s"] = to_array(s.s);
  d["J"] = s.J;
  return d;
}

py::object nan_to_none(double v) { return std::isfinite(v) ? py::object(py::float_(v)) : py::none(); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Reference neural operators for PDE-constrained design optimization";

  auto base = py::register_exception<Error>(m, "PdecoError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<SolverError>(m, "SolverError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<PathError>(m, "PathError", base.ptr());

  py::class_<heat::ProblemSpec>(m, "ProblemSpec")
      .def_readonly("nx", &heat::ProblemSpec::nx)
      .def_readonly("ny", &heat::ProblemSpec::ny)
      .def_readonly("volume_fraction", &heat::ProblemSpec::volume_fraction)
      .def_readonly("volume_weight", &heat::ProblemSpec::volume_weight)
      .def_property_readonly("source", [](const heat::ProblemSpec& s) { return to_array(s.source); })
      .def_property_readonly("sink",
                             [](const heat::ProblemSpec& s) { return std::vector<int>(s.sink.begin(), s.sink.end()); })
      .def_property_readonly("nodes", &heat::ProblemSpec::nodes);

  m.def("instance_sampler", &heat::instance_sampler, py::arg("seed"), py::arg("nx") = 32, py::arg("ny") = 32);

  m.def(
      "solve",
      [](const Array& rho, const heat::ProblemSpec& spec) {
        return to_array(heat::solve(from_array(rho, spec.nodes(), "rho"), spec));
      },
      py::arg("rho"), py::arg("spec"));
  m.def(
      "objective",
      [](const Array& T, const Array& rho, const heat::ProblemSpec& spec) {
        return heat::objective(from_array(T, spec.nodes(), "T"), from_array(rho, spec.nodes(), "rho"), spec);
      },
      py::arg("T"), py::arg("rho"), py::arg("spec"));
  m.def(
      "adjoint_sensitivity",
      [](const Array& rho, const Array& T, const heat::ProblemSpec& spec) {
        return to_array(heat::adjoint_sensitivity(from_array(rho, spec.nodes(), "rho"),
                                                  from_array(T, spec.nodes(), "T"), spec));
      },
      py::arg("rho"), py::arg("T"), py::arg("spec"));
  m.def(
      "evaluate_state",
      [](const Array& rho, const heat::ProblemSpec& spec) {
        return state_dict(heat::evaluate_state(from_array(rho, spec.nodes(), "rho"), spec));
      },
      py::arg("rho"), py::arg("spec"));

  m.def(
      "numerical_trajectory",
      [](const heat::ProblemSpec& spec, std::size_t steps, double step_size, double filter_radius) {
        OptimizerConfig cfg;
        cfg.steps = steps;
        cfg.step_size = step_size;
        cfg.filter_radius = filter_radius;
        py::list out;
        for (const auto& s : run_numerical_opt(spec, cfg).records) out.append(state_dict(s));
        return out;
      },
      py::arg("spec"), py::arg("steps") = 12, py::arg("step_size") = 0.5, py::arg("filter_radius") = 1.5);

  m.def(
      "generate_store",
      [](const std::filesystem::path& out, std::size_t num_traj, std::size_t nx, std::size_t ny, std::size_t steps,
         double step_size, std::uint64_t seed) {
        GenRunConfig cfg;
        cfg.out = out;
        cfg.num_traj = num_traj;
        cfg.nx = nx;
        cfg.ny = ny;
        cfg.optimizer.steps = steps;
        cfg.optimizer.step_size = step_size;
        cfg.seed = seed;
        return cmd_gen(cfg).final_J;
      },
      py::arg("out"), py::arg("num_traj") = 100, py::arg("nx") = 32, py::arg("ny") = 32, py::arg("steps") = 12,
      py::arg("step_size") = 0.5, py::arg("seed") = 0);

  m.def(
      "load_store",
      [](const std::filesystem::path& dir) {
        py::list out;
        for (const auto& traj : load_store(dir)) {
          py::list records;
          for (const auto& s : traj.records) records.append(state_dict(s));
          py::dict d;
          d["seed"] = traj.instance.seed;
          d["spec"] = traj.spec;
          d["records"] = records;
          out.append(d);
        }
        return out;
      },
      py::arg("dir"));

  m.def(
      "gradcheck",
      [](std::uint64_t seed, std::size_t random_graphs, const std::string& corrupt) {
        py::list out;
        for (const auto& r : check::run_suite({seed, random_graphs, corrupt})) {
          py::dict d;
          d["name"] = r.name;
          d["max_error"] = r.max_error;
          d["tolerance"] = r.tolerance;
          d["passed"] = r.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0, py::arg("random_graphs") = 25, py::arg("corrupt") = "");

  py::class_<Checkpoint>(m, "Model")
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def_static(
          "random",
          [](std::uint64_t seed, const std::string& layer) {
            RnoConfig cfg;
            cfg.layer = layer_kind_from_string(layer);
            return Checkpoint{cfg, make_rno_params(cfg, seed)};
          },
          py::arg("seed") = 0, py::arg("layer") = "vf")
      .def("save", [](const Checkpoint& c, const std::filesystem::path& p) { save_checkpoint(p, c.config, c.params); })
      .def_property_readonly("layer", [](const Checkpoint& c) { return to_string(c.config.layer); })
      .def_property_readonly("config_json", [](const Checkpoint& c) { return c.config.to_json(); })
      .def(
          "predict",
          [](const Checkpoint& c, const heat::ProblemSpec& spec, const Array& design, std::optional<Array> ref_solution,
             std::optional<Array> ref_design, bool sensitivity) {
            if (ref_solution.has_value() != ref_design.has_value())
              throw UsageError("ref_solution and ref_design must be given together");
            const std::size_t n = spec.nodes();
            Query q;
            q.structural = heat::structural_channels(spec, c.config.source_scale);
            q.design = Tensor({n}, from_array(design, n, "design"));
            if (ref_solution) {
              q.ref_solution = Tensor({n}, from_array(*ref_solution, n, "ref_solution"));
              q.ref_design = Tensor({n}, from_array(*ref_design, n, "ref_design"));
            }
            if (sensitivity) return to_array(predict_sensitivity(q, c.params, c.config, spec));
            NoGradGuard guard;
            return to_array(predict_solution(q, c.params, c.config));
          },
          py::arg("spec"), py::arg("design"), py::arg("ref_solution") = py::none(), py::arg("ref_design") = py::none(),
          py::arg("sensitivity") = false);

  m.def(
      "optimize",
      [](const heat::ProblemSpec& spec, const std::string& mode, const Checkpoint* model, std::size_t steps,
         double step_size, double radius, std::size_t buffer_size, std::size_t noise_passes, double noise_fraction,
         std::uint64_t seed) {
        HybridConfig cfg;
        cfg.mode = hybrid_mode_from_string(mode);
        cfg.steps = steps;
        cfg.step_size = step_size;
        cfg.radius = radius;
        cfg.buffer_size = buffer_size;
        cfg.noise_passes = noise_passes;
        cfg.noise_fraction = noise_fraction;
        const RunLog log = run_optimization(model, spec, cfg, seed);
        py::list rows;
        for (const auto& r : log.steps) {
          py::dict d;
          d["step"] = r.step;
          d["solver_calls"] = r.solver_calls;
          d["predicted_J"] = nan_to_none(r.predicted_J);
          d["true_J"] = nan_to_none(r.true_J);
          d["recalibrated"] = r.recalibrated;
          rows.append(d);
        }
        py::dict out;
        out["mode"] = to_string(log.mode);
        out["steps"] = rows;
        out["recalibrations"] = log.recalibrations;
        out["final_design"] = to_array(log.final_design);
        out["final_true_J"] = nan_to_none(log.final_true_J);
        out["aborted"] = log.aborted;
        out["error"] = log.error;
        out["csv"] = log.to_csv();
        return out;
      },
      py::arg("spec"), py::arg("mode") = "hybrid", py::arg("model") = nullptr, py::arg("steps") = 40,
      py::arg("step_size") = 0.5, py::arg("radius") = 0.1, py::arg("buffer_size") = 3, py::arg("noise_passes") = 4,
      py::arg("noise_fraction") = 0.01, py::arg("seed") = 0);
}

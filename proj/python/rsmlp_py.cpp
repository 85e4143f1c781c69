#include "rsmlp/errors.hpp"
#include "rsmlp/potentials.hpp"
#include "rsmlp/rs_shallow.hpp"
#include "rsmlp/spectral.hpp"
#include "rsmlp/sweep.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace rsmlp;

namespace {

// JSON in, JSON out; the Python side converts with the json module.
std::string run_task(const std::string& config) {
    SweepConfig cfg = config_from_json(nlohmann::json::parse(config));
    validate_config(cfg);
    if (cfg.task == "gamp" || cfg.task == "simulate") return run_experiment(cfg).dump();
    std::ostringstream os;
    write_json(compute_sweep(cfg), os);
    return os.str();
}

py::dict activation_info(const std::string& name) {
    ActivationSpec a = make_activation(name);
    py::dict d;
    d["name"] = a.name;
    d["coefficients"] = a.coefficients;
    d["second_moment"] = a.second_moment;
    return d;
}

py::tuple density(const SpectralDensity& r) {
    return py::make_tuple(r.grid, r.density, r.atoms);
}

}  // namespace

PYBIND11_MODULE(_rsmlp, m) {
    m.doc() = "Replica-symmetric theory of Bayes-optimal MLP learning";
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ConvergenceError>(m, "ConvergenceError", PyExc_RuntimeError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    m.def("run_task", &run_task, py::arg("config"), py::call_guard<py::gil_scoped_release>());
    m.def("activation_info", &activation_info, py::arg("name"));
    m.def("activation_names", &activation_names);
    m.def("parse_alpha_range", &parse_alpha_range, py::arg("spec"));

    m.def("generalized_mp_density",
          [](double gamma, const std::string& readouts) {
              return density(generalized_mp_density(gamma, make_readout_prior(readouts)));
          },
          py::arg("gamma"), py::arg("readouts") = "homogeneous");
    m.def("observation_density",
          [](double gamma, const std::string& readouts, double snr) {
              return density(symmetric_observation_density(gamma, make_readout_prior(readouts), snr));
          },
          py::arg("gamma"), py::arg("readouts"), py::arg("snr"));
    m.def("mmse_symmetric",
          [](double snr, double gamma, const std::string& readouts) {
              return mmse_symmetric(snr, symmetric_observation_density(gamma, make_readout_prior(readouts), snr));
          },
          py::arg("snr"), py::arg("gamma") = 0.5, py::arg("readouts") = "homogeneous");
    m.def("mmse_rectangular",
          [](double snr, double eta, double gamma) {
              return mmse_rectangular(snr, eta, gamma, rectangular_density(snr, eta, gamma));
          },
          py::arg("snr"), py::arg("eta"), py::arg("gamma"));
    m.def("mutual_information", &mutual_information, py::arg("free_entropy"), py::arg("delta"));
}

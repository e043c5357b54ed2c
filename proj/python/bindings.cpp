#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "flowcrypt/crypt.hpp"
#include "flowcrypt/error.hpp"
#include "flowcrypt/flow.hpp"
#include "flowcrypt/leakage.hpp"
#include "flowcrypt/linalg.hpp"
#include "flowcrypt/security.hpp"
#include "flowcrypt/train.hpp"

namespace py = pybind11;
using namespace flowcrypt;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace {

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kDegenerateData: return "degenerate_data";
    case ErrorKind::kShapeMismatch: return "shape_mismatch";
    case ErrorKind::kCorruption: return "corruption";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kNumerical: return "numerical";
  }
  return "unknown";
}

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

PyObject* error_type = nullptr;

}  // namespace

PYBIND11_MODULE(_flowcrypt, m) {
  m.doc() = "Flow-model feature-space encryption";

  error_type = PyErr_NewException("flowcrypt.Error", PyExc_RuntimeError, nullptr);
  m.attr("Error") = py::handle(error_type);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object inst = py::reinterpret_steal<py::object>(PyObject_CallFunction(error_type, "s", e.what()));
      inst.attr("kind") = kind_name(e.kind());
      PyErr_SetObject(error_type, inst.ptr());
    }
  });

  py::class_<linalg::OrthogonalKey>(m, "OrthogonalKey")
      .def_property_readonly("matrix", [](const linalg::OrthogonalKey& k) { return k.matrix; })
      .def_property_readonly("dim", &linalg::OrthogonalKey::dim)
      .def_readonly("seed", &linalg::OrthogonalKey::seed)
      .def("save", [](const linalg::OrthogonalKey& k, const std::filesystem::path& p) { linalg::save_key(k, p); });

  m.def("sample_key", &linalg::sample_haar_orthogonal, py::arg("dim"), py::arg("seed"),
        "Haar-uniform orthogonal key.");
  m.def("make_key", [](Matrix a) { return linalg::make_key(std::move(a)); }, py::arg("matrix"));
  m.def("load_key", &linalg::load_key, py::arg("path"));

  py::class_<flow::FlowModel>(m, "FlowModel")
      .def_readonly("dim", &flow::FlowModel::dim)
      .def_property_readonly("num_params", [](const flow::FlowModel& f) { return flow::num_params(f); })
      .def("forward",
           [](const flow::FlowModel& f, const Vector& s) {
             const auto z = flow::flow_forward(f, s);
             return py::make_tuple(z.values, z.log_det);
           })
      .def("inverse", [](const flow::FlowModel& f, const Vector& z) { return flow::flow_inverse(f, z); })
      .def("log_prob", [](const flow::FlowModel& f, const Vector& s) { return flow::log_prob(f, s); })
      .def("mean_nll", [](const flow::FlowModel& f, const Matrix& x) { return flow::mean_nll(f, x); })
      .def("save", [](const flow::FlowModel& f, const std::filesystem::path& p) { flow::save_model(f, p); });

  m.def(
      "build_flow",
      [](std::size_t dim, std::size_t blocks, std::size_t hidden, std::uint64_t seed) {
        return flow::build_flow(dim, {blocks, hidden, 2.0}, seed);
      },
      py::arg("dim"), py::arg("blocks") = 6, py::arg("hidden") = 64, py::arg("seed") = 0);
  m.def("load_model", &flow::load_model, py::arg("path"));

  m.def(
      "train",
      [](const Matrix& data, std::size_t steps, double learning_rate, std::size_t batch_size, std::uint64_t seed,
         std::size_t blocks, std::size_t hidden) {
        train::TrainConfig c;
        c.steps = steps;
        c.learning_rate = learning_rate;
        c.batch_size = batch_size;
        c.seed = seed;
        c.architecture = {blocks, hidden, 2.0};
        auto r = [&] {
          py::gil_scoped_release release;
          return train::train_flow(data, c);
        }();
        py::list curve;
        for (const auto& rec : r.curve) curve.append(rec.nll);
        return py::make_tuple(std::move(r.model), r.initial_nll, r.final_nll, curve);
      },
      py::arg("data"), py::arg("steps") = 2000, py::arg("learning_rate") = 1e-3, py::arg("batch_size") = 256,
      py::arg("seed") = 0, py::arg("blocks") = 6, py::arg("hidden") = 64,
      "Returns (model, initial_nll, final_nll, per-step nll list).");

  py::class_<crypt::EncryptionContext>(m, "EncryptionContext")
      .def(py::init(&crypt::make_context), py::arg("flow"), py::arg("key"))
      .def_readonly("flow", &crypt::EncryptionContext::flow)
      .def_readonly("key", &crypt::EncryptionContext::key)
      .def_property_readonly("fingerprint", &crypt::context_fingerprint);

  m.def("encrypt", &crypt::encrypt_rows, py::arg("context"), py::arg("samples"));
  m.def("decrypt", &crypt::decrypt_rows, py::arg("context"), py::arg("samples"));

  m.def("bits_per_dim", &flow::bits_per_dim_continuous, py::arg("model"), py::arg("data"));

  m.def(
      "tv_empirical",
      [](const Matrix& p, const Matrix& q, std::uint64_t seed, std::size_t bootstrap) {
        Rng rng(seed);
        security::TvOptions o;
        o.bootstrap = bootstrap;
        const auto est = security::tv_empirical(p, q, rng, o);
        return py::dict(py::arg("value") = est.value, py::arg("method") = security::to_string(est.method),
                        py::arg("ci") = est.ci_halfwidth);
      },
      py::arg("p"), py::arg("q"), py::arg("seed") = 0, py::arg("bootstrap") = 200);

  m.def(
      "sandwich",
      [](double mu_delta, double sigma, std::size_t n) {
        const auto r = security::sandwich_check(mu_delta, sigma, n);
        return py::dict(py::arg("delta_1") = r.delta_1, py::arg("delta_n") = r.delta_n,
                        py::arg("middle") = r.middle, py::arg("upper") = r.upper,
                        py::arg("min_slack") = r.min_slack, py::arg("holds") = r.holds);
      },
      py::arg("mu_delta"), py::arg("sigma") = 1.0, py::arg("n") = 1);

  m.def(
      "audit",
      [](double theta, std::size_t n, std::size_t trials, std::uint64_t seed, std::size_t threads) {
        security::AuditConfig c;
        c.theta = theta;
        c.n = n;
        c.trials = trials;
        c.seed = seed;
        c.threads = threads;
        auto r = [&] {
          py::gil_scoped_release release;
          return security::theorem_bound_audit(c);
        }();
        return to_python(security::to_json(r));
      },
      py::arg("theta") = 0.25, py::arg("n") = 10, py::arg("trials") = 1000, py::arg("seed") = 0,
      py::arg("threads") = 1, "Recovery audit on exact Gaussian features; returns the JSON report as a dict.");

  m.def(
      "dlg_linear",
      [](const Vector& w, double b, const Vector& x, double y, std::uint64_t seed, std::size_t restarts) {
        const leakage::Victim victim = leakage::LinearVictim{w, b};
        const Vector label = Vector::Constant(1, y);
        leakage::DlgConfig c;
        c.optimizer = leakage::DlgOptimizer::kLbfgs;
        c.learning_rate = 1.0;
        c.iterations = 200;
        c.seed = seed;
        c.known_label = label;
        c.restarts = restarts;
        const auto r = leakage::dlg_attack(victim, leakage::compute_gradients(victim, x, label), c);
        return py::dict(py::arg("x") = r.x, py::arg("final_loss") = r.final_loss,
                        py::arg("initial_loss") = r.initial_loss, py::arg("mse") = leakage::mse(r.x, x));
      },
      py::arg("w"), py::arg("b"), py::arg("x"), py::arg("y"), py::arg("seed") = 0, py::arg("restarts") = 4,
      "Gradient-matching reconstruction of x from one linear-regression gradient.");
}

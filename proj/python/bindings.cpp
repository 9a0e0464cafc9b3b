// Python bindings for the nhsplat core.
#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "nhsplat/data_io.hpp"
#include "nhsplat/error.hpp"
#include "nhsplat/optim.hpp"
#include "nhsplat/photometry.hpp"
#include "nhsplat/rasterizer.hpp"
#include "nhsplat/scene.hpp"
#include "nhsplat/version.hpp"

namespace py = pybind11;
using namespace nhsplat;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::array_t<float> to_numpy(const Image& img) {
  std::vector<py::ssize_t> shape{img.height, img.width};
  if (img.channels != 1) shape.push_back(img.channels);
  py::array_t<float> out(shape);
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

Image from_numpy(const FloatArray& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw InvalidArgument("expected an (h, w) or (h, w, c) array");
  const int c = a.ndim() == 3 ? int(a.shape(2)) : 1;
  Image img(int(a.shape(1)), int(a.shape(0)), c);
  std::copy(a.data(), a.data() + a.size(), img.data.begin());
  return img;
}

template <class T>
py::array_t<T> column(const std::vector<T>& v, size_t n, size_t width) {
  std::vector<py::ssize_t> shape{py::ssize_t(n)};
  if (width != 1) shape.push_back(py::ssize_t(width));
  py::array_t<T> out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::object parse_json(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

std::string dump_json(const py::object& obj) {
  return py::module_::import("json").attr("dumps")(obj).cast<std::string>();
}

TrainConfig make_config(const Dataset& data, const py::object& config) {
  TrainConfig base;
  base.supervision = data.supervision;
  if (config.is_none()) return base;
  const std::string text = py::isinstance<py::str>(config) ? config.cast<std::string>()
                                                           : dump_json(config);
  return TrainConfig::from_json(text, base);
}

}  // namespace

PYBIND11_MODULE(_nhsplat, m) {
  m.doc() = "HDR Gaussian splatting core";
  m.attr("__version__") = std::string(kVersion);

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  auto io = py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", io.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());

  py::class_<Camera>(m, "Camera")
      .def_readonly("fx", &Camera::fx)
      .def_readonly("fy", &Camera::fy)
      .def_readonly("cx", &Camera::cx)
      .def_readonly("cy", &Camera::cy)
      .def_readonly("width", &Camera::width)
      .def_readonly("height", &Camera::height)
      .def_property_readonly("rotation", [](const Camera& c) { return Eigen::Matrix3d(c.rotation); })
      .def_property_readonly("translation",
                             [](const Camera& c) { return Eigen::Vector3d(c.translation); })
      .def_static(
          "look_at",
          [](std::array<double, 3> eye, std::array<double, 3> target, double f, int w, int h) {
            return Camera::look_at({eye[0], eye[1], eye[2]}, {target[0], target[1], target[2]},
                                   {0.0, -1.0, 0.0}, f, f, w, h);
          },
          py::arg("eye"), py::arg("target"), py::arg("focal"), py::arg("width"),
          py::arg("height"));

  py::class_<GaussianCloud>(m, "GaussianCloud")
      .def("__len__", &GaussianCloud::size)
      .def_property_readonly("color_model",
                             [](const GaussianCloud& c) { return std::string(to_string(c.color_model)); })
      .def_property_readonly("luminance_space", [](const GaussianCloud& c) {
        return std::string(to_string(c.luminance_space));
      })
      .def_readonly("sh_degree", &GaussianCloud::sh_degree)
      .def_property_readonly("positions",
                             [](const GaussianCloud& c) { return column(c.positions, c.size(), 3); })
      .def_property_readonly("log_scales",
                             [](const GaussianCloud& c) { return column(c.log_scales, c.size(), 3); })
      .def_property_readonly("rotations",
                             [](const GaussianCloud& c) { return column(c.rotations, c.size(), 4); })
      .def_property_readonly("opacity_logits", [](const GaussianCloud& c) {
        return column(c.opacity_logits, c.size(), 1);
      })
      .def_property_readonly("luminance",
                             [](const GaussianCloud& c) { return column(c.luminance, c.luminance.size(), 1); })
      .def_property_readonly(
          "sh", [](const GaussianCloud& c) { return column(c.sh, c.size(), size_t(c.sh_stride())); })
      .def("__eq__", [](const GaussianCloud& a, const GaussianCloud& b) { return a == b; });

  m.def("load_cloud", [](const std::filesystem::path& p) { return load_cloud(p); }, py::arg("path"));
  m.def("save_cloud", &save_cloud, py::arg("cloud"), py::arg("path"));

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("supervision",
                             [](const Dataset& d) { return std::string(to_string(d.supervision)); })
      .def_readonly("white_level", &Dataset::white_level)
      .def(
          "view_names",
          [](const Dataset& d, const std::string& split) {
            std::vector<std::string> names;
            for (const auto& v : d.split(split)) names.push_back(v.name);
            return names;
          },
          py::arg("split") = "train")
      .def(
          "camera",
          [](const Dataset& d, const std::string& split, size_t i) {
            return d.split(split).at(i).camera;
          },
          py::arg("split"), py::arg("index"))
      .def(
          "image",
          [](const Dataset& d, const std::string& split, size_t i) {
            const View& v = d.split(split).at(i);
            return to_numpy(d.supervision == Supervision::HdrRgb ? v.hdr : v.raw.mosaic);
          },
          py::arg("split"), py::arg("index"));

  m.def("load_dataset", &load_dataset, py::arg("path"));
  m.def("save_dataset",
        [](const Dataset& d, const std::filesystem::path& dir, const GaussianCloud* gt) {
          save_dataset(d, dir, gt);
        },
        py::arg("dataset"), py::arg("path"), py::arg("ground_truth") = nullptr);
  m.def(
      "synthesize",
      [](const py::object& spec, const std::string& mode, int threads) {
        const SceneSpec s = py::isinstance<py::str>(spec) ? SceneSpec::from_json(spec.cast<std::string>())
                                                          : SceneSpec::from_json(dump_json(spec));
        SynthResult r;
        {
          py::gil_scoped_release release;
          r = synthesize_dataset(s, parse_supervision(mode), threads);
        }
        return py::make_tuple(std::move(r.dataset), std::move(r.ground_truth));
      },
      py::arg("spec"), py::arg("mode") = "hdr", py::arg("threads") = 1,
      "Returns (dataset, ground_truth_cloud). `spec` is a dict or a JSON string.");

  m.def(
      "render",
      [](const GaussianCloud& cloud, const Camera& cam, std::array<double, 3> background,
         int threads) {
        RenderSettings rs;
        rs.background = background;
        rs.threads = threads;
        RenderOutput out;
        {
          py::gil_scoped_release release;
          out = render(cloud, cam, rs);
        }
        return to_numpy(out.image);
      },
      py::arg("cloud"), py::arg("camera"), py::arg("background") = std::array<double, 3>{0, 0, 0},
      py::arg("threads") = 1);

  m.def(
      "train",
      [](const Dataset& data, const py::object& config) {
        const TrainConfig cfg = make_config(data, config);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(data, cfg);
        }
        py::list log;
        for (const auto& rec : r.log) log.append(parse_json(rec.to_json()));
        return py::make_tuple(std::move(r.cloud), log);
      },
      py::arg("dataset"), py::arg("config") = py::none(),
      "Returns (cloud, metrics). `config` overrides training defaults (dict or JSON string).");

  m.def(
      "evaluate",
      [](const GaussianCloud& cloud, const Dataset& data, const std::string& split, int threads) {
        RenderSettings rs;
        rs.threads = threads;
        EvalResult r;
        {
          py::gil_scoped_release release;
          r = evaluate(cloud, data, split, rs);
        }
        return parse_json(r.to_json());
      },
      py::arg("cloud"), py::arg("dataset"), py::arg("split") = "test", py::arg("threads") = 1);

  m.def("read_pfm", [](const std::filesystem::path& p) { return to_numpy(read_hdr_image(p)); },
        py::arg("path"));
  m.def("write_pfm",
        [](const FloatArray& a, const std::filesystem::path& p) { write_hdr_image(from_numpy(a), p); },
        py::arg("image"), py::arg("path"));

  m.def("mu_law", [](const FloatArray& a, double mu) { return to_numpy(mu_law(from_numpy(a), mu)); },
        py::arg("image"), py::arg("mu") = 5000.0);
  m.def(
      "ssim",
      [](const FloatArray& a, const FloatArray& b) { return ssim(from_numpy(a), from_numpy(b)); },
      py::arg("a"), py::arg("b"));
  m.def(
      "combined_loss",
      [](const FloatArray& pred, const FloatArray& gt, double lambda, double mu) {
        LossConfig cfg;
        cfg.lambda = lambda;
        cfg.mu = mu;
        const LossResult r = combined_loss(from_numpy(pred), from_numpy(gt), cfg);
        py::dict d;
        d["loss"] = r.loss;
        d["l1"] = r.l1;
        d["ssim_loss"] = r.ssim_loss;
        d["grad"] = to_numpy(r.grad);
        return d;
      },
      py::arg("pred"), py::arg("gt"), py::arg("lam") = 0.2, py::arg("mu") = 5000.0);
  m.def(
      "psnr",
      [](const FloatArray& pred, const FloatArray& gt, const std::string& domain, double mu) {
        PsnrDomain d;
        if (domain == "mulaw") d = PsnrDomain::MuLaw;
        else if (domain == "linear") d = PsnrDomain::Linear;
        else throw ConfigError("domain must be 'mulaw' or 'linear', got '" + domain + "'");
        return psnr(from_numpy(pred), from_numpy(gt), d, mu);
      },
      py::arg("pred"), py::arg("gt"), py::arg("domain") = "mulaw", py::arg("mu") = 5000.0);
}

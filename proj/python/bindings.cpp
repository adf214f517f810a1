#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "dfv/cli.hpp"
#include "dfv/dataset.hpp"
#include "dfv/error.hpp"
#include "dfv/focus.hpp"
#include "dfv/metrics.hpp"
#include "dfv/training.hpp"

namespace py = pybind11;
using namespace dfv;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(std::span<const double> values, const std::vector<py::ssize_t>& shape) {
  Array a(shape);
  std::copy(values.begin(), values.end(), a.mutable_data());
  return a;
}

Shape shape_of(const Array& a) {
  Shape s;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) s.push_back(static_cast<std::size_t>(a.shape(i)));
  return s;
}

Tensor to_tensor(const Array& a) {
  return Tensor::from(shape_of(a), std::vector<double>(a.data(), a.data() + a.size()));
}

Array tensor_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  return to_array(t.data(), shape);
}

// (C,H,W) or (H,W) array to Image.
Image to_image(const Array& a) {
  if (a.ndim() == 2) {
    Image img(1, a.shape(0), a.shape(1));
    std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
    return img;
  }
  if (a.ndim() == 3) {
    Image img(a.shape(0), a.shape(1), a.shape(2));
    std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
    return img;
  }
  throw ShapeError("expected a (H,W) or (C,H,W) array");
}

Array image_array(const Image& img) {
  if (img.channels == 1) return to_array(img.pixels, {py::ssize_t(img.height), py::ssize_t(img.width)});
  return to_array(img.pixels, {py::ssize_t(img.channels), py::ssize_t(img.height), py::ssize_t(img.width)});
}

Json to_json(const py::object& obj) {
  if (obj.is_none()) return Json::object();
  const std::string text = py::module_::import("json").attr("dumps")(obj).cast<std::string>();
  return Json::parse(text);
}

py::object from_json(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

FocalStack stack_from_arrays(const Array& frames, const std::vector<double>& focal_distances) {
  if (frames.ndim() != 4) throw ShapeError("frames must be (N,C,H,W)");
  FocalStack st;
  const std::size_t N = frames.shape(0), C = frames.shape(1), H = frames.shape(2), W = frames.shape(3);
  for (std::size_t i = 0; i < N; ++i) {
    Image f(C, H, W);
    std::copy(frames.data() + i * C * H * W, frames.data() + (i + 1) * C * H * W, f.pixels.begin());
    st.frames.push_back(std::move(f));
  }
  st.focal_distances = focal_distances;
  return st;
}

py::dict stack_dict(const FocalStack& st) {
  const std::size_t N = st.size(), C = st.frames[0].channels, H = st.frames[0].height, W = st.frames[0].width;
  Array frames({py::ssize_t(N), py::ssize_t(C), py::ssize_t(H), py::ssize_t(W)});
  for (std::size_t i = 0; i < N; ++i)
    std::copy(st.frames[i].pixels.begin(), st.frames[i].pixels.end(), frames.mutable_data() + i * C * H * W);
  py::dict d;
  d["frames"] = frames;
  d["focal_distances"] = st.focal_distances;
  d["depth"] = st.gt_depth ? py::object(image_array(*st.gt_depth)) : py::none();
  d["mask"] = st.valid_mask ? py::object(image_array(*st.valid_mask)) : py::none();
  return d;
}

class Model {
 public:
  Model(const py::object& config, std::uint64_t seed) : net_(make_config(config), seed) {}
  explicit Model(const Checkpoint& ck) : net_(checkpoint_network_config(ck), 0) { load_weights(net_, ck); }

  static Model load(const std::string& path) { return Model(read_checkpoint(path)); }

  py::tuple predict(const Array& frames, const std::vector<double>& focal_distances) {
    const DepthResult r = dfv::predict(net_, stack_from_arrays(frames, focal_distances));
    return py::make_tuple(image_array(r.depth), image_array(r.uncertainty));
  }

  // Eval-mode probability volumes, finest first.
  std::vector<Array> forward(const Array& stack) {
    NoGradGuard guard;
    std::vector<Array> out;
    for (const Tensor& p : net_.forward(to_tensor(stack), false)) out.push_back(tensor_array(p));
    return out;
  }

  std::size_t parameter_count() const { return net_.parameter_count(); }
  py::object config() const { return from_json(network_config_to_json(net_.config())); }

 private:
  static NetworkConfig make_config(const py::object& obj) {
    NetworkConfig cfg;
    const Json j = to_json(obj);
    for (const auto& [key, value] : j.items())
      if (!set_network_field(cfg, key, value)) throw ConfigError("unknown network key '" + key + "'");
    cfg.validate();
    return cfg;
  }

  Network net_;
};

}  // namespace

PYBIND11_MODULE(pydfv, m) {
  m.doc() = "Depth from focal stacks: optics, focus measures, network inference and metrics";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<CompatibilityError>(m, "CompatibilityError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def(
      "coc_radius_pixels",
      [](double depth, double focus, double focal_length, double aperture, double pixel_pitch) {
        CameraModel cam;
        cam.focal_length = focal_length;
        cam.aperture = aperture;
        cam.pixel_pitch = pixel_pitch;
        return coc_radius_pixels(depth, focus, cam);
      },
      py::arg("depth"), py::arg("focus"), py::arg("focal_length") = 0.025, py::arg("aperture") = 0.0125,
      py::arg("pixel_pitch") = 2e-5);

  m.def(
      "synthesize_sample",
      [](std::uint64_t seed, const py::object& config) {
        return stack_dict(synthesize_sample(synth_config_from_json(to_json(config)), seed));
      },
      py::arg("seed"), py::arg("config") = py::none(),
      "Renders one synthetic stack; returns frames (N,C,H,W), focal_distances, depth and mask.");

  m.def(
      "read_stack", [](const std::string& dir) { return stack_dict(read_stack(dir)); }, py::arg("path"));

  m.def(
      "laplacian_focus_measure",
      [](const Array& frame, std::size_t window) { return image_array(focus::laplacian_focus_measure(to_image(frame), window)); },
      py::arg("frame"), py::arg("window") = 9);

  m.def(
      "differentiate_volume",
      [](const Array& v, std::size_t axis) { return tensor_array(focus::differentiate_volume(to_tensor(v), axis)); },
      py::arg("volume"), py::arg("frame_axis") = 2);

  m.def(
      "regress_depth",
      [](const Array& p, const Array& l) {
        const Tensor pt = to_tensor(p);
        Tensor lt = to_tensor(l);
        if (lt.rank() == 1) lt = focal_tensor(lt.data(), pt.dim(0));
        const Tensor d = regress_depth(pt, lt);
        return py::make_tuple(tensor_array(d), tensor_array(regress_uncertainty(pt, lt, d)));
      },
      py::arg("probabilities"), py::arg("focal_distances"),
      "Expected depth and standard deviation of a [B,N,H,W] probability volume.");

  m.def(
      "evaluate",
      [](const Array& pred, const Array& gt, const Array& mask, const std::optional<Array>& unc) {
        std::optional<Image> u;
        if (unc) u = to_image(*unc);
        return from_json(evaluate(to_image(pred), to_image(gt), to_image(mask), u).to_json());
      },
      py::arg("pred"), py::arg("gt"), py::arg("mask"), py::arg("uncertainty") = py::none());

  m.def(
      "sample_indices",
      [](std::size_t n, std::size_t k, const std::string& policy, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        return sample_indices(n, k, parse_policy(policy), rng);
      },
      py::arg("n"), py::arg("k"), py::arg("policy") = "equidistant", py::arg("seed") = 0);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a CLI subcommand in-process; returns (exit_code, stdout, stderr).");

  py::class_<Model>(m, "Model")
      .def(py::init<const py::object&, std::uint64_t>(), py::arg("config") = py::none(), py::arg("seed") = 0)
      .def_static("load", &Model::load, py::arg("path"))
      .def("predict", &Model::predict, py::arg("frames"), py::arg("focal_distances"),
           "Level-1 depth and uncertainty maps for a (N,C,H,W) stack.")
      .def("forward", &Model::forward, py::arg("stack"))
      .def_property_readonly("parameter_count", &Model::parameter_count)
      .def_property_readonly("config", &Model::config);
}

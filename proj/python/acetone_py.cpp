// Python bindings for LUT application, color metrics, tokenization and
// advantage normalization. Arrays are float32 numpy views: LUTs are
// [b, g, r, 3] and images are [h, w, 3].

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <string>
#include <vector>

#include "acetone/checkpoint.hpp"
#include "acetone/color.hpp"
#include "acetone/error.hpp"
#include "acetone/grpo.hpp"
#include "acetone/io.hpp"
#include "acetone/lut.hpp"
#include "acetone/tokenizer.hpp"

namespace py = pybind11;
using namespace acetone;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Lut3d lut_from_array(const FloatArray& a) {
  if (a.ndim() != 4 || a.shape(0) != a.shape(1) || a.shape(1) != a.shape(2) || a.shape(3) != 3) {
    throw Error(Errc::dimension_mismatch, "LUT array must have shape (n, n, n, 3)");
  }
  const auto n = static_cast<int>(a.shape(0));
  return Lut3d(n, std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray lut_to_array(const Lut3d& lut) {
  const auto n = static_cast<py::ssize_t>(lut.resolution());
  FloatArray out({n, n, n, py::ssize_t{3}});
  std::copy(lut.data().begin(), lut.data().end(), out.mutable_data());
  return out;
}

ImageBuf image_from_array(const FloatArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw Error(Errc::dimension_mismatch, "image array must have shape (h, w, 3)");
  return ImageBuf(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)),
                  std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray image_to_array(const ImageBuf& img) {
  FloatArray out({static_cast<py::ssize_t>(img.height()), static_cast<py::ssize_t>(img.width()), py::ssize_t{3}});
  std::copy(img.data().begin(), img.data().end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(acetone, m) {
  m.doc() = "3D LUT color grading: LUT application, CIEDE2000 metrics, VQ tokenization";

  static py::exception<Error> error_type(m, "AcetoneError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error_type.ptr())(e.what());
      exc.attr("code") = errc_name(e.code());
      exc.attr("exit_code") = exit_code_for(e.code());
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  m.def("identity_lut", [](int n) { return lut_to_array(identity_lut(n)); }, py::arg("n") = 32);
  m.def("apply_lut", [](const FloatArray& lut, const FloatArray& img) {
    return image_to_array(apply_lut(lut_from_array(lut), image_from_array(img)));
  }, py::arg("lut"), py::arg("image"));
  m.def("resample_lut", [](const FloatArray& lut, int n) { return lut_to_array(resample_lut(lut_from_array(lut), n)); },
        py::arg("lut"), py::arg("n"));
  m.def("parse_cube", [](const std::string& text) { return lut_to_array(parse_cube(std::string_view(text)).lut); });
  m.def("read_cube", [](const std::filesystem::path& p) { return lut_to_array(read_cube(p).lut); });
  m.def("write_cube", [](const FloatArray& lut, int precision) { return write_cube(lut_from_array(lut), precision); },
        py::arg("lut"), py::arg("precision") = 6);
  m.def("read_image", [](const std::filesystem::path& p) { return image_to_array(read_image(p)); });
  m.def("write_image", [](const FloatArray& img, const std::filesystem::path& p) { write_image(image_from_array(img), p); },
        py::arg("image"), py::arg("path"));

  m.def("srgb_to_lab", [](float r, float g, float b) {
    const LabColor c = srgb_to_lab({r, g, b});
    return py::make_tuple(c.L, c.a, c.b);
  });
  m.def("delta_e_2000", [](std::array<double, 3> x, std::array<double, 3> y) {
    return delta_e_2000({x[0], x[1], x[2]}, {y[0], y[1], y[2]});
  });
  m.def("mean_delta_e", [](const FloatArray& a, const FloatArray& b) {
    return mean_delta_e(image_from_array(a), image_from_array(b));
  });
  m.def("psnr_images", [](const FloatArray& a, const FloatArray& b) { return psnr(image_from_array(a), image_from_array(b)); });
  m.def("psnr_luts", [](const FloatArray& a, const FloatArray& b) { return psnr(lut_from_array(a), lut_from_array(b)); });
  m.def("color_reward_from_delta_e", &color_reward_from_delta_e, py::arg("mean_delta_e"));
  m.def("advantages", &advantages, py::arg("rewards"), py::arg("std_floor") = 1e-6);

  m.def("compression_ratio", [] { return compression_accounting().ratio; });

  py::class_<TokenizerModel>(m, "Tokenizer")
      .def_static("load", [](const std::filesystem::path& p) { return tokenizer_from_checkpoint(load_checkpoint(p)); })
      .def_static("random", [](std::uint64_t seed) { return make_tokenizer(TokenizerSpec{}, seed); }, py::arg("seed") = 0)
      .def("tokenize", [](TokenizerModel& t, const FloatArray& lut) { return tokenize(t, lut_from_array(lut)); })
      .def("detokenize", [](TokenizerModel& t, const std::vector<int>& tokens) { return lut_to_array(detokenize(t, tokens)); })
      .def_property_readonly("codebook_hash", [](const TokenizerModel& t) { return codebook_hash(t.codebook); });
}

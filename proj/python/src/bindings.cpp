#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fpc/decoder.hpp"
#include "fpc/error.hpp"
#include "fpc/eval.hpp"
#include "fpc/gallery.hpp"
#include "fpc/image_io.hpp"
#include "fpc/losses.hpp"
#include "fpc/matcher.hpp"
#include "fpc/model_io.hpp"

namespace py = pybind11;
using namespace fpc;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const FloatArray& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return Matrix(r, c, std::vector<float>(a.data(), a.data() + r * c));
}

MatrixD to_matrix_d(const DoubleArray& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return MatrixD(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

template <typename T>
py::array_t<T> to_array(const BasicMatrix<T>& m) {
  py::array_t<T> out({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

py::array_t<float> to_array(const Vector& v) {
  py::array_t<float> out(v.size());
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Vector to_vector(const FloatArray& a) {
  if (a.ndim() != 1) throw ShapeError("expected a 1-D array");
  return Vector(a.data(), a.data() + a.size());
}

// Accepts H x W x 3 uint8 (raw pixels) or float (already normalized).
Image to_image(const py::array& a) {
  if (a.ndim() != 3) throw ShapeError("expected an H x W x C image array");
  if (py::isinstance<py::array_t<std::uint8_t>>(a)) {
    auto u = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>::ensure(a);
    if (u.shape(2) != 3) throw ShapeError("uint8 images must have 3 channels");
    Rgb8Image rgb{static_cast<std::size_t>(u.shape(0)), static_cast<std::size_t>(u.shape(1)),
                  std::vector<std::uint8_t>(u.data(), u.data() + u.size())};
    return to_float_image(rgb);
  }
  auto f = FloatArray::ensure(a);
  return Image{static_cast<std::size_t>(f.shape(0)), static_cast<std::size_t>(f.shape(1)),
               static_cast<std::size_t>(f.shape(2)), std::vector<float>(f.data(), f.data() + f.size())};
}

py::array_t<std::uint8_t> rgb_to_array(const Rgb8Image& img) {
  py::array_t<std::uint8_t> out({img.height, img.width, std::size_t{3}});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

py::dict feature_dict(const EncodedFeature& f) {
  py::dict d;
  d["cls"] = to_array(f.cls);
  d["patches"] = to_array(f.patches);
  d["kept_patch_indices"] = f.kept_patch_indices;
  d["kept_masks"] = f.kept_masks;
  d["tokens_per_layer"] = f.tokens_per_layer;
  d["flops"] = f.flops.total;
  return d;
}

EncoderConfig query_config(const ModelBundle& m, double keep_rate, const std::string& strategy,
                           std::uint64_t drop_seed) {
  EncoderConfig cfg = m.config.encoder;
  cfg.keep_rate = keep_rate;
  cfg.strategy = parse_drop_strategy(strategy);
  cfg.drop_seed = drop_seed;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Token-pruned ViT re-identification: encoder, matcher, consolidation, evaluation";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<DegenerateError>(m, "DegenerateError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  // tensor kernel
  m.def("matmul", [](const FloatArray& a, const FloatArray& b) {
    return to_array(matmul(to_matrix(a), to_matrix(b)));
  });
  m.def("softmax_rows", [](const FloatArray& a) { return to_array(softmax_rows(to_matrix(a))); });
  m.def("count_flops",
        [](std::size_t layers, std::size_t embed_dim, std::size_t mlp_dim,
           const std::vector<std::size_t>& tokens) {
          const FlopsReport r = count_flops({layers, embed_dim, mlp_dim}, tokens);
          return py::make_tuple(r.per_layer, r.total);
        },
        py::arg("layers"), py::arg("embed_dim"), py::arg("mlp_dim"), py::arg("token_counts"));

  // model
  py::class_<ModelBundle>(m, "Model")
      .def_static("init", [](const std::string& config_json, std::uint64_t seed) {
            return init_model(parse_model_config(config_json), seed);
          }, py::arg("config_json") = "{}", py::arg("seed") = 0)
      .def_static("load", &load_model, py::arg("path"))
      .def("save", [](const ModelBundle& b, const std::string& path) { save_model(b, path); })
      .def_property_readonly("config_json", [](const ModelBundle& b) { return model_config_json(b.config); })
      .def_property_readonly("patch_count", [](const ModelBundle& b) { return b.config.encoder.patch_count(); })
      .def_property_readonly("embed_dim", [](const ModelBundle& b) { return b.config.encoder.embed_dim; })
      .def("token_schedule", [](const ModelBundle& b, double keep_rate) {
            EncoderConfig cfg = b.config.encoder;
            cfg.keep_rate = keep_rate;
            return token_schedule(cfg);
          }, py::arg("keep_rate") = 0.8)
      .def("encode", [](const ModelBundle& b, const py::array& image, std::size_t camera,
                        double keep_rate, const std::string& strategy, std::uint64_t drop_seed) {
            return feature_dict(encode(to_image(image), camera, query_config(b, keep_rate, strategy, drop_seed),
                                       b.encoder));
          }, py::arg("image"), py::arg("camera") = 0, py::arg("keep_rate") = 0.8,
          py::arg("strategy") = "non-salient", py::arg("drop_seed") = 0)
      .def("__eq__", [](const ModelBundle& a, const ModelBundle& b) { return a == b; });

  // gallery
  py::class_<GalleryMemory>(m, "Gallery")
      .def_static("build", [](const ModelBundle& b, const std::vector<py::array>& images,
                              const std::vector<std::uint32_t>& person_ids,
                              const std::vector<std::uint32_t>& camera_ids) {
            if (images.size() != person_ids.size() || images.size() != camera_ids.size()) {
              throw InputError("images, person_ids and camera_ids must have equal length");
            }
            std::vector<LabeledImage> labeled;
            for (std::size_t i = 0; i < images.size(); ++i)
              labeled.push_back({to_image(images[i]), person_ids[i], camera_ids[i]});
            return GalleryMemory::build(labeled, b.config.encoder, b.encoder);
          })
      .def_static("load", &GalleryMemory::load, py::arg("path"))
      .def("save", &GalleryMemory::save, py::arg("path"))
      .def("__len__", &GalleryMemory::size)
      .def("person_id", [](const GalleryMemory& g, std::size_t i) { return g.records().at(i).person_id; })
      .def("camera_id", [](const GalleryMemory& g, std::size_t i) { return g.records().at(i).camera_id; })
      .def("__eq__", [](const GalleryMemory& a, const GalleryMemory& b) { return a == b; });

  m.def("query",
        [](const ModelBundle& b, const GalleryMemory& g, const py::array& image, std::size_t camera,
           double alpha, std::size_t k, double keep_rate, const std::string& strategy) {
          const EncodedFeature f =
              encode(to_image(image), camera, query_config(b, keep_rate, strategy, 0), b.encoder);
          RankOptions opts;
          opts.alpha = alpha;
          opts.k = k;
          py::list out;
          for (const auto& c : rank(f, g, opts).candidates) {
            const auto& rec = g[c.gallery_position];
            py::dict d;
            d["position"] = c.gallery_position;
            d["person_id"] = rec.person_id;
            d["camera_id"] = rec.camera_id;
            d["d_cos"] = c.d_cos;
            d["d_emd"] = c.d_emd;
            d["d_combined"] = c.d_combined;
            out.append(d);
          }
          return out;
        },
        py::arg("model"), py::arg("gallery"), py::arg("image"), py::arg("camera") = 0,
        py::arg("alpha") = 0.4, py::arg("k") = 10, py::arg("keep_rate") = 0.8,
        py::arg("strategy") = "non-salient");

  // matcher
  m.def("cosine_distance", [](const FloatArray& a, const FloatArray& b) {
    return cosine_distance(to_vector(a), to_vector(b));
  });
  m.def("emd_distance", [](const FloatArray& q, const FloatArray& g) {
    return emd_distance(to_matrix(q), to_matrix(g));
  });
  m.def("sinkhorn",
        [](const DoubleArray& cost, const std::vector<double>& wq, const std::vector<double>& wg,
           double eps, std::size_t max_iters, double tol) {
          const TransportPlan p = sinkhorn_solve({to_matrix_d(cost), wq, wg}, {eps, max_iters, tol});
          py::dict d;
          d["flow"] = to_array(p.flow);
          d["cost"] = p.cost_value;
          d["iterations"] = p.iterations_used;
          d["converged"] = p.converged;
          d["marginal_violation"] = p.marginal_violation;
          return d;
        },
        py::arg("cost"), py::arg("query_weights"), py::arg("gallery_weights"), py::arg("eps") = 0.05,
        py::arg("max_iters") = 100, py::arg("tol") = 1e-4);

  // losses
  m.def("id_loss",
        [](const DoubleArray& batch, const std::vector<std::uint32_t>& labels, const DoubleArray& weight,
           const std::vector<double>& bias) {
          const auto r = id_loss<double>(to_matrix_d(batch), labels, {to_matrix_d(weight), bias});
          return py::make_tuple(r.value, to_array(r.grad));
        });
  m.def("triplet_loss",
        [](const DoubleArray& batch, const std::vector<std::uint32_t>& labels, double margin) {
          const auto r = triplet_loss<double>(to_matrix_d(batch), labels, margin);
          return py::make_tuple(r.value, to_array(r.grad));
        },
        py::arg("batch"), py::arg("labels"), py::arg("margin") = kTripletMargin);

  // metrics and fixtures
  m.def("average_precision", [](const std::vector<bool>& matches) {
    std::unique_ptr<bool[]> buf(new bool[matches.size()]);
    std::copy(matches.begin(), matches.end(), buf.get());
    return average_precision(std::span<const bool>(buf.get(), matches.size()));
  });
  m.def("cmc_curve", &cmc_curve, py::arg("per_query_matches"), py::arg("max_rank"));
  m.def("generate_synthetic",
        [](std::size_t identities, std::size_t per_id, double occlusion_rate, double noise,
           std::uint64_t seed) {
          SyntheticSpec s;
          s.identities = identities;
          s.images_per_identity = per_id;
          s.occlusion_rate = occlusion_rate;
          s.noise = noise;
          s.seed = seed;
          const SyntheticCorpus c = generate_synthetic(s);
          auto pack = [](const std::vector<SyntheticImage>& v) {
            py::list out;
            for (const auto& i : v)
              out.append(py::make_tuple(rgb_to_array(i.image), i.person_id, i.camera_id, i.filename));
            return out;
          };
          return py::make_tuple(pack(c.gallery), pack(c.queries));
        },
        py::arg("identities") = 20, py::arg("per_id") = 4, py::arg("occlusion_rate") = 0.4,
        py::arg("noise") = 0.05, py::arg("seed") = 0);
  m.def("evaluate",
        [](const ModelBundle& b, const GalleryMemory& g, const std::vector<py::array>& images,
           const std::vector<std::uint32_t>& person_ids, const std::vector<std::uint32_t>& camera_ids,
           double alpha, std::size_t k, double keep_rate, const std::string& strategy, bool consolidate) {
          if (images.size() != person_ids.size() || images.size() != camera_ids.size()) {
            throw InputError("images, person_ids and camera_ids must have equal length");
          }
          std::vector<LabeledImage> queries;
          for (std::size_t i = 0; i < images.size(); ++i)
            queries.push_back({to_image(images[i]), person_ids[i], camera_ids[i]});
          EvalOptions o;
          o.rank.alpha = alpha;
          o.rank.k = k;
          o.keep_rate = keep_rate;
          o.strategy = parse_drop_strategy(strategy);
          o.consolidate = consolidate;
          const EvalReport r = evaluate(queries, g, b, o);
          py::dict d;
          d["cmc"] = r.cmc;
          d["map"] = r.map;
          d["per_query_ap"] = r.per_query_ap;
          d["flops"] = r.flops.total;
          d["flops_ratio"] = r.flops_ratio;
          return d;
        },
        py::arg("model"), py::arg("gallery"), py::arg("images"), py::arg("person_ids"),
        py::arg("camera_ids"), py::arg("alpha") = 0.4, py::arg("k") = 10, py::arg("keep_rate") = 0.8,
        py::arg("strategy") = "non-salient", py::arg("consolidate") = false);
  m.def("parse_metadata", [](const std::string& name) {
    const FileMetadata md = parse_metadata(name);
    return py::make_tuple(md.person_id, md.camera_id);
  });
}

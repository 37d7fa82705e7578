#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "unmemo/acr.hpp"
#include "unmemo/harness.hpp"
#include "unmemo/json_io.hpp"
#include "unmemo/metrics.hpp"

namespace py = pybind11;
using json = nlohmann::json;
using namespace unmemo;

namespace {

// Configs and reports cross the boundary as JSON text; the Python side
// wraps them in dicts.
template <typename T>
T parse(const std::string& text) {
  try {
    return text.empty() ? T{} : json::parse(text).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kConfig, e.what());
  }
}

py::array_t<float> to_numpy(const LogitMatrix& m) {
  py::array_t<float> out({m.rows(), m.cols()});
  std::copy(m.data(), m.data() + m.size(), out.mutable_data());
  return out;
}

std::vector<float> row_of(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  require(a.ndim() == 1, ErrorKind::kInvalidArgument, "expected a 1-D logit row");
  return {a.data(), a.data() + a.shape(0)};
}

std::vector<TokenSequence> sequences(const std::vector<std::vector<TokenId>>& ids) {
  std::vector<TokenSequence> out;
  for (const auto& s : ids) out.push_back(TokenSequence{s, {}});
  return out;
}

}  // namespace

PYBIND11_MODULE(_unmemo, m) {
  m.doc() = "Core of the unmemo toolkit";

  static py::exception<Error> exc(m, "UnmemoError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object err = exc;
      py::object inst = err(std::string(to_string(e.kind())) + ": " + e.what());
      inst.attr("exit_code") = e.exit_code();
      inst.attr("kind") = to_string(e.kind());
      PyErr_SetObject(err.ptr(), inst.ptr());
    }
  });

  // corpus
  m.def("tokenize_words", &tokenize_words);
  m.def("normalize_text", &normalize_text);
  m.def("generate_articles", &generate_articles, py::arg("seed"), py::arg("count"), py::arg("target_words"));
  m.def("rephrase", [](const std::string& text, std::uint64_t seed) { return rephrase(text, seed); });
  m.def("leading_sentences", &leading_sentences);

  py::class_<Vocab>(m, "Vocab")
      .def(py::init<std::vector<std::string>>())
      .def("__len__", &Vocab::size)
      .def("surface", &Vocab::surface)
      .def("find", &Vocab::find)
      .def_property_readonly("tokens", &Vocab::tokens)
      .def("encode", [](const Vocab& v, const std::string& text) { return encode(v, text).ids; })
      .def("decode", [](const Vocab& v, const std::vector<TokenId>& ids) { return decode(v, ids); });
  m.def("build_vocab", [](const std::vector<std::string>& texts) { return build_vocab(texts); });

  // metrics
  m.def("split_words", &split_words);
  m.def("lcs_words", [](const std::string& a, const std::string& b) { return lcs_words(split_words(a), split_words(b)); });
  m.def("lcs_contiguous_words",
        [](const std::string& a, const std::string& b) { return lcs_contiguous_words(split_words(a), split_words(b)); });
  m.def("edit_distance_words",
        [](const std::string& a, const std::string& b) { return edit_distance_words(split_words(a), split_words(b)); });
  m.def("rouge2", [](const std::string& cand, const std::string& ref) {
    const auto r = rouge2(split_words(cand), split_words(ref));
    return py::dict(py::arg("precision") = r.precision, py::arg("recall") = r.recall, py::arg("f1") = r.f1);
  });

  // model
  py::class_<Model>(m, "Model")
      .def_property_readonly("config", [](const Model& md) { return json(md.config()).dump(); })
      .def_property_readonly("num_params", &Model::num_params)
      .def("forward", [](const Model& md, const std::vector<TokenId>& ids) { return to_numpy(md.forward(ids)); })
      .def("copy", [](const Model& md) { return Model(md); })
      .def("digest", [](const Model& md) { return parameter_digest(md); });
  m.def("init_model", [](const std::string& cfg) { return init_model(parse<ModelConfig>(cfg)); });
  m.def("parameter_count", [](const std::string& cfg) { return parameter_count(parse<ModelConfig>(cfg)); });
  m.def("load", &load);
  m.def("save", &save);

  // training and probing
  m.def("pretrain", [](Model& md, const std::vector<std::vector<TokenId>>& retain, const std::string& cfg) {
    return pretrain(md, sequences(retain), parse<TrainConfig>(cfg)).final_loss;
  });
  m.def("perplexity", [](const Model& md, const std::vector<std::vector<TokenId>>& corpus) {
    return perplexity(md, sequences(corpus));
  });
  m.def("generate",
        [](const Model& md, const std::vector<TokenId>& prefix, int max_new, const std::string& mode, double temperature,
           std::uint64_t seed) {
          const auto dm = mode == "greedy" ? DecodeMode::kGreedy : DecodeMode::kTemperature;
          return generate(md, prefix, max_new, dm, temperature, seed);
        },
        py::arg("model"), py::arg("prefix"), py::arg("max_new"), py::arg("mode") = "greedy",
        py::arg("temperature") = 1.0, py::arg("seed") = 0);
  m.def("greedy_match_length", [](const Model& md, const std::vector<TokenId>& seq, int start, int prefix_len) {
    return greedy_match_length(md, seq, start, prefix_len);
  });
  m.def("probe_sweep", [](const Model& md, const Vocab& v, const std::vector<TokenId>& framed, const std::string& proto) {
    return json(probe_sweep(md, v, TokenSequence{framed, {}}, parse<ProbeProtocol>(proto))).dump();
  });

  // unmemorization
  m.def("stride_positions", &stride_positions);
  m.def("build_forget_target", [](const py::array_t<float, py::array::c_style | py::array::forcecast>& logits,
                                  const std::string& cfg) {
    const auto row = row_of(logits);
    const auto t = build_forget_target(row, parse<ObliviateConfig>(cfg));
    return py::dict(py::arg("target") = t.target, py::arg("support") = t.support, py::arg("log_q") = t.log_q);
  });
  m.def("forget_loss", [](const py::array_t<float, py::array::c_style | py::array::forcecast>& live,
                          const py::array_t<float, py::array::c_style | py::array::forcecast>& reference,
                          const std::string& cfg) {
    const auto c = parse<ObliviateConfig>(cfg);
    const auto ref = row_of(reference);
    const auto l = row_of(live);
    return forget_loss<float>(l, build_forget_target(ref, c), c.kl_direction);
  });
  m.def("maintain_loss", [](const py::array_t<float, py::array::c_style | py::array::forcecast>& live,
                            const py::array_t<float, py::array::c_style | py::array::forcecast>& reference,
                            const std::string& cfg) {
    return maintain_loss(row_of(live), row_of(reference), parse<ObliviateConfig>(cfg));
  });
  m.def("unmemorize", [](Model& live, const Model& reference, const std::vector<std::vector<TokenId>>& forget,
                         const std::string& cfg) {
    const FrozenModel ref(reference);
    return json(unmemorize(live, ref, sequences(forget), parse<ObliviateConfig>(cfg))).dump();
  });
  m.def("compress", [](const Model& md, const std::vector<TokenId>& target, const std::string& cfg) {
    return json(compress(md, target, parse<AcrConfig>(cfg))).dump();
  });

  // harness
  m.def("workspace", [](const std::string& cfg) {
    const auto ws = build_workspace(resolve_seeds(parse<ExperimentConfig>(cfg)));
    auto ids = [](const std::vector<TokenSequence>& v) {
      std::vector<std::vector<TokenId>> out;
      for (const auto& s : v) out.push_back(s.ids);
      return out;
    };
    std::vector<std::string> forget_text;
    for (const auto& a : ws.corpus.forget_set) forget_text.push_back(a.text);
    return py::dict(py::arg("vocab") = ws.vocab, py::arg("forget") = ids(ws.forget), py::arg("retain") = ids(ws.retain),
                    py::arg("heldout") = ids(ws.heldout), py::arg("forget_text") = forget_text);
  });
  m.def("default_config", [] { return json(ExperimentConfig{}).dump(); });
  m.def("run_pipeline", [](const std::string& cfg) {
    std::filesystem::path dir;
    const auto report = run_pipeline(parse<ExperimentConfig>(cfg), &dir);
    return py::make_tuple(report_json(report).dump(), dir.string());
  });
  m.def("run_ablation", [](const std::string& cfg, const std::string& axis, const std::string& checkpoint) {
    std::filesystem::path dir;
    const auto report = run_ablation(parse<ExperimentConfig>(cfg), parse_axis(axis), checkpoint, &dir);
    return py::make_tuple(report_json(report).dump(), dir.string());
  }, py::arg("config"), py::arg("axis"), py::arg("checkpoint") = "");
  m.def("validate_report", [](const std::string& text) { return validate_json(load_report_schema(), json::parse(text)); });
  m.def("report_schema", [] { return load_report_schema().dump(); });

  m.attr("__version__") = kToolVersion;
}

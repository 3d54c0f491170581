// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "sparsedan/config.hpp"
#include "sparsedan/dataset.hpp"
#include "sparsedan/errors.hpp"
#include "sparsedan/featurize.hpp"
#include "sparsedan/model.hpp"
#include "sparsedan/optim.hpp"
#include "sparsedan/pipeline.hpp"
#include "sparsedan/prune.hpp"
#include "sparsedan/tokenize.hpp"
#include "sparsedan/vocab.hpp"

namespace py = pybind11;
using namespace sparsedan;

namespace {

py::dict featurized_dict(const FeaturizedExample& ex) {
  py::dict d;
  d["ids"] = py::array_t<std::uint32_t>(static_cast<py::ssize_t>(ex.ids.size()), ex.ids.data());
  d["total_ngrams"] = ex.total_ngrams;
  d["matched_ngrams"] = ex.matched_ngrams;
  d["coverage"] = ex.total_ngrams ? py::cast(coverage_ratio(ex)) : py::none();
  return d;
}

py::dict config_dict(const DanConfig& c) {
  py::dict d;
  d["vocab_size"] = c.vocab_size;
  d["embed_dim"] = c.embed_dim;
  d["hidden"] = c.hidden;
  d["n_classes"] = c.n_classes;
  d["pooling"] = std::string(to_string(c.pooling));
  d["pair_mode"] = c.pair_mode;
  d["attention_dim"] = c.attention_dim;
  return d;
}

py::dict count_dict(const ParamCount& p) {
  py::dict d;
  d["sparse"] = p.sparse;
  d["dense"] = p.dense;
  d["total"] = p.total;
  return d;
}

// Rows of class probabilities for raw texts (or (text1, text2) pairs).
py::array_t<double> predict_texts(const DanModel& model, const std::vector<std::string>& texts,
                                  const std::optional<std::vector<std::string>>& texts2,
                                  std::optional<std::size_t> n_cutoff) {
  if (texts2 && texts2->size() != texts.size()) throw ConfigError("texts and texts2 differ in length");
  std::vector<Example> batch;
  batch.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (texts2) {
      batch.emplace_back(featurize_pair(texts[i], (*texts2)[i], model.vocab(), n_cutoff));
    } else {
      batch.emplace_back(featurize(texts[i], model.vocab(), n_cutoff));
    }
  }
  std::vector<double> probs;
  {
    py::gil_scoped_release release;
    probs = model.predict_batch(batch);
  }
  const auto k = static_cast<py::ssize_t>(model.config().n_classes);
  py::array_t<double> out({static_cast<py::ssize_t>(texts.size()), k});
  std::copy(probs.begin(), probs.end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sparse n-gram DAN students: vocabulary, featurization, training and inference.";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<EmptyCorpusError>(m, "EmptyCorpusError", base.ptr());
  py::register_exception<IntegrityError>(m, "IntegrityError", base.ptr());
  py::register_exception<VersionError>(m, "VersionError", base.ptr());
  py::register_exception<StructuralError>(m, "StructuralError", base.ptr());
  py::register_exception<UndefinedCoverageError>(m, "UndefinedCoverageError", base.ptr());
  py::register_exception<DataValidationError>(m, "DataValidationError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.def(
      "tokenize",
      [](std::string_view text) {
        const auto tokens = tokenize(text);
        std::vector<std::string> out;
        out.reserve(tokens.size());
        for (std::size_t i = 0; i < tokens.size(); ++i) out.emplace_back(tokens.token(i));
        return out;
      },
      py::arg("text"));

  py::class_<NgramVocab, std::shared_ptr<NgramVocab>>(m, "Vocab")
      .def("__len__", &NgramVocab::size)
      .def("__contains__", [](const NgramVocab& v, std::string_view s) { return v.find(s).has_value(); })
      .def("find", [](const NgramVocab& v, std::string_view s) { return v.find(s); }, py::arg("ngram"))
      .def_property_readonly("range", [](const NgramVocab& v) { return py::make_tuple(v.range().min, v.range().max); })
      .def_property_readonly("source", [](const NgramVocab& v) { return std::string(to_string(v.source())); })
      .def("entries",
           [](const NgramVocab& v) {
             std::vector<std::pair<std::string, std::uint64_t>> out;
             out.reserve(v.size());
             for (const auto& e : v.entries()) out.emplace_back(e.ngram, e.frequency);
             return out;
           })
      .def("save", [](const NgramVocab& v, const std::filesystem::path& p) { save_vocab(v, p); }, py::arg("path"));

  m.def(
      "build_vocab",
      [](const std::vector<std::string>& documents, std::size_t nmin, std::size_t nmax, std::size_t top_k,
         std::string_view tie_break, std::size_t workers) {
        VocabConfig c;
        c.range = {static_cast<std::uint32_t>(nmin), static_cast<std::uint32_t>(nmax)};
        c.top_k = top_k;
        c.tie_break = parse_tie_break(tie_break);
        c.workers = workers;
        py::gil_scoped_release release;
        return std::make_shared<NgramVocab>(build_vocab(documents, c));
      },
      py::arg("documents"), py::arg("nmin") = 1, py::arg("nmax") = 4, py::arg("top_k") = 1'000'000,
      py::arg("tie_break") = "lex-asc", py::arg("workers") = 1);
  m.def(
      "load_vocab", [](const std::filesystem::path& p) { return std::make_shared<NgramVocab>(load_vocab(p)); },
      py::arg("path"));

  m.def(
      "featurize",
      [](std::string_view text, const NgramVocab& vocab, std::optional<std::size_t> n_cutoff) {
        return featurized_dict(featurize(text, vocab, n_cutoff));
      },
      py::arg("text"), py::arg("vocab"), py::arg("n_cutoff") = py::none());

  py::class_<DanModel>(m, "Model")
      .def(py::init([](std::shared_ptr<NgramVocab> vocab, std::size_t embed_dim, std::vector<std::size_t> hidden,
                       std::size_t n_classes, std::string_view pooling, bool pair_mode, std::size_t attention_dim,
                       std::uint64_t seed) {
             DanConfig c;
             c.vocab_size = vocab->size();
             c.embed_dim = embed_dim;
             c.hidden = std::move(hidden);
             c.n_classes = n_classes;
             c.pooling = parse_pooling(pooling);
             c.pair_mode = pair_mode;
             c.attention_dim = attention_dim;
             return DanModel(std::move(vocab), c, seed);
           }),
           py::arg("vocab"), py::arg("embed_dim") = 1000, py::arg("hidden") = std::vector<std::size_t>{1000},
           py::arg("n_classes") = 2, py::arg("pooling") = "mean", py::arg("pair_mode") = false,
           py::arg("attention_dim") = 64, py::arg("seed") = 0)
      .def_property_readonly("config", [](const DanModel& m) { return config_dict(m.config()); })
      .def_property_readonly("vocab",
                             [](const DanModel& m) { return std::const_pointer_cast<NgramVocab>(m.vocab_ptr()); })
      .def("param_count", [](const DanModel& m) { return count_dict(param_count(m.config())); })
      .def("predict", &predict_texts, py::arg("texts"), py::arg("texts2") = py::none(),
           py::arg("n_cutoff") = py::none())
      .def(
          "train",
          [](DanModel& model, const std::filesystem::path& data, std::string_view stage,
             const std::optional<std::filesystem::path>& dev, std::size_t epochs, std::size_t batch_size,
             double lr, std::uint64_t seed) {
            const LossMode mode = stage == "kd" ? LossMode::KD : stage == "ft" ? LossMode::FT
                                                                                 : throw ConfigError("stage must be kd or ft");
            TrainConfig c = TrainConfig::defaults(mode);
            c.epochs = epochs;
            if (batch_size) c.batch_size = batch_size;
            if (lr > 0) c.adam.lr = lr;
            c.seed = seed;
            const auto train_set = to_examples(read_jsonl(data), model.vocab());
            std::vector<Example> dev_set;
            if (dev) dev_set = to_examples(read_jsonl(*dev), model.vocab());
            py::gil_scoped_release release;
            const auto r = train(model, train_set, dev_set, c);
            py::gil_scoped_acquire acquire;
            py::dict out;
            out["steps"] = r.steps_run;
            out["best_dev_accuracy"] = r.best_dev_accuracy ? py::cast(*r.best_dev_accuracy) : py::none();
            return out;
          },
          py::arg("data"), py::arg("stage") = "ft", py::arg("dev") = py::none(), py::arg("epochs") = 1,
          py::arg("batch_size") = 0, py::arg("lr") = 0.0, py::arg("seed") = 0)
      .def(
          "prune",
          [](const DanModel& m, double keep_fraction, const std::filesystem::path& train) {
            PruneSpec spec;
            spec.keep_fraction = keep_fraction;
            spec.frequencies = ngram_frequencies(read_documents(train), m.vocab());
            return prune_model(m, spec);
          },
          py::arg("keep_fraction"), py::arg("train"))
      .def("save", [](const DanModel& m, const std::filesystem::path& p) { save_model(m, p); }, py::arg("path"));

  m.def("load_model", &load_model, py::arg("path"));

  m.def(
      "param_count",
      [](std::size_t vocab_size, std::size_t embed_dim, std::vector<std::size_t> hidden, std::size_t n_classes,
         bool pair_mode) {
        DanConfig c;
        c.vocab_size = vocab_size;
        c.embed_dim = embed_dim;
        c.hidden = std::move(hidden);
        c.n_classes = n_classes;
        c.pair_mode = pair_mode;
        return count_dict(param_count(c));
      },
      py::arg("vocab_size"), py::arg("embed_dim") = 1000, py::arg("hidden") = std::vector<std::size_t>{1000},
      py::arg("n_classes") = 2, py::arg("pair_mode") = false);

  m.def("kd_loss", [](std::vector<double> t, std::vector<double> s) { return kd_loss(t, s); }, py::arg("teacher"),
        py::arg("student"));
  m.def("ft_loss", [](int label, std::vector<double> s) { return ft_loss(label, s); }, py::arg("label"),
        py::arg("student"));

  m.def(
      "validate_data",
      [](const std::filesystem::path& path, std::string_view kind, std::optional<std::size_t> n_classes) {
        const auto r = validate_data(path, parse_data_kind(kind), n_classes);
        py::dict out;
        out["lines"] = r.lines;
        out["total_violations"] = r.total_violations;
        py::list first;
        for (const auto& v : r.violations) first.append(py::make_tuple(v.line, v.message));
        out["violations"] = first;
        return out;
      },
      py::arg("path"), py::arg("kind") = "any", py::arg("n_classes") = py::none());

  m.def(
      "run_pipeline",
      [](const std::filesystem::path& config, bool overwrite) {
        auto pc = pipeline_config_from(KeyValueConfig::load(config), config.parent_path());
        pc.overwrite = pc.overwrite || overwrite;
        PipelineResult r;
        {
          py::gil_scoped_release release;
          r = run_pipeline(pc);
        }
        py::dict out;
        out["artifacts"] = r.artifacts;
        out["kd_dev_accuracy"] = r.kd_dev_accuracy;
        out["ft_dev_accuracy"] = r.ft_dev_accuracy;
        out["pruned_dev_accuracy"] = r.pruned_dev_accuracy;
        return out;
      },
      py::arg("config"), py::arg("overwrite") = false);

#ifdef SPARSEDAN_VERSION
  m.attr("__version__") = SPARSEDAN_VERSION;
#else
  m.attr("__version__") = "dev";
#endif
}

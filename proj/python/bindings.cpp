#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "s3m/corpus_io.hpp"
#include "s3m/embeddings.hpp"
#include "s3m/error.hpp"
#include "s3m/pipeline.hpp"
#include "s3m/probe.hpp"
#include "s3m/stats.hpp"
#include "s3m/stimuli.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace s3m;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

template <typename M>
py::array_t<float> to_numpy(const M& m) {
  py::array_t<float> out({static_cast<py::ssize_t>(m.rows()), static_cast<py::ssize_t>(m.cols())});
  auto v = out.mutable_unchecked<2>();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) v(r, c) = m(r, c);
  }
  return out;
}

FrameMatrix from_numpy(const FloatArray& a) {
  if (a.ndim() != 2) throw DataError("expected a 2-D float array");
  FrameMatrix m(a.shape(0), a.shape(1));
  std::memcpy(m.data(), a.data(), sizeof(float) * static_cast<std::size_t>(a.size()));
  return m;
}

const FeatureInventory& inventory() {
  static const auto inv = FeatureInventory::read(default_data_dir() / "phoneme_features.tsv");
  return inv;
}

py::dict activation_dict(const ActivationMatrix& m) {
  py::dict d;
  d["utterance_id"] = m.utterance_id;
  d["layer"] = m.layer;
  d["hop_us"] = m.hop.count();
  d["frames"] = to_numpy(m.frames);
  return d;
}

ActivationMatrix make_activation(const std::string& utterance_id, int layer, const FloatArray& frames,
                                 std::int64_t hop_us) {
  if (layer < 0 || layer > 0xffff) throw DataError("layer out of range");
  ActivationMatrix m;
  m.utterance_id = utterance_id;
  m.layer = static_cast<std::uint16_t>(layer);
  m.hop = Microseconds(hop_us);
  m.frames = from_numpy(frames);
  return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the s3m core library.";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<CorruptionError>(m, "CorruptionError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  m.attr("ACTIVATION_FORMAT_VERSION") = kActivationFormatVersion;

  m.def(
      "encode_activation",
      [](const std::string& id, int layer, const FloatArray& frames, std::int64_t hop_us) {
        return py::bytes(encode_activation(make_activation(id, layer, frames, hop_us)));
      },
      py::arg("utterance_id"), py::arg("layer"), py::arg("frames"), py::arg("hop_us") = 20000);
  m.def(
      "write_activation",
      [](const fs::path& path, const std::string& id, int layer, const FloatArray& frames, std::int64_t hop_us) {
        write_activation_file(path, make_activation(id, layer, frames, hop_us));
      },
      py::arg("path"), py::arg("utterance_id"), py::arg("layer"), py::arg("frames"), py::arg("hop_us") = 20000,
      "Writes one activation file atomically.");
  m.def("read_activation", [](const fs::path& path) { return activation_dict(read_activation_file(path)); });
  m.def("decode_activation",
        [](const py::bytes& b) { return activation_dict(decode_activation(std::string(b))); });

  m.def(
      "frames_in_span",
      [](double onset, double offset, std::int64_t hop_us) {
        const auto r = frames_in_span(onset, offset, Microseconds(hop_us));
        return py::make_tuple(r.begin, r.end);
      },
      py::arg("onset_s"), py::arg("offset_s"), py::arg("hop_us") = 20000);

  m.def(
      "normalize_word_token",
      [](const std::string& line) {
        const auto t = parse_word_token(line);
        validate_token(t);
        return format_word_token(t);
      },
      "Parses and validates one alignment record; returns it in canonical form.");
  m.def("write_alignment_manifest", [](const fs::path& path, const std::vector<std::string>& lines) {
    std::vector<WordToken> tokens;
    for (const auto& l : lines) tokens.push_back(parse_word_token(l));
    write_alignment_manifest(path, tokens);
  });
  m.def("read_alignment_manifest", [](const fs::path& path) {
    std::vector<std::string> out;
    for (const auto& t : read_alignment_manifest(path)) out.push_back(format_word_token(t));
    return out;
  });

  m.def(
      "write_run_manifest",
      [](const fs::path& path, const std::string& split, int layer, const std::string& alignments,
         const std::vector<std::tuple<std::string, std::string, std::size_t>>& utterances) {
        RunManifest rm;
        rm.split = split;
        rm.layer = layer;
        rm.alignments = alignments;
        for (const auto& [id, p, n] : utterances) rm.utterances.push_back({id, p, n});
        write_run_manifest(path, rm);
      },
      py::arg("path"), py::arg("split"), py::arg("layer"), py::arg("alignments"), py::arg("utterances"));
  m.def(
      "validate_run_manifest",
      [](const fs::path& path, int layer) { return validate_run_manifest(read_run_manifest(path), layer).count(); },
      py::arg("path"), py::arg("layer") = -1, "Deep-checks a run manifest; returns the common hop in microseconds.");

  m.def("classify_allomorph", [](const std::string& phones) {
    const auto c = classify_allomorph(PhonForm::parse(phones, inventory()), inventory());
    return py::make_tuple(std::string(to_string(c.allomorph)), std::string(to_string(c.consistency)));
  });

  m.def("read_probe", [](const fs::path& path) {
    const auto p = read_probe_file(path);
    py::dict d;
    d["weights"] = to_numpy(p.weights);
    d["layer"] = p.layer;
    d["margin"] = p.margin;
    d["seed"] = p.metadata.seed;
    d["epochs_run"] = p.metadata.epochs_run;
    d["final_validation_loss"] = p.metadata.final_validation_loss;
    return d;
  });

  m.def("read_store", [](const fs::path& path) {
    const auto s = read_store_file(path);
    py::dict d;
    d["space"] = s.space();
    d["pooling"] = s.pooling();
    d["vectors"] = to_numpy(s.vectors());
    py::list words, refs;
    for (const auto& r : s.rows()) {
      words.append(r.word);
      refs.append(py::make_tuple(r.ref.utterance_id, r.ref.token_index));
    }
    d["words"] = words;
    d["refs"] = refs;
    return d;
  });

  m.def("welch_t", [](const std::vector<double>& a, const std::vector<double>& b) {
    const auto r = welch_t(a, b);
    py::dict d;
    d["t"] = r.t;
    d["df"] = r.df;
    d["p"] = r.p;
    d["infinite"] = r.infinite;
    return d;
  });

  m.def("sha256_hex", [](const py::bytes& b) { return sha256_hex(std::string(b)); });
  m.def("default_data_dir", [] { return default_data_dir(); });
}

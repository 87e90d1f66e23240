#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "twbsim/calibration.hpp"
#include "twbsim/discrimination.hpp"
#include "twbsim/experiment.hpp"

namespace py = pybind11;
using namespace twb;

namespace {

Field field_from_name(const std::string& name) {
  if (name == "mean_idler") return Field::MeanIdler;
  if (name == "mean_signal") return Field::MeanSignal;
  if (name == "fano_idler") return Field::FanoIdler;
  if (name == "fano_signal") return Field::FanoSignal;
  if (name == "R") return Field::R;
  throw std::invalid_argument("unknown field: " + name);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "twin-beam protocol simulator core";

  py::register_exception<CalibrationError>(m, "CalibrationError");
  py::register_exception<ConfigError>(m, "ConfigError");

  py::class_<SourceParams>(m, "SourceParams")
      .def(py::init<>())
      .def(py::init([](double mean, double modes) {
             return SourceParams{mean, modes};
           }),
           py::arg("mean"), py::arg("modes") = 1.0)
      .def_readwrite("mean", &SourceParams::mean)
      .def_readwrite("modes", &SourceParams::modes);

  py::class_<ChannelParams>(m, "ChannelParams")
      .def(py::init<>())
      .def_readwrite("eta", &ChannelParams::eta)
      .def_readwrite("t", &ChannelParams::t)
      .def_readwrite("twb", &ChannelParams::twb)
      .def_readwrite("noise0", &ChannelParams::noise0)
      .def_readwrite("noise1", &ChannelParams::noise1);

  py::class_<ShotRecord>(m, "ShotRecord")
      .def_readonly("m_idler", &ShotRecord::m_idler)
      .def_readonly("m_signal", &ShotRecord::m_signal);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("shots", &Dataset::shots)
      .def_readonly("bit", &Dataset::bit)
      .def_readonly("seed", &Dataset::seed)
      .def("__len__", [](const Dataset& d) { return d.shots.size(); });

  py::class_<BatchStats>(m, "BatchStats")
      .def_readonly("mean_idler", &BatchStats::mean_idler)
      .def_readonly("mean_signal", &BatchStats::mean_signal)
      .def_readonly("fano_idler", &BatchStats::fano_idler)
      .def_readonly("fano_signal", &BatchStats::fano_signal)
      .def_readonly("R", &BatchStats::R)
      .def_readonly("batch_size", &BatchStats::batch_size);

  py::class_<StatSummary>(m, "StatSummary")
      .def_readonly("mean", &StatSummary::mean)
      .def_readonly("std_error", &StatSummary::std_error)
      .def_readonly("n_batches", &StatSummary::n_batches);

  py::class_<RocPoint>(m, "RocPoint")
      .def_readonly("threshold", &RocPoint::threshold)
      .def_readonly("fpr", &RocPoint::fpr)
      .def_readonly("tpr", &RocPoint::tpr);

  py::class_<SweepPoint>(m, "SweepPoint")
      .def_readonly("fraction", &SweepPoint::fraction)
      .def_readonly("R_mean", &SweepPoint::R_mean)
      .def_readonly("R_std", &SweepPoint::R_std)
      .def_readonly("flag_rate", &SweepPoint::flag_rate);

  py::class_<CalibrationResult>(m, "CalibrationResult")
      .def_readonly("gain", &CalibrationResult::gain)
      .def_readonly("peak_positions", &CalibrationResult::peak_positions)
      .def_readonly("n_peaks", &CalibrationResult::n_peaks);

  m.def("pmf_multimode_thermal", &pmf_multimode_thermal, py::arg("m"), py::arg("params"));
  m.def(
      "sample_multimode_thermal",
      [](const SourceParams& params, std::size_t n, std::uint64_t seed) {
        Rng rng = substream(seed, tags::characterize, 0);
        std::vector<PhotonCount> out(n);
        for (auto& v : out) v = sample_multimode_thermal(params, rng);
        return out;
      },
      py::arg("params"), py::arg("n"), py::arg("seed"));
  m.def("fit_modes_by_moments",
        [](const std::vector<PhotonCount>& counts) { return fit_modes_by_moments(counts); });

  m.def("generate_dataset", &generate_dataset, py::arg("params"), py::arg("bit"),
        py::arg("n_shots"), py::arg("seed"), py::arg("threads") = 1);
  m.def(
      "predict_R",
      [](double mean_idler, const ChannelParams& params, int bit) {
        return predict_R(mean_idler, params, bit);
      },
      py::arg("mean_idler"), py::arg("params"), py::arg("bit") = -1);
  m.def(
      "max_noise_for_nonclassicality",
      [](double mean_idler, const ChannelParams& params,
         std::optional<double> noise_modes) -> py::object {
        const auto v = max_noise_for_nonclassicality(mean_idler, params, noise_modes);
        return v ? py::cast(*v) : py::none();
      },
      py::arg("mean_idler"), py::arg("params"), py::arg("noise_modes") = py::none());
  m.def("fano_detected", &fano_detected, py::arg("fano_incident"), py::arg("eta"));
  m.def("detected_idler_mean", &detected_idler_mean);

  m.def("batch_stats",
        [](const Dataset& ds) { return batch_stats(ds.shots); });
  m.def("r_standard_error",
        [](const Dataset& ds) { return r_standard_error(ds.shots); });
  m.def(
      "bootstrap_batches",
      [](const Dataset& ds, std::size_t batch_size, std::size_t n_batches, std::uint64_t seed,
         bool with_replacement, int threads) {
        Rng rng = substream(seed, tags::bootstrap, 0);
        BootstrapOptions opts;
        opts.with_replacement = with_replacement;
        opts.threads = threads;
        return bootstrap_batches(ds, batch_size, n_batches, rng, opts);
      },
      py::arg("dataset"), py::arg("batch_size"), py::arg("n_batches"), py::arg("seed"),
      py::arg("with_replacement") = true, py::arg("threads") = 1);
  m.def(
      "summarize",
      [](const std::vector<BatchStats>& stats, const std::string& field) {
        return summarize(stats, field_from_name(field));
      },
      py::arg("stats"), py::arg("field"));

  m.def("classify", &classify, py::arg("score"), py::arg("threshold"));
  m.def("midpoint_threshold", &midpoint_threshold);
  m.def(
      "error_probability",
      [](const std::vector<double>& scores0, const std::vector<double>& scores1,
         double threshold) {
        return error_probability(tally_scores(scores0, scores1, threshold));
      },
      py::arg("scores_bit0"), py::arg("scores_bit1"), py::arg("threshold"));
  m.def(
      "roc_curve",
      [](const std::vector<double>& s0, const std::vector<double>& s1) {
        return roc_curve(s0, s1);
      },
      py::arg("scores_bit0"), py::arg("scores_bit1"));
  m.def("auc", [](const std::vector<RocPoint>& roc) { return auc(roc); });

  m.def(
      "attack_sweep",
      [](const Dataset& ds, const std::vector<double>& fractions, std::size_t batch_size,
         std::size_t n_realizations, std::uint64_t seed, bool exact_mean,
         std::optional<double> R_ref, std::optional<double> sigma, double k, int threads) {
        Rng rng = substream(seed, tags::sweep, 0);
        SweepOptions opts;
        opts.mean_mode = exact_mean ? ResendMean::Exact : ResendMean::Estimated;
        if (R_ref && sigma) opts.detection = DetectionReference{*R_ref, *sigma, k};
        opts.threads = threads;
        return attack_sweep(ds, fractions, batch_size, n_realizations, rng, opts);
      },
      py::arg("dataset"), py::arg("fractions"), py::arg("batch_size"),
      py::arg("n_realizations"), py::arg("seed"), py::arg("exact_mean") = true,
      py::arg("R_ref") = py::none(), py::arg("sigma") = py::none(), py::arg("k") = 2.0,
      py::arg("threads") = 1);
  m.def("detect_attack", &detect_attack, py::arg("R"), py::arg("R_ref"), py::arg("sigma"),
        py::arg("k") = 2.0);

  m.def(
      "synth_pulse_heights",
      [](const std::vector<PhotonCount>& counts, double gain, double noise_sigma,
         std::uint64_t seed) {
        Rng rng = substream(seed, tags::calibration, 0);
        return synth_pulse_heights(counts, gain, noise_sigma, rng).amplitudes;
      },
      py::arg("counts"), py::arg("gain"), py::arg("noise_sigma"), py::arg("seed"));
  m.def(
      "estimate_gain",
      [](const std::vector<double>& amplitudes, double bin_width, double min_prominence) {
        return estimate_gain(PulseTrace{amplitudes, {}}, bin_width, min_prominence);
      },
      py::arg("amplitudes"), py::arg("bin_width") = 0.0, py::arg("min_prominence") = 0.05);
  m.def(
      "volts_to_photons",
      [](const std::vector<double>& amplitudes, double gain) {
        return volts_to_photons(PulseTrace{amplitudes, {}}, gain);
      },
      py::arg("amplitudes"), py::arg("gain"));

  m.def(
      "run",
      [](const std::string& subcommand, const std::filesystem::path& config_path) {
        const ExperimentConfig config = load_config(config_path);
        nlohmann::json result;
        if (subcommand == "characterize")
          result = run_characterize(config);
        else if (subcommand == "discriminate")
          result = run_discriminate(config);
        else if (subcommand == "keysim")
          result = run_keysim(config);
        else if (subcommand == "attack")
          result = run_attack(config);
        else if (subcommand == "calibrate")
          result = run_calibrate(config);
        else
          throw std::invalid_argument("unknown subcommand: " + subcommand);
        return result.dump();
      },
      py::arg("subcommand"), py::arg("config_path"),
      "Run a pipeline stage; returns the summary as a JSON string.");
}

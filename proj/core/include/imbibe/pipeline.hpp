#ifndef IMBIBE_PIPELINE_HPP
#define IMBIBE_PIPELINE_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "imbibe/posterior.hpp"
#include "imbibe/smc.hpp"
#include "imbibe/solver.hpp"

namespace imbibe {

struct GridConfig {
    int nz = 100;
    double safety = 0.9;
    long max_steps = 50'000'000;
};

/// Fully resolved description of one calibration or simulation run.
struct RunConfig {
    std::string model;  ///< "NN" or "BkP"
    PriorSpec prior;
    ExperimentSetup setup;
    GridConfig grid;
    SmcConfig smc;
    std::string data_path;  ///< exactly one of data_path / synthetic_truth
    std::map<std::string, double> synthetic_truth;
    double noise_sd = 0.0;
    std::string output_dir;
    int histogram_bins = 40;
    double credible_level = 0.95;

    void validate() const;
};

/// Parse a JSON run configuration. Relative data paths resolve against the
/// config file's directory; the IMBIBE_OUTPUT_DIR environment variable, when
/// set, overrides output_dir.
RunConfig load_config(const std::filesystem::path& path);

std::string config_to_json(const RunConfig& cfg);

/// Two-column CSV `time_hours,q_g_per_cm2`; hours are converted to seconds.
ImbibitionCurve load_measurements(const std::filesystem::path& path);
void write_measurements(const std::filesystem::path& path, const ImbibitionCurve& curve);

/// Maps sampled coordinates to a concrete absorption model and experiment
/// setup (k_log and n0 fall back to the base setup when not calibrated), and
/// defines the reported coordinate space (sampled coordinates with derived
/// parameters such as gamma substituted for their sampled stand-ins).
class ParameterBinding {
  public:
    explicit ParameterBinding(const RunConfig& cfg);

    AbsorptionModel model_at(std::span<const double> theta) const;
    ExperimentSetup setup_at(std::span<const double> theta) const;
    AbsorptionModel model_from(const std::map<std::string, double>& values) const;
    ExperimentSetup setup_from(const std::map<std::string, double>& values) const;

    const std::vector<std::string>& report_names() const { return report_names_; }
    const std::vector<double>& report_lower() const { return report_lower_; }
    const std::vector<double>& report_upper() const { return report_upper_; }
    std::vector<double> to_report(std::span<const double> theta) const;

    DistanceFn make_distance(const ImbibitionCurve& observed) const;

  private:
    std::optional<double> resolve(std::span<const double> theta, const std::string& name) const;

    const RunConfig& cfg_;
    std::vector<std::string> report_names_;
    std::vector<double> report_lower_, report_upper_;
};

/// Forward run at the configured truth, sampled at the measurement schedule;
/// optional additive gaussian noise (off by default).
ImbibitionCurve generate_synthetic(const RunConfig& cfg);

/// End-to-end calibration: observation ingest or synthesis, ABC-SMC, and the
/// full set of file outputs (populations, diagnostics, summary, correlation,
/// PCA, marginals, fit curve, calibrated B' curve, manifest).
void run_calibration(const RunConfig& cfg, bool dry_run = false);

/// Recompute summary/correlation/PCA/marginals from previously written
/// population snapshots (directory containing gen_<t>.csv; the run manifest
/// must sit in its parent directory).
void analyze_populations(const std::filesystem::path& populations_dir);

}  // namespace imbibe

#endif

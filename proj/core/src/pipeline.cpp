#include "imbibe/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "imbibe/csv.hpp"
#include "imbibe/rng.hpp"

namespace imbibe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kHour = 3600.0;

std::vector<double> log_spaced_times(double t_first, double t_final, int count) {
    if (count < 2) throw std::invalid_argument("schedule: need at least 2 measurements");
    if (!(t_first > 0.0 && t_first < t_final))
        throw std::invalid_argument("schedule: need 0 < t_first < t_final");
    std::vector<double> t(count);
    const double l0 = std::log(t_first), l1 = std::log(t_final);
    for (int i = 0; i < count; ++i)
        t[i] = std::exp(l0 + (l1 - l0) * i / (count - 1));
    t.back() = t_final;
    return t;
}

json prior_to_json(const PriorSpec& p) {
    json entries = json::array();
    for (const auto& e : p.entries)
        entries.push_back({{"name", e.name}, {"lower", e.lower}, {"upper", e.upper}});
    json derived = json::array();
    for (const auto& r : p.derived)
        derived.push_back({{"name", r.name}, {"addends", r.addends}, {"constant", r.constant}});
    return {{"entries", entries}, {"derived", derived}};
}

PriorSpec prior_from_json(const json& j) {
    PriorSpec p;
    for (const auto& e : j.at("entries"))
        p.entries.push_back({e.at("name"), e.at("lower"), e.at("upper")});
    if (j.contains("derived"))
        for (const auto& r : j.at("derived"))
            p.derived.push_back({r.at("name"), r.at("addends"), r.value("constant", 0.0)});
    return p;
}

}  // namespace

void RunConfig::validate() const {
    if (model != "NN" && model != "BkP")
        throw std::invalid_argument("config: model must be NN or BkP");
    prior.validate();
    setup.validate();
    smc.validate();
    if (data_path.empty() == synthetic_truth.empty())
        throw std::invalid_argument("config: exactly one of data_path / synthetic_truth required");
    if (output_dir.empty()) throw std::invalid_argument("config: output_dir required");
    if (histogram_bins < 1) throw std::invalid_argument("config: histogram_bins >= 1");
    if (!(credible_level > 0.0 && credible_level < 1.0))
        throw std::invalid_argument("config: credible_level in (0,1)");
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("config parse error in " + path.string() + ": " + e.what());
    }

    RunConfig cfg;
    cfg.model = j.at("model");
    cfg.prior = prior_from_json(j.at("prior"));

    const json& s = j.at("setup");
    cfg.setup.L = s.at("L");
    cfg.setup.h0 = s.at("h0");
    cfg.setup.T_final = s.contains("t_final_hours") ? double(s.at("t_final_hours")) * kHour
                                                    : double(s.at("t_final_seconds"));
    cfg.setup.n0 = s.at("n0");
    cfg.setup.k_log = s.at("k_log");
    cfg.setup.rho = s.value("rho", 1.0);
    if (s.contains("theta_ext"))
        cfg.setup.theta_ext = s.at("theta_ext");
    else
        cfg.setup.theta_ext =
            external_moisture(s.at("temperature_c"), s.at("relative_humidity"));

    if (s.contains("measurement_times_hours")) {
        for (double t : s.at("measurement_times_hours"))
            cfg.setup.measurement_times.push_back(t * kHour);
    } else if (s.contains("schedule")) {
        const json& sch = s.at("schedule");
        cfg.setup.measurement_times = log_spaced_times(
            double(sch.at("t_first_hours")) * kHour, cfg.setup.T_final,
            sch.at("n_measurements"));
    }

    if (j.contains("grid")) {
        const json& g = j.at("grid");
        cfg.grid.nz = g.value("nz", cfg.grid.nz);
        cfg.grid.safety = g.value("safety", cfg.grid.safety);
        cfg.grid.max_steps = g.value("max_steps", cfg.grid.max_steps);
    }
    if (j.contains("smc")) {
        const json& m = j.at("smc");
        cfg.smc.n_particles = m.value("n_particles", cfg.smc.n_particles);
        cfg.smc.max_generations = m.value("max_generations", cfg.smc.max_generations);
        cfg.smc.quantile_level = m.value("quantile_level", cfg.smc.quantile_level);
        cfg.smc.eps_min = m.value("eps_min", cfg.smc.eps_min);
        cfg.smc.phi_crit = m.value("phi_crit", cfg.smc.phi_crit);
        cfg.smc.ess_threshold = m.value("ess_threshold", cfg.smc.ess_threshold);
        cfg.smc.kernel_scale = m.value("kernel_scale", cfg.smc.kernel_scale);
        cfg.smc.seed = m.value("seed", cfg.smc.seed);
        cfg.smc.max_sims_per_generation =
            m.value("max_sims_per_generation", cfg.smc.max_sims_per_generation);
    }

    if (j.contains("data_path")) {
        fs::path dp = std::string(j.at("data_path"));
        if (dp.is_relative()) dp = path.parent_path() / dp;
        cfg.data_path = dp.string();
        if (!fs::exists(dp))
            throw std::runtime_error("config: data file does not exist: " + dp.string());
    }
    if (j.contains("synthetic_truth"))
        for (auto& [k, v] : j.at("synthetic_truth").items())
            cfg.synthetic_truth[k] = v;

    cfg.noise_sd = j.value("noise_sd", 0.0);
    cfg.output_dir = j.value("output_dir", "");
    if (const char* env = std::getenv("IMBIBE_OUTPUT_DIR"); env && *env) cfg.output_dir = env;
    cfg.histogram_bins = j.value("histogram_bins", 40);
    cfg.credible_level = j.value("credible_level", 0.95);

    // with real data the schedule comes from the file itself
    if (!cfg.data_path.empty()) {
        const ImbibitionCurve obs = load_measurements(cfg.data_path);
        cfg.setup.measurement_times = obs.times;
        cfg.setup.T_final = std::max(cfg.setup.T_final, obs.times.back());
    }

    cfg.validate();
    return cfg;
}

std::string config_to_json(const RunConfig& cfg) {
    json j;
    j["model"] = cfg.model;
    j["prior"] = prior_to_json(cfg.prior);
    j["setup"] = {{"L", cfg.setup.L},
                  {"h0", cfg.setup.h0},
                  {"t_final_seconds", cfg.setup.T_final},
                  {"n0", cfg.setup.n0},
                  {"k_log", cfg.setup.k_log},
                  {"theta_ext", cfg.setup.theta_ext},
                  {"rho", cfg.setup.rho},
                  {"measurement_times_seconds", cfg.setup.measurement_times}};
    j["grid"] = {{"nz", cfg.grid.nz}, {"safety", cfg.grid.safety},
                 {"max_steps", cfg.grid.max_steps}};
    j["smc"] = {{"n_particles", cfg.smc.n_particles},
                {"max_generations", cfg.smc.max_generations},
                {"quantile_level", cfg.smc.quantile_level},
                {"eps_min", cfg.smc.eps_min},
                {"phi_crit", cfg.smc.phi_crit},
                {"ess_threshold", cfg.smc.ess_threshold},
                {"kernel_scale", cfg.smc.kernel_scale},
                {"seed", cfg.smc.seed},
                {"max_sims_per_generation", cfg.smc.max_sims_per_generation},
                {"workers", cfg.smc.workers}};
    if (!cfg.data_path.empty()) j["data_path"] = cfg.data_path;
    if (!cfg.synthetic_truth.empty()) j["synthetic_truth"] = cfg.synthetic_truth;
    j["noise_sd"] = cfg.noise_sd;
    j["output_dir"] = cfg.output_dir;
    j["histogram_bins"] = cfg.histogram_bins;
    j["credible_level"] = cfg.credible_level;
    return j.dump(2);
}

ImbibitionCurve load_measurements(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open measurements: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty measurement file: " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "time_hours,q_g_per_cm2")
        throw std::runtime_error(path.string() + ":1: expected header 'time_hours,q_g_per_cm2'");

    ImbibitionCurve curve;
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line.back() == '\r') line.pop_back();
        const auto comma = line.find(',');
        const std::string where = path.string() + ":" + std::to_string(line_no);
        if (comma == std::string::npos)
            throw std::runtime_error(where + ": expected two comma-separated columns");
        const double t = csv::parse_double(line.substr(0, comma), where);
        const double q = csv::parse_double(line.substr(comma + 1), where);
        if (!curve.times.empty() && t * kHour <= curve.times.back())
            throw std::runtime_error(where + ": times must be strictly increasing (t = " +
                                     std::to_string(t) + " h)");
        if (q < 0.0)
            throw std::runtime_error(where + ": negative water content (q = " +
                                     std::to_string(q) + ")");
        curve.times.push_back(t * kHour);
        curve.q_values.push_back(q);
    }
    curve.validate();
    return curve;
}

void write_measurements(const fs::path& path, const ImbibitionCurve& curve) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << "time_hours,q_g_per_cm2\n";
    for (size_t i = 0; i < curve.times.size(); ++i)
        out << csv::format_double(curve.times[i] / kHour) << ","
            << csv::format_double(curve.q_values[i]) << "\n";
}

ParameterBinding::ParameterBinding(const RunConfig& cfg) : cfg_(cfg) {
    for (const auto& e : cfg.prior.entries) {
        bool replaced = false;
        for (const auto& r : cfg.prior.derived) {
            // report derived parameters in place of their sampled stand-in
            // (the last addend is the stand-in by convention: gamma for eta)
            if (!r.addends.empty() && r.addends.back() == e.name) {
                double lo = r.constant, hi = r.constant;
                for (const auto& n : r.addends) {
                    const auto& a = cfg.prior.entries[cfg.prior.index_of(n)];
                    lo += a.lower;
                    hi += a.upper;
                }
                report_names_.push_back(r.name);
                report_lower_.push_back(lo);
                report_upper_.push_back(hi);
                replaced = true;
                break;
            }
        }
        if (!replaced) {
            report_names_.push_back(e.name);
            report_lower_.push_back(e.lower);
            report_upper_.push_back(e.upper);
        }
    }
}

std::optional<double> ParameterBinding::resolve(std::span<const double> theta,
                                               const std::string& name) const {
    if (const int i = cfg_.prior.index_of(name); i >= 0) return theta[i];
    for (const auto& r : cfg_.prior.derived)
        if (r.name == name) return cfg_.prior.derived_value(r, theta);
    return std::nullopt;
}

std::vector<double> ParameterBinding::to_report(std::span<const double> theta) const {
    std::vector<double> out;
    out.reserve(report_names_.size());
    for (const auto& name : report_names_) out.push_back(*resolve(theta, name));
    return out;
}

AbsorptionModel ParameterBinding::model_at(std::span<const double> theta) const {
    const auto need = [&](const char* name) {
        const auto v = resolve(theta, name);
        if (!v) throw std::runtime_error(std::string("parameter not calibrated: ") + name);
        return *v;
    };
    if (cfg_.model == "NN") return {NNParams{need("a"), need("b"), need("c")}};
    return {BkPParams{need("a"), need("b"), need("d_tilde"), need("alpha"), need("gamma")}};
}

ExperimentSetup ParameterBinding::setup_at(std::span<const double> theta) const {
    ExperimentSetup s = cfg_.setup;
    if (const auto v = resolve(theta, "k_log")) s.k_log = *v;
    if (const auto v = resolve(theta, "n0")) s.n0 = *v;
    return s;
}

namespace {

double map_value(const std::map<std::string, double>& m, const std::string& name) {
    const auto it = m.find(name);
    if (it == m.end()) throw std::runtime_error("missing parameter value: " + name);
    return it->second;
}

}  // namespace

AbsorptionModel ParameterBinding::model_from(const std::map<std::string, double>& v) const {
    if (cfg_.model == "NN")
        return {NNParams{map_value(v, "a"), map_value(v, "b"), map_value(v, "c")}};
    double gamma;
    if (v.count("gamma")) {
        gamma = v.at("gamma");
    } else {
        gamma = map_value(v, "alpha") + 1.0 + map_value(v, "eta");
    }
    return {BkPParams{map_value(v, "a"), map_value(v, "b"), map_value(v, "d_tilde"),
                      map_value(v, "alpha"), gamma}};
}

ExperimentSetup ParameterBinding::setup_from(const std::map<std::string, double>& v) const {
    ExperimentSetup s = cfg_.setup;
    if (v.count("k_log")) s.k_log = v.at("k_log");
    if (v.count("n0")) s.n0 = v.at("n0");
    return s;
}

DistanceFn ParameterBinding::make_distance(const ImbibitionCurve& observed) const {
    const GridConfig grid = cfg_.grid;
    return [this, observed, grid](std::span<const double> theta) -> double {
        try {
            const AbsorptionModel model = model_at(theta);
            const ExperimentSetup setup = setup_at(theta);
            const SolverGrid g = stable_grid(setup, model, grid.nz, grid.safety, grid.max_steps);
            return discrepancy(simulate(setup, model, g), observed);
        } catch (const std::exception&) {
            return std::numeric_limits<double>::infinity();  // failed forward run
        }
    };
}

ImbibitionCurve generate_synthetic(const RunConfig& cfg) {
    const ParameterBinding binding(cfg);
    const AbsorptionModel model = binding.model_from(cfg.synthetic_truth);
    const ExperimentSetup setup = binding.setup_from(cfg.synthetic_truth);
    const SolverGrid grid = stable_grid(setup, model, cfg.grid.nz, cfg.grid.safety,
                                        cfg.grid.max_steps);
    ImbibitionCurve curve = simulate(setup, model, grid);
    if (cfg.noise_sd > 0.0) {
        SubstreamRng rng(cfg.smc.seed, 0, 0);
        for (double& q : curve.q_values) q = std::max(0.0, q + cfg.noise_sd * rng.normal());
    }
    return curve;
}

namespace {

void write_diagnostics(const fs::path& path, const std::vector<Population>& pops) {
    csv::Table t;
    t.header = {"generation", "epsilon", "ess", "acceptance_rate", "total_simulations",
                "resampled"};
    for (const auto& p : pops)
        t.rows.push_back({static_cast<double>(p.generation), p.epsilon, p.ess,
                          p.acceptance_rate, static_cast<double>(p.total_sims),
                          p.resampled ? 1.0 : 0.0});
    csv::write_table(path, t);
}

void write_population(const fs::path& path, const Population& pop,
                      const ParameterBinding& binding) {
    csv::Table t;
    t.header = binding.report_names();
    t.header.push_back("weight");
    t.header.push_back("distance");
    for (const auto& p : pop.particles) {
        auto row = binding.to_report(p.theta);
        row.push_back(p.weight);
        row.push_back(p.distance);
        t.rows.push_back(std::move(row));
    }
    csv::write_table(path, t);
}

void write_summary(const fs::path& path, const std::vector<std::string>& names,
                   const std::vector<IntervalSummary>& summaries) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << "parameter,median,lo,hi\n";
    for (size_t i = 0; i < names.size(); ++i)
        out << names[i] << "," << csv::format_double(summaries[i].median) << ","
            << csv::format_double(summaries[i].lo) << ","
            << csv::format_double(summaries[i].hi) << "\n";
}

void write_correlation(const fs::path& path, const std::vector<std::string>& names,
                       const Eigen::MatrixXd& corr) {
    csv::Table t;
    t.header = names;
    for (int i = 0; i < corr.rows(); ++i) {
        std::vector<double> row(corr.cols());
        for (int j = 0; j < corr.cols(); ++j) row[j] = corr(i, j);
        t.rows.push_back(std::move(row));
    }
    csv::write_table(path, t);
}

void write_pca(const fs::path& path, const std::vector<std::string>& names,
               const PcaResult& pca) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << "component,explained_fraction";
    for (const auto& n : names) out << ",loading_" << n;
    for (const auto& n : names) out << ",sq_loading_" << n;
    out << "\n";
    for (int k = 0; k < pca.explained_fractions.size(); ++k) {
        out << (k + 1) << "," << csv::format_double(pca.explained_fractions[k]);
        for (int j = 0; j < pca.loadings.rows(); ++j)
            out << "," << csv::format_double(pca.loadings(j, k));
        for (int j = 0; j < pca.squared_loadings.rows(); ++j)
            out << "," << csv::format_double(pca.squared_loadings(j, k));
        out << "\n";
    }
}

void write_marginals(const fs::path& dir, const std::vector<std::string>& names,
                     const std::vector<double>& lower, const std::vector<double>& upper,
                     const std::vector<WeightedSamples>& gens, int bins) {
    fs::create_directories(dir);
    for (size_t j = 0; j < names.size(); ++j) {
        csv::Table t;
        t.header = {"bin_center"};
        for (size_t g = 0; g < gens.size(); ++g)
            t.header.push_back("gen_" + std::to_string(g + 1));
        const double width = (upper[j] - lower[j]) / bins;
        std::vector<Histogram> hists;
        hists.reserve(gens.size());
        for (const auto& s : gens)
            hists.push_back(weighted_histogram(s, static_cast<int>(j), lower[j], upper[j], bins));
        for (int b = 0; b < bins; ++b) {
            std::vector<double> row{lower[j] + (b + 0.5) * width};
            for (const auto& h : hists) row.push_back(h.densities[b]);
            t.rows.push_back(std::move(row));
        }
        csv::write_table(dir / (names[j] + ".csv"), t);
    }
}

WeightedSamples report_samples(const Population& pop, const ParameterBinding& binding) {
    Population reported = pop;
    for (auto& p : reported.particles) p.theta = binding.to_report(p.theta);
    return WeightedSamples::from_population(reported);
}

void write_analysis_outputs(const fs::path& run_dir, const std::vector<std::string>& names,
                            const std::vector<double>& lower, const std::vector<double>& upper,
                            const std::vector<WeightedSamples>& gens, int bins, double nu) {
    const WeightedSamples& last = gens.back();
    write_summary(run_dir / "summary.csv", names, summarize(last, nu));
    write_correlation(run_dir / "correlation.csv", names, weighted_correlation(last));
    write_pca(run_dir / "pca.csv", names, weighted_pca(last, true));
    write_marginals(run_dir / "marginals", names, lower, upper, gens, bins);
}

}  // namespace

void run_calibration(const RunConfig& cfg, bool dry_run) {
    cfg.validate();
    if (dry_run) {
        // config echo only; no simulations, no files
        std::ostringstream oss;
        oss << config_to_json(cfg) << "\n";
        std::fputs(oss.str().c_str(), stdout);
        return;
    }

    const ParameterBinding binding(cfg);
    const ImbibitionCurve observed =
        cfg.data_path.empty() ? generate_synthetic(cfg) : load_measurements(cfg.data_path);
    for (double q : observed.q_values)
        if (!(q > 0.0))
            throw std::runtime_error("calibration requires strictly positive observed Q values");

    const fs::path run_dir(cfg.output_dir);
    fs::create_directories(run_dir / "populations");

    {
        json manifest;
        manifest["config"] = json::parse(config_to_json(cfg));
        manifest["report_space"] = {{"names", binding.report_names()},
                                    {"lower", binding.report_lower()},
                                    {"upper", binding.report_upper()}};
        manifest["observed_curve"] = {{"times_seconds", observed.times},
                                      {"q_values", observed.q_values}};
        std::ofstream out(run_dir / "manifest.json");
        out << manifest.dump(2) << "\n";
        if (!out) throw std::runtime_error("failed to write manifest");
    }

    const auto populations = run_smc(cfg.prior, binding.make_distance(observed), cfg.smc);

    for (const auto& pop : populations)
        write_population(run_dir / "populations" / ("gen_" + std::to_string(pop.generation) + ".csv"),
                         pop, binding);
    write_diagnostics(run_dir / "diagnostics.csv", populations);

    std::vector<WeightedSamples> gens;
    gens.reserve(populations.size());
    for (const auto& pop : populations) gens.push_back(report_samples(pop, binding));
    write_analysis_outputs(run_dir, binding.report_names(), binding.report_lower(),
                           binding.report_upper(), gens, cfg.histogram_bins,
                           cfg.credible_level);

    // forward run at the posterior median of the sampled coordinates
    const auto sampled_summary =
        summarize(WeightedSamples::from_population(populations.back()), cfg.credible_level);
    std::vector<double> median_theta(sampled_summary.size());
    for (size_t i = 0; i < sampled_summary.size(); ++i) median_theta[i] = sampled_summary[i].median;

    const AbsorptionModel median_model = binding.model_at(median_theta);
    const ExperimentSetup median_setup = binding.setup_at(median_theta);
    const SolverGrid median_grid =
        stable_grid(median_setup, median_model, cfg.grid.nz, cfg.grid.safety, cfg.grid.max_steps);
    const ImbibitionCurve fitted = simulate(median_setup, median_model, median_grid);

    {
        csv::Table t;
        t.header = {"time_hours", "q_observed", "q_simulated"};
        for (size_t i = 0; i < observed.times.size(); ++i)
            t.rows.push_back({observed.times[i] / kHour, observed.q_values[i],
                              fitted.q_values[i]});
        csv::write_table(run_dir / "fit_curve.csv", t);
    }
    {
        csv::Table t;
        t.header = {"s", "b_prime"};
        constexpr int kPoints = 500;
        for (int i = 0; i <= kPoints; ++i) {
            const double s = static_cast<double>(i) / kPoints;
            t.rows.push_back({s, b_prime(median_model, s)});
        }
        csv::write_table(run_dir / "bprime_curve.csv", t);
    }
}

void analyze_populations(const fs::path& populations_dir) {
    const fs::path run_dir = populations_dir.parent_path();
    std::ifstream in(run_dir / "manifest.json");
    if (!in)
        throw std::runtime_error("manifest.json not found next to " + populations_dir.string());
    json manifest;
    in >> manifest;

    const std::vector<std::string> names = manifest.at("report_space").at("names");
    const std::vector<double> lower = manifest.at("report_space").at("lower");
    const std::vector<double> upper = manifest.at("report_space").at("upper");
    const int bins = manifest.at("config").value("histogram_bins", 40);
    const double nu = manifest.at("config").value("credible_level", 0.95);

    std::vector<WeightedSamples> gens;
    for (int g = 1;; ++g) {
        const fs::path p = populations_dir / ("gen_" + std::to_string(g) + ".csv");
        if (!fs::exists(p)) break;
        const csv::Table t = csv::read_table(p);
        if (t.header.size() != names.size() + 2)
            throw std::runtime_error("unexpected column count in " + p.string());
        Population pop;
        pop.generation = g;
        for (const auto& row : t.rows) {
            Particle part;
            part.theta.assign(row.begin(), row.end() - 2);
            part.weight = row[row.size() - 2];
            part.distance = row.back();
            pop.particles.push_back(std::move(part));
        }
        gens.push_back(WeightedSamples::from_population(pop));
    }
    if (gens.empty())
        throw std::runtime_error("no gen_<t>.csv files in " + populations_dir.string());

    write_analysis_outputs(run_dir, names, lower, upper, gens, bins, nu);
}

}  // namespace imbibe

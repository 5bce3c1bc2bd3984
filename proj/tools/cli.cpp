#include "cli.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "netstrat/error.hpp"
#include "netstrat/estimands.hpp"
#include "netstrat/fit.hpp"
#include "netstrat/model.hpp"
#include "netstrat/rng.hpp"
#include "netstrat/sampler.hpp"
#include "netstrat/simulate.hpp"
#include "netstrat/strata.hpp"
#include "netstrat/study_data.hpp"

namespace netstrat::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Options {
  std::string classes, students, edges, out = ".", config, draws;
  std::optional<std::uint64_t> seed;
  std::optional<int> chains, warmup, samples, threads;
  std::string s_grid, contrasts;
  int replicates = 2000;
  int points = 20;
  double step = 1e-5;
};

json read_json(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path, 0, e.what());
  }
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

fs::path output_dir(const Options& o) {
  fs::path dir(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + o.out);
  return dir;
}

int resolve_threads(const Options& o) {
  if (o.threads) return *o.threads;
  if (const char* env = std::getenv("NETSTRAT_THREADS")) {
    try {
      const int t = std::stoi(env);
      if (t >= 1) return t;
    } catch (const std::exception&) {
    }
    throw ValidationError(std::string("NETSTRAT_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

void require_inputs(const Options& o) {
  if (o.classes.empty() || o.students.empty() || o.edges.empty())
    throw ValidationError("--classes, --students and --edges are required");
}

StudyData load(const Options& o, const json& config) {
  require_inputs(o);
  return load_study(o.classes, o.students, o.edges, config);
}

PriorConfig prior_from(const json& config) {
  PriorConfig p;
  if (config.contains("prior")) {
    const auto& j = config.at("prior");
    p.sd_strata_coef = j.value("sd_strata_coef", p.sd_strata_coef);
    p.sd_outcome_coef = j.value("sd_outcome_coef", p.sd_outcome_coef);
    p.sd_sigma = j.value("sd_sigma", p.sd_sigma);
  }
  p.validate();
  return p;
}

json prior_json(const PriorConfig& p) {
  return {{"sd_strata_coef", p.sd_strata_coef},
          {"sd_outcome_coef", p.sd_outcome_coef},
          {"sd_sigma", p.sd_sigma}};
}

ModelOptions model_from(const json& config) {
  ModelOptions m;
  if (config.contains("model")) m.free_beta_s_arm3 = config.at("model").value("free_beta_s_arm3", false);
  return m;
}

class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)) {}

  void input(const std::string& role, const std::string& path) {
    if (path.empty()) return;
    inputs_.push_back({{"role", role}, {"path", path}, {"sha256", sha256_file(path)}});
  }
  void output(const fs::path& path) {
    outputs_.push_back({{"file", path.filename().string()}, {"sha256", sha256_file(path)}});
  }
  void set(const std::string& key, json value) { settings_[key] = std::move(value); }

  void write(const fs::path& dir) const {
    write_json({{"tool", "netstrat"},
                {"version", kVersion},
                {"command", command_},
                {"settings", settings_},
                {"inputs", inputs_},
                {"outputs", outputs_}},
               dir / "manifest.json");
  }

 private:
  std::string command_;
  json settings_ = json::object();
  json inputs_ = json::array();
  json outputs_ = json::array();
};

void add_study_inputs(Manifest& m, const Options& o) {
  m.input("classes", o.classes);
  m.input("students", o.students);
  m.input("edges", o.edges);
  m.input("config", o.config);
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_validate(const Options& o, std::ostream& out) {
  const json config = read_json(o.config);
  const StudyData data = load(o, config);
  const json report = validation_report(data);
  out << report.dump(2) << '\n';
  const auto dir = output_dir(o);
  write_json(report, dir / "validation.json");
  Manifest m("validate");
  add_study_inputs(m, o);
  m.output(dir / "validation.json");
  m.write(dir);
  return kOk;
}

int cmd_mom(const Options& o, std::ostream& out) {
  const json config = read_json(o.config);
  const StudyData data = load(o, config);
  const std::uint64_t seed = o.seed.value_or(20140101);
  const MomEstimate est = mom_estimate(data, seed, o.replicates);
  out << std::fixed << std::setprecision(4);
  for (Stratum g : kAllStrata)
    out << code(g) << ' ' << std::setw(22) << std::left << label(g) << std::right << ' '
        << est.proportions[index(g)] << "  (se " << est.standard_errors[index(g)] << ")\n";
  if (est.monotonicity_violation) out << "warning: negative moment estimate; monotonicity is doubtful\n";
  const auto dir = output_dir(o);
  write_json(est.to_json(), dir / "mom.json");
  Manifest m("mom");
  add_study_inputs(m, o);
  m.set("seed", seed);
  m.set("replicates", o.replicates);
  m.output(dir / "mom.json");
  m.write(dir);
  return kOk;
}

SamplerConfig sampler_from(const Options& o, const json& config) {
  SamplerConfig s;
  s.apply_json(config);
  if (o.chains) s.chains = *o.chains;
  if (o.warmup) s.warmup = *o.warmup;
  if (o.samples) s.samples = *o.samples;
  if (o.seed) s.seed = *o.seed;
  s.threads = resolve_threads(o);
  s.validate();
  return s;
}

int cmd_fit(const Options& o, std::ostream& out) {
  const json config = read_json(o.config);
  const StudyData data = load(o, config);
  const PriorConfig prior = prior_from(config);
  const ModelOptions options = model_from(config);
  const SamplerConfig sampler = sampler_from(o, config);
  const auto dir = output_dir(o);

  const FitResult fit = fit_model(data, prior, options, sampler);
  write_draws_csv(fit.draws, dir / "draws.csv");

  json summary = {{"parameters", fit.layout.size()},
                  {"step_size", fit.step_sizes},
                  {"warmup_divergences", fit.warmup_divergences}};
  if (sampler.chains >= 2 && sampler.samples >= 4) {
    const Diagnostics diag = diagnose(fit.draws);
    write_json(diag.to_json(), dir / "diagnostics.json");
    summary["max_rhat"] = std::isfinite(diag.max_rhat) ? json(diag.max_rhat) : json(nullptr);
    summary["min_ess"] = std::isfinite(diag.min_ess) ? json(diag.min_ess) : json(nullptr);
    summary["divergences"] = diag.divergences;
    out << "draws: " << fit.draws.size() << ", max R-hat " << diag.max_rhat << ", min ESS "
        << diag.min_ess << ", divergences " << diag.divergences << '\n';
  } else {
    out << "draws: " << fit.draws.size() << " (diagnostics need 2 chains and 4 draws)\n";
  }
  write_json(summary, dir / "fit.json");

  Manifest m("fit");
  add_study_inputs(m, o);
  m.set("sampler", sampler.to_json());
  m.set("prior", prior_json(prior));
  m.set("model", {{"free_beta_s_arm3", options.free_beta_s_arm3}});
  m.set("seed", sampler.seed);
  m.output(dir / "draws.csv");
  if (fs::exists(dir / "diagnostics.json")) m.output(dir / "diagnostics.json");
  m.output(dir / "fit.json");
  m.write(dir);
  return kOk;
}

int cmd_estimate(const Options& o, std::ostream& out) {
  const json config = read_json(o.config);
  const fs::path draws_path = o.draws.empty() ? fs::path(o.out) / "draws.csv" : fs::path(o.draws);
  if (!fs::exists(draws_path))
    throw ValidationError("no posterior draws at " + draws_path.string() +
                          "; run `netstrat fit` first or pass --draws");
  const StudyData data = load(o, config);
  const ModelOptions options = model_from(config);
  const Draws draws = read_draws_csv(draws_path);
  const ParameterLayout layout = layout_for_draws(draws, data, options);

  EstimandRequest request;
  request.apply_json(config);
  if (!o.contrasts.empty()) request.contrasts = parse_contrasts(o.contrasts);
  if (!o.s_grid.empty()) request.s_grid = parse_grid(o.s_grid);
  if (o.seed) request.seed = *o.seed;
  request.threads = resolve_threads(o);
  request.validate();

  const EstimandDraws est = compute_estimands(data, draws, layout, request);
  const auto dir = output_dir(o);
  write_estimands_csv(est, dir / "estimands.csv");
  write_strata_shares_csv(est, dir / "strata_shares.csv");
  write_homophily_csv(est, dir / "homophily.csv");
  write_json(stratum_profiles(est), dir / "profiles.json");
  out << "estimands: " << est.effects.size() << " effects x 4 strata over " << est.n_draws
      << " draws\n";

  Manifest m("estimate");
  add_study_inputs(m, o);
  m.input("draws", draws_path.string());
  m.set("estimands", request.to_json());
  m.set("model", {{"free_beta_s_arm3", options.free_beta_s_arm3}});
  m.set("seed", request.seed);
  for (const char* f : {"estimands.csv", "strata_shares.csv", "homophily.csv", "profiles.json"})
    m.output(dir / f);
  m.write(dir);
  return kOk;
}

int cmd_simulate(const Options& o, std::ostream& out) {
  const json config = read_json(o.config);
  SimConfig sim_config =
      config.contains("simulation") ? SimConfig::from_json(config.at("simulation")) : SimConfig::defaults();
  if (o.seed) sim_config.seed = *o.seed;
  sim_config.validate();
  EstimandRequest request;
  request.apply_json(config);
  if (!o.contrasts.empty()) request.contrasts = parse_contrasts(o.contrasts);
  if (!o.s_grid.empty()) request.s_grid = parse_grid(o.s_grid);
  request.validate();

  const SimulatedStudy sim = generate(sim_config);
  const auto dir = output_dir(o);
  write_study(sim.data, dir / "classes.csv", dir / "students.csv", dir / "edges.csv");
  write_json(sim.data.covariate_spec().to_json(), dir / "covariates.json");
  write_json(truth_to_json(sim_config, sim, request), dir / "truth.json");
  const auto shares = sim.truth.shares();
  out << "simulated " << sim.data.n_classes() << " classes, " << sim.data.n_students()
      << " students; true shares";
  for (Stratum g : kAllStrata) out << ' ' << code(g) << '=' << shares[index(g)];
  out << '\n';

  Manifest m("simulate");
  m.input("config", o.config);
  m.set("simulation", sim_config.to_json());
  m.set("seed", sim_config.seed);
  for (const char* f : {"classes.csv", "students.csv", "edges.csv", "covariates.json", "truth.json"})
    m.output(dir / f);
  m.write(dir);
  return kOk;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  const json config = read_json(o.config);
  const StudyData data = load(o, config);
  const Posterior post(data, prior_from(config), model_from(config));
  const std::uint64_t seed = o.seed.value_or(1);
  const std::size_t dim = post.dim();
  std::vector<double> theta(dim), grad(dim), scratch(dim);
  double worst = 0.0;
  std::size_t failures = 0;
  for (int p = 0; p < o.points; ++p) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(p));
    for (auto& v : theta) v = 2.0 * uniform01(rng) - 1.0;
    post.log_density_gradient(theta, grad);
    for (std::size_t k = 0; k < dim; ++k) {
      const double saved = theta[k];
      theta[k] = saved + o.step;
      const double up = post.log_density(theta);
      theta[k] = saved - o.step;
      const double down = post.log_density(theta);
      theta[k] = saved;
      const double fd = (up - down) / (2.0 * o.step);
      const double diff = std::abs(fd - grad[k]);
      const double scale = std::max(std::abs(fd), std::abs(grad[k]));
      const double rel = scale > 0.0 ? diff / scale : 0.0;
      if (diff > 1e-8 && rel > 1e-5) ++failures;
      if (diff > 1e-8) worst = std::max(worst, rel);
    }
  }
  out << "gradient check: " << o.points << " points x " << dim << " coordinates, worst relative error "
      << worst << ", failures " << failures << '\n';
  const auto dir = output_dir(o);
  write_json({{"points", o.points}, {"dimension", dim}, {"step", o.step},
              {"worst_relative_error", worst}, {"failures", failures}},
             dir / "gradcheck.json");
  Manifest m("gradcheck");
  add_study_inputs(m, o);
  m.set("seed", seed);
  m.output(dir / "gradcheck.json");
  m.write(dir);
  return failures == 0 ? kOk : kValidation;
}

int cmd_diagnose(const Options& o, std::ostream& out) {
  const fs::path draws_path = o.draws.empty() ? fs::path(o.out) / "draws.csv" : fs::path(o.draws);
  if (!fs::exists(draws_path)) throw ValidationError("no posterior draws at " + draws_path.string());
  const Draws draws = read_draws_csv(draws_path);
  const Diagnostics diag = diagnose(draws);
  out << "parameters " << diag.parameters.size() << ", max R-hat " << diag.max_rhat << ", min ESS "
      << diag.min_ess << ", divergences " << diag.divergences << '\n';
  for (const auto& p : diag.parameters)
    if (p.rhat > 1.01) out << "  " << p.name << ": R-hat " << p.rhat << ", ESS " << p.ess_bulk << '\n';
  const auto dir = output_dir(o);
  write_json(diag.to_json(), dir / "diagnostics.json");
  Manifest m("diagnose");
  m.input("draws", draws_path.string());
  m.output(dir / "diagnostics.json");
  m.write(dir);
  return kOk;
}

}  // namespace

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int{md[i]};
  return hex.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Principal stratification with network mediators"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Options o;

  auto add_data = [&o](CLI::App* c) {
    c->add_option("--classes", o.classes, "classes.csv (class_id, z)");
    c->add_option("--students", o.students, "students.csv (student_id, class_id, m, y, covariates)");
    c->add_option("--edges", o.edges, "edges.csv (student_id_a, student_id_b)");
  };
  auto add_common = [&o](CLI::App* c) {
    c->add_option("--out", o.out, "output directory")->capture_default_str();
    c->add_option("--config", o.config, "JSON configuration file");
  };
  auto add_seed = [&o](CLI::App* c) { c->add_option("--seed", o.seed, "random seed"); };
  auto add_threads = [&o](CLI::App* c) {
    c->add_option("--threads", o.threads, "worker threads (default $NETSTRAT_THREADS or 1)")
        ->check(CLI::PositiveNumber);
  };

  auto* validate = app.add_subcommand("validate", "check input files and report study structure");
  add_data(validate);
  add_common(validate);

  auto* mom = app.add_subcommand("mom", "method-of-moments strata proportions");
  add_data(mom);
  add_common(mom);
  add_seed(mom);
  mom->add_option("--replicates", o.replicates, "cluster bootstrap replicates")->check(CLI::PositiveNumber);

  auto* fit = app.add_subcommand("fit", "sample the posterior and write draws.csv");
  add_data(fit);
  add_common(fit);
  add_seed(fit);
  add_threads(fit);
  fit->add_option("--chains", o.chains)->check(CLI::PositiveNumber);
  fit->add_option("--warmup", o.warmup)->check(CLI::NonNegativeNumber);
  fit->add_option("--samples", o.samples)->check(CLI::PositiveNumber);

  auto* estimate = app.add_subcommand("estimate", "causal estimands from posterior draws");
  add_data(estimate);
  add_common(estimate);
  add_seed(estimate);
  add_threads(estimate);
  estimate->add_option("--draws", o.draws, "draws file (default <out>/draws.csv)");
  estimate->add_option("--s-grid", o.s_grid, "mediator values, e.g. 0,0.1,0.2");
  estimate->add_option("--contrasts", o.contrasts, "contrasts, e.g. 2v1,3v2,3v1");

  auto* simulate = app.add_subcommand("simulate", "generate a synthetic study with known truth");
  add_common(simulate);
  add_seed(simulate);
  simulate->add_option("--s-grid", o.s_grid, "mediator values for the stored oracle estimands");
  simulate->add_option("--contrasts", o.contrasts, "contrasts for the stored oracle estimands");

  auto* gradcheck = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  add_data(gradcheck);
  add_common(gradcheck);
  add_seed(gradcheck);
  gradcheck->add_option("--points", o.points, "random parameter states")->check(CLI::PositiveNumber);
  gradcheck->add_option("--step", o.step, "finite-difference step")->check(CLI::PositiveNumber);

  auto* diag = app.add_subcommand("diagnose", "R-hat and effective sample sizes of a draws file");
  add_common(diag);
  diag->add_option("--draws", o.draws, "draws file (default <out>/draws.csv)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "netstrat: " << e.what() << '\n';
    return kValidation;
  }

  try {
    if (validate->parsed()) return cmd_validate(o, out);
    if (mom->parsed()) return cmd_mom(o, out);
    if (fit->parsed()) return cmd_fit(o, out);
    if (estimate->parsed()) return cmd_estimate(o, out);
    if (simulate->parsed()) return cmd_simulate(o, out);
    if (gradcheck->parsed()) return cmd_gradcheck(o, out);
    if (diag->parsed()) return cmd_diagnose(o, out);
  } catch (const ParseError& e) {
    err << "netstrat: parse error: " << e.what() << '\n';
    return kValidation;
  } catch (const ValidationError& e) {
    err << "netstrat: " << e.what() << '\n';
    return kValidation;
  } catch (const json::exception& e) {
    err << "netstrat: bad configuration: " << e.what() << '\n';
    return kValidation;
  } catch (const SamplerError& e) {
    err << "netstrat: sampler failed: " << e.what() << '\n';
    return kSampler;
  } catch (const IoError& e) {
    err << "netstrat: " << e.what() << '\n';
    return kIo;
  }
  return kValidation;
}

}  // namespace netstrat::cli

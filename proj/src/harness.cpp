#include "dmclab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "dmclab/errors.hpp"
#include "dmclab/parallel.hpp"

namespace dmclab::harness {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config resolution
// ---------------------------------------------------------------------------

namespace {

json default_document() {
  json doc;
  doc["schema_version"] = 1;
  doc["name"] = "";
  doc["master_seed"] = std::uint64_t{1};
  doc["jobs"] = 1;
  doc["budget"] = 10000;
  doc["task"] = "stability";
  doc["dataset"] = {{"distribution", "linear-regression"}, {"workers", 4},
                    {"per_worker", 8},  {"dim", 2},
                    {"feature_radius", 1.0}, {"planted_norm", 0.5},
                    {"noise", 0.0}};
  doc["loss"] = {{"kind", "logistic"}, {"radius", 1.0}};
  doc["minimax"] = {{"enabled", false}, {"coupling_scale", 0.5}, {"b_scale", 1.0},
                    {"c_scale", 1.0},   {"rho", 0.5},            {"radius_w", 1.0},
                    {"radius_v", 1.0}};
  doc["topology"] = {{"kind", "ring"}, {"workers", 0}, {"grid_rows", 0}};
  doc["chain"] = {{"kind", "uniform"}, {"states", 0}, {"hold", 0.5}, {"flip", 0.25},
                  {"chi2_slack", 4.0}, {"chi2_path_length", 100000}};
  doc["schedule"] = {{"kind", "constant"}, {"eta", 0.01}, {"values", json::array()}};
  doc["run"] = {{"horizon", 200},
                {"mode", "sgd"},
                {"order", "ctg"},
                {"lockstep_diagnostic", false},
                {"record",
                 {{"per_node", false},
                  {"consensus", true},
                  {"grad_norm", false},
                  {"sampled_indices", true}}}};
  doc["stability"] = {{"replications", 20}, {"subsample", 0},      {"output", "averaged"},
                      {"bound", "auto"},    {"per_pair_csv", false}};
  doc["bounds"] = {{"convention", "inclusive"},
                   {"nonsmooth_variant", "sqrt-gap"},
                   {"erm_norm", -1.0},
                   {"diameter_override", 0.0},
                   {"lambda_override", -1.0}};
  doc["sweep"] = {{"axes", json::object()}, {"cells", json::array()}};
  doc["output"] = {{"format", "csv"}};
  return doc;
}

void merge_section(json& target, const json& source, const std::string& path) {
  for (auto it = source.begin(); it != source.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!target.contains(it.key())) throw ConfigError("unknown config key: " + key);
    // Sweep axes and cells are free-form; axis names are checked when the
    // sweep is enumerated.
    if (key == "sweep.axes" || key == "sweep.cells") {
      target[it.key()] = it.value();
    } else if (target[it.key()].is_object() && it.value().is_object()) {
      merge_section(target[it.key()], it.value(), key);
    } else {
      target[it.key()] = it.value();
    }
  }
}

double label_bound_of(const problems::DatasetSpec& spec) {
  return spec.dist == problems::Distribution::LinearRegression
             ? spec.feature_radius * spec.planted_norm + spec.noise
             : 1.0;
}

}  // namespace

ExperimentConfig resolve_config(const json& raw) {
  json doc = default_document();
  merge_section(doc, raw, "");
  // Chain and gossip sizes are implied by the dataset; a raw document may
  // restate them but must agree.
  const int workers = doc["dataset"]["workers"].get<int>();
  const int per_worker = doc["dataset"]["per_worker"].get<int>();
  if (doc["topology"]["workers"].get<int>() == 0) doc["topology"]["workers"] = workers;
  if (doc["chain"]["states"].get<int>() == 0) doc["chain"]["states"] = per_worker;
  if (doc["topology"]["workers"].get<int>() != workers)
    throw ConfigError("topology worker count disagrees with the dataset");
  if (doc["chain"]["states"].get<int>() != per_worker)
    throw ConfigError("chain state count disagrees with the shard size");

  ExperimentConfig config;
  config.doc = std::move(doc);
  // Building every part validates it before any run starts.
  config.dataset();
  config.data_chain();
  config.gossip();
  if (config.doc["run"]["mode"].get<std::string>() == "sgda") {
    config.minimax();
  } else {
    config.loss();
  }
  config.schedule().resolve(config.doc["run"]["horizon"].get<int>());
  const std::string task = config.task();
  if (task != "stability" && task != "run" && task != "consensus" && task != "mixing")
    throw ConfigError("unknown task: " + task);
  return config;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  json raw;
  in >> raw;
  return resolve_config(raw);
}

problems::DatasetSpec ExperimentConfig::dataset() const {
  const json& d = doc.at("dataset");
  problems::DatasetSpec spec;
  spec.dist = problems::distribution_from_tag(d.at("distribution").get<std::string>());
  spec.workers = d.at("workers").get<int>();
  spec.per_worker = d.at("per_worker").get<int>();
  spec.dim = d.at("dim").get<int>();
  spec.feature_radius = d.at("feature_radius").get<double>();
  spec.planted_norm = d.at("planted_norm").get<double>();
  spec.noise = d.at("noise").get<double>();
  spec.seed = derive_seed(master_seed(), 401);
  if (spec.workers < 1 || spec.per_worker < 1 || spec.dim < 1)
    throw ConfigError("dataset needs positive sizes");
  return spec;
}

problems::LossSpec ExperimentConfig::loss() const {
  const problems::DatasetSpec spec = dataset();
  return problems::LossSpec::certify(
      problems::loss_from_tag(doc.at("loss").at("kind").get<std::string>()),
      spec.feature_radius, label_bound_of(spec), doc.at("loss").at("radius").get<double>());
}

problems::MinimaxLossSpec ExperimentConfig::minimax() const {
  const json& m = doc.at("minimax");
  const problems::DatasetSpec spec = dataset();
  const int dim = spec.dim;
  Eigen::MatrixXd coupling =
      m.at("coupling_scale").get<double>() * Eigen::MatrixXd::Identity(dim, dim);
  return problems::MinimaxLossSpec::certify(
      std::move(coupling), m.at("b_scale").get<double>(), m.at("c_scale").get<double>(),
      m.at("rho").get<double>(), spec.feature_radius, label_bound_of(spec),
      m.at("radius_w").get<double>(), m.at("radius_v").get<double>());
}

topology::GossipMatrix ExperimentConfig::gossip() const {
  const json& t = doc.at("topology");
  return topology::build(topology::kind_from_tag(t.at("kind").get<std::string>()),
                         t.at("workers").get<int>(), t.at("grid_rows").get<int>());
}

chain::TransitionMatrix ExperimentConfig::data_chain() const {
  const json& c = doc.at("chain");
  chain::Params params;
  params.hold = c.at("hold").get<double>();
  params.flip = c.at("flip").get<double>();
  return chain::build(chain::family_from_tag(c.at("kind").get<std::string>()),
                      c.at("states").get<int>(), params);
}

engine::Schedule ExperimentConfig::schedule() const {
  const json& s = doc.at("schedule");
  const std::string kind = s.at("kind").get<std::string>();
  if (kind == "constant") return engine::Schedule::constant(s.at("eta").get<double>());
  if (kind == "decreasing") return engine::Schedule::decreasing();
  if (kind == "explicit")
    return engine::Schedule::explicit_list(s.at("values").get<std::vector<double>>());
  throw ConfigError("unknown schedule kind: " + kind);
}

engine::RunConfig ExperimentConfig::run_config() const {
  const json& r = doc.at("run");
  engine::RunConfig config;
  const std::string mode = r.at("mode").get<std::string>();
  if (mode == "sgd") {
    config.mode = engine::Mode::Sgd;
    config.loss = loss();
  } else if (mode == "sgda") {
    config.mode = engine::Mode::Sgda;
    config.minimax = minimax();
  } else {
    throw ConfigError("unknown mode: " + mode);
  }
  config.order = engine::order_from_tag(r.at("order").get<std::string>());
  config.gossip = gossip();
  config.chain = data_chain();
  config.schedule = schedule();
  config.horizon = r.at("horizon").get<int>();
  config.seed = derive_seed(master_seed(), 402);
  config.lockstep_diagnostic = r.at("lockstep_diagnostic").get<bool>();
  const json& rec = r.at("record");
  config.record.per_node = rec.at("per_node").get<bool>();
  config.record.consensus = rec.at("consensus").get<bool>();
  config.record.grad_norm = rec.at("grad_norm").get<bool>();
  config.record.sampled_indices = rec.at("sampled_indices").get<bool>();
  return config;
}

stability::StabilityConfig ExperimentConfig::stability_config() const {
  stability::StabilityConfig config;
  config.data = dataset();
  config.run = run_config();
  config.output = doc.at("stability").at("output").get<std::string>() == "final"
                      ? stability::OutputKind::Final
                      : stability::OutputKind::Averaged;
  config.jobs = jobs();
  return config;
}

stability::PerturbationPlan ExperimentConfig::plan() const {
  stability::PerturbationPlan plan;
  plan.replications = doc.at("stability").at("replications").get<int>();
  const int subsample = doc.at("stability").at("subsample").get<int>();
  if (subsample > 0) plan.subsample = subsample;
  return plan;
}

bounds::BoundInputs ExperimentConfig::bound_inputs() const {
  bounds::BoundInputs inputs;
  const engine::RunConfig run = run_config();
  inputs.etas = run.schedule.resolve(run.horizon);
  inputs.consensus_rate = run.gossip.consensus_rate;
  const problems::DatasetSpec spec = dataset();
  inputs.workers = spec.workers;
  inputs.per_worker = spec.per_worker;
  if (run.mode == engine::Mode::Sgda) {
    inputs.lipschitz = run.minimax.lipschitz;
    inputs.smoothness = run.minimax.smoothness;
    inputs.strong_convexity = run.minimax.strong_convexity;
    inputs.diam_w = 2.0 * run.minimax.radius_w;
    inputs.diam_v = 2.0 * run.minimax.radius_v;
  } else {
    inputs.lipschitz = run.loss.lipschitz;
    inputs.smoothness = run.loss.smoothness.value_or(0.0);
    inputs.diam_w = 2.0 * run.loss.radius;
  }
  const chain::SpectralReport chain_report = chain::validate(run.chain);
  inputs.mixing_rate = chain_report.mixing_rate;
  inputs.mixing_cutoff = chain_report.mixing_cutoff.value_or(0);
  inputs.mixing_coeff = chain_report.mixing_coeff.value_or(0.0);
  const double erm_norm = doc.at("bounds").at("erm_norm").get<double>();
  inputs.erm_norm = erm_norm < 0.0 ? (run.mode == engine::Mode::Sgda ? run.minimax.radius_w
                                                                     : run.loss.radius)
                                   : erm_norm;
  // sup over samples of the loss at zero, from the certified data bounds.
  const double label_bound = label_bound_of(spec);
  switch (run.mode == engine::Mode::Sgda ? problems::LossKind::Zero : run.loss.kind) {
    case problems::LossKind::LeastSquares:
      inputs.sup_loss_at_zero = 0.5 * label_bound * label_bound;
      break;
    case problems::LossKind::Logistic: inputs.sup_loss_at_zero = std::log(2.0); break;
    case problems::LossKind::Hinge: inputs.sup_loss_at_zero = 1.0; break;
    case problems::LossKind::Zero: inputs.sup_loss_at_zero = 0.0; break;
  }
  const double diameter_override = doc.at("bounds").at("diameter_override").get<double>();
  if (diameter_override > 0.0) inputs.diameter_override = diameter_override;
  // Diagnostic knob for evaluating bounds at a consensus rate no shipped
  // topology realizes exactly.
  const double lambda_override = doc.at("bounds").at("lambda_override").get<double>();
  if (lambda_override >= 0.0) inputs.consensus_rate = lambda_override;
  return inputs;
}

std::string ExperimentConfig::task() const { return doc.at("task").get<std::string>(); }
std::uint64_t ExperimentConfig::master_seed() const {
  return doc.at("master_seed").get<std::uint64_t>();
}
int ExperimentConfig::jobs() const { return doc.at("jobs").get<int>(); }
long ExperimentConfig::budget() const { return doc.at("budget").get<long>(); }

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

std::vector<std::string> preset_names() {
  return {"smooth-scaling", "nonsmooth-scaling", "gtc-vs-ctg",
          "sgda-smooth",    "mixing-check",      "consensus-check"};
}

ExperimentConfig preset_experiment(const std::string& name) {
  json raw;
  raw["name"] = name;
  raw["master_seed"] = std::uint64_t{20260810};
  if (name == "smooth-scaling") {
    raw["task"] = "stability";
    raw["dataset"] = {{"distribution", "logistic-labels"}, {"workers", 4}, {"per_worker", 8},
                      {"dim", 2}, {"planted_norm", 1.0}};
    raw["loss"] = {{"kind", "logistic"}, {"radius", 1.0}};
    raw["topology"] = {{"kind", "ring"}};
    raw["schedule"] = {{"kind", "constant"}, {"eta", 0.01}};
    raw["run"] = {{"horizon", 200}, {"mode", "sgd"}, {"order", "ctg"}};
    raw["stability"] = {{"replications", 20}};
    raw["sweep"] = {{"axes", {{"horizon", {50, 100, 200, 400}}}}};
  } else if (name == "nonsmooth-scaling") {
    raw["task"] = "stability";
    raw["dataset"] = {{"distribution", "logistic-labels"}, {"workers", 4}, {"per_worker", 8},
                      {"dim", 2}, {"planted_norm", 1.0}};
    raw["loss"] = {{"kind", "hinge"}, {"radius", 1.0}};
    raw["topology"] = {{"kind", "ring"}};
    raw["schedule"] = {{"kind", "constant"}, {"eta", 0.01}};
    raw["run"] = {{"horizon", 200}, {"mode", "sgd"}, {"order", "ctg"}};
    raw["stability"] = {{"replications", 20}};
    raw["sweep"] = {{"axes", {{"horizon", {50, 100, 200, 400}}}}};
  } else if (name == "gtc-vs-ctg") {
    raw["task"] = "stability";
    raw["dataset"] = {{"distribution", "logistic-labels"}, {"workers", 4}, {"per_worker", 8},
                      {"dim", 2}, {"planted_norm", 1.0}};
    raw["loss"] = {{"kind", "logistic"}, {"radius", 1.0}};
    raw["topology"] = {{"kind", "ring"}};
    raw["schedule"] = {{"kind", "constant"}, {"eta", 0.01}};
    raw["run"] = {{"horizon", 200}, {"mode", "sgd"}, {"order", "ctg"}};
    raw["stability"] = {{"replications", 20}};
    raw["sweep"] = {{"axes", {{"order", {"ctg", "gtc"}}}}};
  } else if (name == "sgda-smooth") {
    raw["task"] = "stability";
    raw["dataset"] = {{"distribution", "linear-regression"}, {"workers", 4},
                      {"per_worker", 8}, {"dim", 2}, {"noise", 0.1}};
    raw["minimax"] = {{"enabled", true}, {"coupling_scale", 0.5}, {"rho", 0.5}};
    raw["topology"] = {{"kind", "ring"}};
    raw["schedule"] = {{"kind", "constant"}, {"eta", 0.003}};
    raw["run"] = {{"horizon", 200}, {"mode", "sgda"}, {"order", "ctg"}};
    raw["stability"] = {{"replications", 20}};
  } else if (name == "mixing-check") {
    raw["task"] = "mixing";
    raw["run"] = {{"horizon", 200}};
    raw["sweep"] = {{"cells",
                     json::array({{{"chain", "uniform"}, {"per_worker", 4}},
                                  {{"chain", "uniform"}, {"per_worker", 16}},
                                  {{"chain", "uniform"}, {"per_worker", 32}},
                                  {{"chain", "lazy-cycle"}, {"per_worker", 5}, {"hold", 0.5}},
                                  {{"chain", "lazy-cycle"}, {"per_worker", 16}, {"hold", 0.3}},
                                  {{"chain", "lazy-cycle"}, {"per_worker", 32}, {"hold", 0.7}},
                                  {{"chain", "two-state"}, {"per_worker", 2}, {"flip", 0.3}},
                                  {{"chain", "two-state"}, {"per_worker", 2}, {"flip", 0.1}}})}};
  } else if (name == "consensus-check") {
    raw["task"] = "consensus";
    raw["dataset"] = {{"distribution", "logistic-labels"}, {"workers", 8}, {"per_worker", 8},
                      {"dim", 2}, {"planted_norm", 1.0}};
    raw["loss"] = {{"kind", "logistic"}, {"radius", 1.0}};
    raw["topology"] = {{"kind", "ring"}};
    raw["schedule"] = {{"kind", "constant"}, {"eta", 0.01}};
    raw["run"] = {{"horizon", 500}, {"mode", "sgd"}, {"order", "ctg"}};
  } else {
    throw ConfigError("unknown preset: " + name);
  }
  return resolve_config(raw);
}

// ---------------------------------------------------------------------------
// Fingerprints and formatting
// ---------------------------------------------------------------------------

std::uint64_t fingerprint(const ExperimentConfig& config) {
  const std::string canonical = config.doc.dump();
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string fingerprint_hex(const ExperimentConfig& config) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fingerprint(config)));
  return buf;
}

std::string csv_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

std::string matrix_csv(const Eigen::MatrixXd& matrix) {
  std::string text;
  for (int i = 0; i < matrix.rows(); ++i) {
    for (int j = 0; j < matrix.cols(); ++j) {
      if (j) text += ',';
      text += csv_double(matrix(i, j));
    }
    text += '\n';
  }
  return text;
}

std::string config_header(const ExperimentConfig& config) {
  return "# fingerprint=" + fingerprint_hex(config) + " config=" + config.doc.dump() + "\n";
}

// Bound pairing for stability rows. NaN when no analytic bound applies.
double paired_bound(const ExperimentConfig& config) {
  const std::string which = config.doc.at("stability").at("bound").get<std::string>();
  if (which == "none") return std::numeric_limits<double>::quiet_NaN();
  const bounds::BoundInputs inputs = config.bound_inputs();
  const engine::RunConfig run = config.run_config();
  if (run.mode == engine::Mode::Sgda) return bounds::sgda_stability_bound(inputs, true);
  if (run.order == engine::UpdateOrder::GradientThenConsensus)
    return bounds::gtc_stability_bound(inputs);
  const bool smooth = run.loss.smoothness.has_value() && *run.loss.smoothness > 0.0;
  const auto schedule_kind = config.schedule().kind == engine::Schedule::Kind::Decreasing
                                 ? bounds::ScheduleKind::Decreasing
                                 : bounds::ScheduleKind::Constant;
  const auto variant =
      config.doc.at("bounds").at("nonsmooth_variant").get<std::string>() == "full-gap"
          ? bounds::NonsmoothVariant::FullGap
          : bounds::NonsmoothVariant::SqrtGap;
  if (which == "exact")
    return bounds::stability_bound_sgd(
        inputs, smooth,
        config.doc.at("bounds").at("convention").get<std::string>() == "lagged"
            ? bounds::SumConvention::Lagged
            : bounds::SumConvention::Inclusive);
  return bounds::closed_form_stability_bound(inputs, smooth, schedule_kind, variant);
}

struct SweepRow {
  std::string fingerprint;
  std::string task;
  std::string name;
  std::string topology;
  std::string chain;
  std::string order;
  std::string schedule;
  std::string mode;
  std::string loss;
  int workers = 0;
  int per_worker = 0;
  int dim = 0;
  int horizon = 0;
  double eta = 0.0;
  int replications = 0;
  double epsilon_hat = std::numeric_limits<double>::quiet_NaN();
  double epsilon_stderr = std::numeric_limits<double>::quiet_NaN();
  double bound_value = std::numeric_limits<double>::quiet_NaN();
  int dominated = -1;  // -1 = not applicable
  std::string metric;
  double metric_value = std::numeric_limits<double>::quiet_NaN();
  int holds = -1;
};

const char* kSweepHeader =
    "fingerprint,task,name,topology,chain,order,schedule,mode,loss,workers,per_worker,dim,"
    "horizon,eta,replications,epsilon_hat,epsilon_stderr,bound_value,dominated,metric,"
    "metric_value,holds\n";

std::string sweep_csv_cell(double v) { return std::isnan(v) ? std::string() : csv_double(v); }
std::string sweep_csv_flag(int v) { return v < 0 ? std::string() : std::to_string(v); }

std::string row_to_csv(const SweepRow& row) {
  std::ostringstream out;
  out << row.fingerprint << ',' << row.task << ',' << row.name << ',' << row.topology << ','
      << row.chain << ',' << row.order << ',' << row.schedule << ',' << row.mode << ','
      << row.loss << ',' << row.workers << ',' << row.per_worker << ',' << row.dim << ','
      << row.horizon << ',' << csv_double(row.eta) << ',' << row.replications << ','
      << sweep_csv_cell(row.epsilon_hat) << ',' << sweep_csv_cell(row.epsilon_stderr) << ','
      << sweep_csv_cell(row.bound_value) << ',' << sweep_csv_flag(row.dominated) << ','
      << row.metric << ',' << sweep_csv_cell(row.metric_value) << ','
      << sweep_csv_flag(row.holds) << '\n';
  return out.str();
}

SweepRow base_row(const ExperimentConfig& config) {
  SweepRow row;
  row.fingerprint = fingerprint_hex(config);
  row.task = config.task();
  row.name = config.doc.at("name").get<std::string>();
  row.topology = config.doc.at("topology").at("kind").get<std::string>();
  row.chain = config.doc.at("chain").at("kind").get<std::string>();
  row.order = config.doc.at("run").at("order").get<std::string>();
  row.schedule = config.doc.at("schedule").at("kind").get<std::string>();
  row.mode = config.doc.at("run").at("mode").get<std::string>();
  row.loss = row.mode == "sgda" ? "saddle" : config.doc.at("loss").at("kind").get<std::string>();
  row.workers = config.doc.at("dataset").at("workers").get<int>();
  row.per_worker = config.doc.at("dataset").at("per_worker").get<int>();
  row.dim = config.doc.at("dataset").at("dim").get<int>();
  row.horizon = config.doc.at("run").at("horizon").get<int>();
  row.eta = row.schedule == "constant" ? config.doc.at("schedule").at("eta").get<double>() : 0.0;
  return row;
}

SweepRow run_cell(const ExperimentConfig& config) {
  SweepRow row = base_row(config);
  const std::string task = config.task();
  if (task == "stability") {
    stability::StabilityConfig sc = config.stability_config();
    const double bound = paired_bound(config);
    if (!std::isnan(bound)) sc.bound = bound;
    const stability::StabilityReport report = stability::estimate_stability(sc, config.plan());
    row.replications = report.replications;
    row.epsilon_hat = report.epsilon_hat;
    row.epsilon_stderr = report.stderr_;
    row.bound_value = report.bound_value;
    row.dominated = std::isnan(report.bound_value) ? -1 : (report.dominated ? 1 : 0);
  } else if (task == "run") {
    const engine::RunConfig rc = config.run_config();
    const problems::Dataset data = problems::synth_dataset(config.dataset());
    const engine::Trajectory trajectory = engine::run(rc, data);
    row.metric = "final_empirical_risk";
    row.metric_value = rc.mode == engine::Mode::Sgd
                           ? problems::empirical_risk(rc.loss, trajectory.final_mean_w(), data)
                           : std::numeric_limits<double>::quiet_NaN();
  } else if (task == "consensus") {
    const engine::RunConfig rc = config.run_config();
    const problems::Dataset data = problems::synth_dataset(config.dataset());
    const engine::Trajectory trajectory = engine::run(rc, data);
    const bounds::BoundInputs inputs = config.bound_inputs();
    double worst = 0.0;
    bool ok = true;
    for (int t = 1; t <= rc.horizon; ++t) {
      const double bound = bounds::consensus_bound(inputs, t);
      const double err = engine::consensus_error(trajectory, t);
      if (bound > 0.0) worst = std::max(worst, err / bound);
      if (err > bound + 1e-9) ok = false;
    }
    row.metric = "max_consensus_ratio";
    row.metric_value = worst;
    row.holds = ok ? 1 : 0;
  } else if (task == "mixing") {
    const chain::TransitionMatrix tm = config.data_chain();
    const chain::SpectralReport report = chain::validate(tm);
    const int n = tm.size();
    const int horizon = config.doc.at("run").at("horizon").get<int>();
    Eigen::MatrixXd limit(n, n);
    for (int i = 0; i < n; ++i) limit.row(i) = report.stationary.transpose();
    Eigen::MatrixXd power = Eigen::MatrixXd::Identity(n, n);
    double worst = -std::numeric_limits<double>::infinity();
    for (int t = 0; t <= horizon; ++t) {
      const double gap = (limit - power).cwiseAbs().rowwise().sum().maxCoeff();
      const double envelope = chain::mixing_envelope(n, report.mixing_rate, t);
      worst = std::max(worst, gap - envelope);
      power = power * tm.rows;
    }
    // Sampled-path sanity: chi-squared fit against the stationary law. The
    // visit counts of a Markov path are autocorrelated, which inflates the
    // statistic by roughly the integrated autocorrelation time
    // (1 + lambda_2)/(1 - lambda_2); the configured threshold
    // df + slack sqrt(2 df) applies to the deflated statistic.
    const long length = config.doc.at("chain").at("chi2_path_length").get<long>();
    const double slack = config.doc.at("chain").at("chi2_slack").get<double>();
    bool path_ok = true;
    if (n > 1 && length > 0) {
      Rng rng(derive_seed(config.master_seed(), 403));
      const auto path = chain::sample_path(tm, 0, static_cast<int>(length), rng);
      Eigen::VectorXd counts = Eigen::VectorXd::Zero(n);
      for (int s : path) counts[s] += 1.0;
      double chi2 = 0.0;
      for (int s = 0; s < n; ++s) {
        const double expected = report.stationary[s] * static_cast<double>(length);
        chi2 += (counts[s] - expected) * (counts[s] - expected) / expected;
      }
      const double df = n - 1;
      const double corr = std::max(report.second_eigenvalue, 0.0);
      const double inflation = (1.0 + corr) / (1.0 - corr);
      path_ok = chi2 / inflation <= df + slack * std::sqrt(2.0 * df);
    }
    row.metric = "max_envelope_violation";
    row.metric_value = worst;
    row.holds = (worst <= 1e-12 && path_ok) ? 1 : 0;
  } else {
    throw ConfigError("unknown task: " + task);
  }
  return row;
}

// Canonical axis application order for sweeps.
const std::vector<std::string> kAxisOrder = {"workers", "per_worker", "dim",   "horizon",
                                             "eta",     "topology",   "chain", "order",
                                             "hold",    "flip"};

void apply_axis(json& raw, const std::string& axis, const json& value) {
  if (axis == "workers") raw["dataset"]["workers"] = value;
  else if (axis == "per_worker") raw["dataset"]["per_worker"] = value;
  else if (axis == "dim") raw["dataset"]["dim"] = value;
  else if (axis == "horizon") raw["run"]["horizon"] = value;
  else if (axis == "eta") raw["schedule"]["eta"] = value;
  else if (axis == "topology") raw["topology"]["kind"] = value;
  else if (axis == "chain") raw["chain"]["kind"] = value;
  else if (axis == "order") raw["run"]["order"] = value;
  else if (axis == "hold") raw["chain"]["hold"] = value;
  else if (axis == "flip") raw["chain"]["flip"] = value;
  else throw ConfigError("unknown sweep axis: " + axis);
}

std::vector<ExperimentConfig> enumerate_cells(const ExperimentConfig& config) {
  const json& sweep = config.doc.at("sweep");
  const json& axes = sweep.at("axes");
  const json& cells = sweep.at("cells");
  if (!axes.empty() && !cells.empty())
    throw ConfigError("sweep accepts either axes or explicit cells, not both");

  json base = config.doc;
  base["sweep"] = {{"axes", json::object()}, {"cells", json::array()}};
  // Implied sizes must be re-derived per cell.
  auto strip_implied = [](json raw) {
    raw["topology"]["workers"] = 0;
    raw["chain"]["states"] = 0;
    return raw;
  };

  std::vector<ExperimentConfig> out;
  if (!cells.empty()) {
    for (const json& cell : cells) {
      json raw = strip_implied(base);
      for (auto it = cell.begin(); it != cell.end(); ++it) apply_axis(raw, it.key(), it.value());
      out.push_back(resolve_config(raw));
    }
    return out;
  }

  std::vector<std::string> active;
  for (const std::string& axis : kAxisOrder)
    if (axes.contains(axis)) active.push_back(axis);
  for (auto it = axes.begin(); it != axes.end(); ++it)
    if (std::find(kAxisOrder.begin(), kAxisOrder.end(), it.key()) == kAxisOrder.end())
      throw ConfigError("unknown sweep axis: " + it.key());

  if (active.empty()) {
    out.push_back(resolve_config(strip_implied(base)));
    return out;
  }
  std::vector<std::size_t> index(active.size(), 0);
  while (true) {
    json raw = strip_implied(base);
    for (std::size_t a = 0; a < active.size(); ++a)
      apply_axis(raw, active[a], axes.at(active[a]).at(index[a]));
    out.push_back(resolve_config(raw));
    std::size_t pos = active.size();
    bool carried = true;
    while (pos > 0 && carried) {
      --pos;
      if (++index[pos] < axes.at(active[pos]).size()) {
        carried = false;
      } else {
        index[pos] = 0;
      }
    }
    if (carried) break;
  }
  return out;
}

long cell_run_count(const ExperimentConfig& config) {
  const std::string task = config.task();
  if (task == "mixing") return 0;
  if (task == "run" || task == "consensus") return 1;
  const stability::PerturbationPlan plan = config.plan();
  const long pairs = plan.subsample
                         ? *plan.subsample
                         : static_cast<long>(config.doc.at("dataset").at("workers").get<int>()) *
                               config.doc.at("dataset").at("per_worker").get<int>();
  return static_cast<long>(plan.replications) * (1 + pairs);
}

}  // namespace

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_validate(const ExperimentConfig& config) {
  json echo;
  echo["fingerprint"] = fingerprint_hex(config);
  echo["resolved"] = config.doc;
  std::printf("%s\n", echo.dump(2).c_str());
  return 0;
}

int cmd_run(const ExperimentConfig& config, const fs::path& out_dir) {
  const engine::RunConfig run = config.run_config();
  const problems::Dataset data = problems::synth_dataset(config.dataset());
  const engine::Trajectory trajectory = engine::run(run, data);
  const bool sgda = run.mode == engine::Mode::Sgda;

  std::string csv = config_header(config);
  csv += "t,eta";
  if (!trajectory.consensus_error.empty()) csv += ",consensus_error";
  if (!trajectory.grad_norm.empty()) csv += ",grad_norm";
  for (int j = 0; j < trajectory.node_mean_w.cols(); ++j) csv += ",w_bar_" + std::to_string(j);
  if (sgda)
    for (int j = 0; j < trajectory.node_mean_v.cols(); ++j) csv += ",v_bar_" + std::to_string(j);
  csv += '\n';
  for (int t = 0; t <= run.horizon; ++t) {
    csv += std::to_string(t);
    csv += ',';
    csv += csv_double(t == 0 ? 0.0 : trajectory.etas[static_cast<std::size_t>(t - 1)]);
    if (!trajectory.consensus_error.empty()) {
      csv += ',';
      csv += csv_double(trajectory.consensus_error[static_cast<std::size_t>(t)]);
    }
    if (!trajectory.grad_norm.empty()) {
      csv += ',';
      csv += csv_double(t == 0 ? 0.0 : trajectory.grad_norm[static_cast<std::size_t>(t - 1)]);
    }
    for (int j = 0; j < trajectory.node_mean_w.cols(); ++j) {
      csv += ',';
      csv += csv_double(trajectory.node_mean_w(t, j));
    }
    if (sgda) {
      for (int j = 0; j < trajectory.node_mean_v.cols(); ++j) {
        csv += ',';
        csv += csv_double(trajectory.node_mean_v(t, j));
      }
    }
    csv += '\n';
  }
  write_text(out_dir / "trajectory.csv", csv);
  write_text(out_dir / "gossip.csv", config_header(config) + matrix_csv(run.gossip.weights));
  write_text(out_dir / "chain.csv", config_header(config) + matrix_csv(run.chain.rows));
  std::string ds = config_header(config) + "worker,index";
  for (int j = 0; j < data.dim(); ++j) ds += ",x_" + std::to_string(j);
  ds += ",label\n";
  for (int r = 0; r < data.workers(); ++r) {
    for (int k = 0; k < data.per_worker(); ++k) {
      const problems::Sample& z = data.at(r, k);
      ds += std::to_string(r) + "," + std::to_string(k);
      for (int j = 0; j < data.dim(); ++j) {
        ds += ',';
        ds += csv_double(z.x[j]);
      }
      ds += ',';
      ds += csv_double(z.y);
      ds += '\n';
    }
  }
  write_text(out_dir / "dataset.csv", ds);
  if (trajectory.indices.size() > 0) {
    std::string idx = config_header(config) + "t";
    for (int i = 0; i < trajectory.indices.cols(); ++i) idx += ",worker_" + std::to_string(i);
    idx += '\n';
    for (int t = 0; t < trajectory.indices.rows(); ++t) {
      idx += std::to_string(t + 1);
      for (int i = 0; i < trajectory.indices.cols(); ++i) {
        idx += ',';
        idx += std::to_string(trajectory.indices(t, i));
      }
      idx += '\n';
    }
    write_text(out_dir / "indices.csv", idx);
  }
  // Exact replay document: rerunning with this config reproduces the run.
  json replay;
  replay["schema_version"] = 1;
  replay["fingerprint"] = fingerprint_hex(config);
  replay["resolved"] = config.doc;
  write_text(out_dir / "replay.json", replay.dump(2) + "\n");
  return 0;
}

int cmd_stability(const ExperimentConfig& config, const fs::path& out_dir) {
  stability::StabilityConfig sc = config.stability_config();
  const double bound = paired_bound(config);
  if (!std::isnan(bound)) sc.bound = bound;
  const stability::StabilityReport report = stability::estimate_stability(sc, config.plan());

  json doc;
  doc["schema_version"] = 1;
  doc["fingerprint"] = fingerprint_hex(config);
  doc["config"] = config.doc;
  doc["report"]["epsilon_hat"] = report.epsilon_hat;
  doc["report"]["stderr"] = report.stderr_;
  doc["report"]["replications"] = report.replications;
  doc["report"]["output"] = config.doc.at("stability").at("output");
  if (!std::isnan(report.bound_value)) {
    doc["report"]["bound_value"] = report.bound_value;
    doc["report"]["dominated"] = report.dominated;
  }
  write_text(out_dir / "stability.json", doc.dump(2) + "\n");
  if (config.doc.at("stability").at("per_pair_csv").get<bool>())
    write_text(out_dir / "per_pair.csv", config_header(config) + matrix_csv(report.per_pair));
  std::printf("epsilon_hat=%s stderr=%s bound=%s dominated=%s\n",
              csv_double(report.epsilon_hat).c_str(), csv_double(report.stderr_).c_str(),
              std::isnan(report.bound_value) ? "n/a" : csv_double(report.bound_value).c_str(),
              std::isnan(report.bound_value) ? "n/a" : (report.dominated ? "yes" : "no"));
  return 0;
}

int cmd_bounds(const ExperimentConfig& config, const fs::path& out_dir,
               const std::string& format_flag) {
  const std::string format =
      format_flag.empty() ? config.doc.at("output").at("format").get<std::string>()
                          : format_flag;
  const bounds::BoundInputs inputs = config.bound_inputs();
  const engine::RunConfig run = config.run_config();
  json values;
  auto record = [&values](const std::string& key, auto&& fn) {
    try {
      values[key] = fn();
    } catch (const std::exception& err) {
      values[key] = json{{"error", err.what()}};
    }
  };
  const auto schedule_kind = config.schedule().kind == engine::Schedule::Kind::Decreasing
                                 ? bounds::ScheduleKind::Decreasing
                                 : bounds::ScheduleKind::Constant;
  if (run.mode == engine::Mode::Sgd) {
    const bool smooth = run.loss.smoothness.has_value() && *run.loss.smoothness > 0.0;
    record("stability_exact_inclusive", [&] {
      return bounds::stability_bound_sgd(inputs, smooth, bounds::SumConvention::Inclusive);
    });
    record("stability_exact_lagged", [&] {
      return bounds::stability_bound_sgd(inputs, smooth, bounds::SumConvention::Lagged);
    });
    record("stability_closed_form", [&] {
      return bounds::closed_form_stability_bound(inputs, smooth, schedule_kind,
                                     bounds::NonsmoothVariant::SqrtGap);
    });
    if (!smooth)
      record("closed_form_full_gap_variant", [&] {
        return bounds::closed_form_stability_bound(inputs, smooth, schedule_kind,
                                       bounds::NonsmoothVariant::FullGap);
      });
    record("generalization_avg",
           [&] { return bounds::generalization_bound_avg(inputs, smooth); });
    record("gtc_stability", [&] { return bounds::gtc_stability_bound(inputs); });
    record("consensus_at_horizon",
           [&] { return bounds::consensus_bound(inputs, inputs.horizon()); });
    record("optimization_convex", [&] {
      const bounds::OptimizationBound opt = bounds::optimization_bound_convex(inputs, smooth);
      return json{{"drift", opt.drift},
                  {"init", opt.init},
                  {"consensus", opt.consensus},
                  {"mixing_tail", opt.mixing_tail},
                  {"stepsize_quad", opt.stepsize_quad},
                  {"total", opt.total}};
    });
  } else {
    record("sgda_stability_smooth", [&] { return bounds::sgda_stability_bound(inputs, true); });
    record("sgda_stability_nonsmooth_order",
           [&] { return bounds::sgda_stability_bound(inputs, false); });
    record("sgda_generalization_smooth", [&] {
      const bounds::SgdaGenBounds g = bounds::sgda_generalization_bounds(inputs, true);
      return json{{"weak_pd", g.weak_pd}, {"primal", g.primal}};
    });
  }
  if (inputs.consensus_rate > 0.0)
    record("c_lambda", [&] { return bounds::c_lambda(inputs.consensus_rate); });

  json doc;
  doc["schema_version"] = 1;
  doc["fingerprint"] = fingerprint_hex(config);
  doc["config"] = config.doc;
  doc["bounds"] = values;
  const std::string rendered = doc.dump(2) + "\n";
  if (format == "csv") {
    std::string csv = config_header(config) + "bound,value\n";
    for (auto it = values.begin(); it != values.end(); ++it)
      if (it.value().is_number()) csv += it.key() + "," + csv_double(it.value().get<double>()) + "\n";
    write_text(out_dir / "bounds.csv", csv);
  }
  write_text(out_dir / "bounds.json", rendered);
  std::printf("%s", rendered.c_str());
  return 0;
}

int cmd_sweep(const ExperimentConfig& config, const fs::path& out_dir) {
  const std::vector<ExperimentConfig> cells = enumerate_cells(config);
  long runs = 0;
  for (const ExperimentConfig& cell : cells) runs += cell_run_count(cell);
  std::printf("sweep: %zu cells, %ld trajectory runs (budget %ld)\n", cells.size(), runs,
              config.budget());
  if (runs > config.budget())
    throw ConfigError("sweep budget exceeded: " + std::to_string(runs) + " runs > " +
                      std::to_string(config.budget()));

  std::vector<SweepRow> rows(cells.size());
  parallel_for(static_cast<int>(cells.size()), config.jobs(), [&](int i) {
    rows[static_cast<std::size_t>(i)] = run_cell(cells[static_cast<std::size_t>(i)]);
  });

  std::string csv = config_header(config);
  csv += kSweepHeader;
  for (const SweepRow& row : rows) csv += row_to_csv(row);
  write_text(out_dir / "sweep.csv", csv);

  json summary;
  summary["schema_version"] = 1;
  summary["fingerprint"] = fingerprint_hex(config);
  summary["cells"] = cells.size();
  summary["trajectory_runs"] = runs;
  summary["budget"] = config.budget();
  write_text(out_dir / "sweep.json", summary.dump(2) + "\n");
  return 0;
}

int cmd_report(const std::vector<fs::path>& inputs, const fs::path& out_dir) {
  if (inputs.empty()) throw ConfigError("report needs at least one input csv");
  std::string header;
  std::vector<std::string> rows;
  std::vector<std::pair<std::string, long>> per_file;
  for (const fs::path& path : inputs) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    std::string line;
    bool saw_header = false;
    long count = 0;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      if (!saw_header) {
        if (header.empty()) {
          header = line;
        } else if (header != line) {
          throw ConfigError("input csvs have mismatched headers: " + path.string());
        }
        saw_header = true;
        continue;
      }
      rows.push_back(line);
      ++count;
    }
    per_file.emplace_back(path.string(), count);
  }

  std::string merged = header + "\n";
  for (const std::string& row : rows) merged += row + "\n";
  write_text(out_dir / "merged.csv", merged);

  long dominated = 0, with_bound = 0, holds = 0, with_holds = 0;
  for (const std::string& row : rows) {
    std::vector<std::string> fields;
    std::stringstream ss(row);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() >= 19 && !fields[18].empty()) {
      ++with_bound;
      if (fields[18] == "1") ++dominated;
    }
    if (fields.size() >= 22 && !fields[21].empty()) {
      ++with_holds;
      if (fields[21] == "1") ++holds;
    }
  }
  std::string summary = "merged rows: " + std::to_string(rows.size()) + "\n";
  for (const auto& [file, count] : per_file)
    summary += "  " + file + ": " + std::to_string(count) + "\n";
  summary += "dominated: " + std::to_string(dominated) + "/" + std::to_string(with_bound) + "\n";
  summary += "holds: " + std::to_string(holds) + "/" + std::to_string(with_holds) + "\n";
  write_text(out_dir / "summary.txt", summary);

  const std::string plot =
      "# gnuplot script: stability estimate vs bound over the sweep horizon\n"
      "set datafile separator ','\n"
      "set key left top\n"
      "set xlabel 'iterations T'\n"
      "set ylabel 'on-average argument stability'\n"
      "set terminal svg size 800,500\n"
      "set output 'stability.svg'\n"
      "plot 'merged.csv' every ::1 using 13:16 with linespoints title 'estimate', \\\n"
      "     'merged.csv' every ::1 using 13:18 with linespoints title 'bound'\n";
  write_text(out_dir / "plot.gp", plot);

  std::printf("%s", summary.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// CLI
// ---------------------------------------------------------------------------

int run_cli(int argc, char** argv) {
  CLI::App app{"desk-scale laboratory for decentralized SGD/SGDA with Markov sampling"};
  app.require_subcommand(1);

  std::string config_path, preset_name, out_dir = "out", format;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 0;
  std::vector<std::string> report_inputs;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config (json)");
    cmd->add_option("--preset", preset_name, "built-in preset name");
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed, "master seed override")
        ->each([&](const std::string&) { seed_set = true; });
    cmd->add_option("--jobs", jobs, "worker threads");
  };

  CLI::App* validate = app.add_subcommand("validate", "check a config and echo it resolved");
  CLI::App* run = app.add_subcommand("run", "single trajectory with csv dumps");
  CLI::App* stab = app.add_subcommand("stability", "perturbation stability estimate");
  CLI::App* bnds = app.add_subcommand("bounds", "evaluate analytic bounds standalone");
  CLI::App* sweep = app.add_subcommand("sweep", "cross-product experiment sweep");
  CLI::App* report = app.add_subcommand("report", "merge sweep csvs and summarize");
  for (CLI::App* cmd : {validate, run, stab, bnds, sweep}) add_common(cmd);
  bnds->add_option("--format", format, "json or csv");
  report->add_option("--in", report_inputs, "input csv files")->required();
  report->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    if (report->parsed()) {
      std::vector<fs::path> inputs(report_inputs.begin(), report_inputs.end());
      return cmd_report(inputs, out_dir);
    }
    ExperimentConfig config = [&] {
      if (!preset_name.empty() && !config_path.empty())
        throw ConfigError("give either --config or --preset, not both");
      if (!preset_name.empty()) return preset_experiment(preset_name);
      if (!config_path.empty()) return load_config(config_path);
      throw ConfigError("missing --config or --preset");
    }();
    if (seed_set) {
      json raw = config.doc;
      raw["master_seed"] = seed;
      config = resolve_config(raw);
    }
    if (jobs > 0) {
      json raw = config.doc;
      raw["jobs"] = jobs;
      config = resolve_config(raw);
    }
    if (validate->parsed()) return cmd_validate(config);
    if (run->parsed()) return cmd_run(config, out_dir);
    if (stab->parsed()) return cmd_stability(config, out_dir);
    if (bnds->parsed()) return cmd_bounds(config, out_dir, format);
    if (sweep->parsed()) return cmd_sweep(config, out_dir);
    throw ConfigError("no subcommand dispatched");
  } catch (const std::exception& err) {
    json record;
    record["error"] = "failure";
    record["what"] = err.what();
    std::printf("%s\n", record.dump().c_str());
    return 1;
  }
}

}  // namespace dmclab::harness

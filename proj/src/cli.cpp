#include "adpde/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "adpde/error.hpp"
#include "adpde/inverse.hpp"
#include "adpde/io.hpp"
#include "adpde/metrics.hpp"
#include "adpde/parallel.hpp"
#include "adpde/simulate.hpp"

namespace adpde {
namespace fs = std::filesystem;
namespace {

struct OptSpec {
  const char* name;
  const char* def;  ///< "" with required = true marks a mandatory option
  bool flag;
  bool required;
  const char* help;
};

const std::map<std::string, std::vector<OptSpec>>& command_table() {
  static const std::map<std::string, std::vector<OptSpec>> table = {
      {"simulate",
       {{"protocol", "2d-gaussian", false, false, "2d-gaussian or 3d-gaussian"},
        {"n", "1", false, false, "number of samples"},
        {"seed", "0", false, false, "corpus seed"},
        {"out", "", false, true, "output directory"},
        {"anomaly-prob", "0.5", false, false, "probability of a planted anomaly"},
        {"frames", "40", false, false, "frames per series"},
        {"dt", "0.01", false, false, "output interval in seconds"},
        {"form", "incompressible", false, false, "incompressible or conservative"},
        {"stochastic", "1", true, false, "add sigma noise"}}},
      {"forward",
       {{"params", "", false, true, "parameter bundle directory"},
        {"init", "", false, true, "initial concentration (ADPF scalar)"},
        {"out", "", false, true, "output directory"},
        {"frames", "40", false, false, "frames including the initial one"},
        {"dt", "0.01", false, false, "output interval in seconds"},
        {"substep", "auto", false, false, "substep in seconds or auto"},
        {"cfl-safety", "0.8", false, false, "CFL safety factor"},
        {"form", "incompressible", false, false, "incompressible or conservative"},
        {"integrator", "rk4", false, false, "rk4 or rk45"},
        {"boundary", "neumann", false, false, "neumann or cauchy"},
        {"stochastic", "0", true, false, "add sigma noise"},
        {"seed", "0", false, false, "noise seed"}}},
      {"invert",
       {{"series", "", false, true, "observed series (ADPF series)"},
        {"out", "", false, true, "output directory"},
        {"mode", "transport", false, false, "transport or physics"},
        {"truth", "", false, false, "ground-truth bundle directory"},
        {"init", "", false, false, "initial bundle directory"},
        {"iters", "300", false, false, "optimizer iterations"},
        {"step", "0.01", false, false, "optimizer step size"},
        {"global-iters", "150", false, false, "uniform warm-start iterations"},
        {"n-in", "10", false, false, "frames per window"},
        {"n-out", "10", false, false, "supervised frames per window"},
        {"stride", "0", false, false, "window stride (0: n-in - 1)"},
        {"w-ul", "0.5", false, false, "eigen-frame loss weight"},
        {"w-ss", "0.1", false, false, "smoothness weight"},
        {"w-sigma", "0.5", false, false, "uncertainty loss weight"},
        {"form", "incompressible", false, false, "incompressible or conservative"},
        {"seed", "0", false, false, "seed of the gradient check direction"},
        {"grad-check", "1", true, false, "finite-difference check at entry"}}},
      {"metrics",
       {{"report", "", false, true, "output CSV"},
        {"pred", "", false, false, "predicted bundle directory"},
        {"truth", "", false, false, "ground-truth bundle directory"},
        {"mask", "", false, false, "lesion mask (ADPF scalar, nonzero = lesion)"},
        {"pred-series", "", false, false, "predicted series"},
        {"truth-series", "", false, false, "reference series"},
        {"mirror-axis", "0", false, false, "axis of the contralateral mirror"}}},
      {"export-plot",
       {{"series", "", false, false, "series to export"},
        {"field", "", false, false, "scalar field to export"},
        {"frames", "", false, false, "comma-separated frame indices (default all)"},
        {"out", "", false, true, "output directory"},
        {"format", "csv", false, false, "csv, pgm or both"}}},
      {"wellposed",
       {{"params", "", false, true, "parameter bundle directory"},
        {"report", "", false, false, "optional output file"}}},
  };
  return table;
}

// Full usage, or the options of one command when only is set.
std::string usage(const std::string& only = "") {
  std::ostringstream s;
  s << "usage: adpde <command> [--config FILE] [--option value ...]\n";
  for (const auto& [cmd, opts] : command_table()) {
    if (!only.empty() && cmd != only) continue;
    s << "\n" << cmd << "\n";
    for (const auto& o : opts) {
      s << "  --" << o.name << (o.flag ? "" : " VALUE") << "  " << o.help;
      if (o.required) {
        s << " (required)";
      } else if (*o.def) {
        s << " [" << o.def << "]";
      }
      s << "\n";
    }
  }
  return s.str();
}

const OptSpec* find_opt(const std::vector<OptSpec>& opts, const std::string& name) {
  for (const auto& o : opts) {
    if (name == o.name) return &o;
  }
  return nullptr;
}

// Typed accessors with ConfigError on malformed values.
class Values {
 public:
  explicit Values(const RunConfig& rc) : rc_(rc) {}
  const std::string& str(const std::string& k) const { return rc_.values.at(k); }
  bool has(const std::string& k) const { return !str(k).empty(); }
  double num(const std::string& k) const {
    try {
      std::size_t pos = 0;
      const double v = std::stod(str(k), &pos);
      if (pos != str(k).size()) throw std::invalid_argument(k);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("option --" + k + ": expected a number, got '" + str(k) + "'");
    }
  }
  std::uint64_t u64(const std::string& k) const {
    try {
      std::size_t pos = 0;
      const auto v = std::stoull(str(k), &pos);
      if (pos != str(k).size() || str(k).front() == '-') throw std::invalid_argument(k);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("option --" + k + ": expected a non-negative integer");
    }
  }
  bool flag(const std::string& k) const { return str(k) == "1"; }

 private:
  const RunConfig& rc_;
};

AdvectionForm parse_form(const std::string& s) {
  if (s == "incompressible") return AdvectionForm::Incompressible;
  if (s == "conservative") return AdvectionForm::Conservative;
  throw ConfigError("option --form: expected incompressible or conservative");
}

std::vector<std::size_t> parse_index_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stoull(tok, &pos));
      if (pos != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("option --frames: bad index '" + tok + "'");
    }
  }
  return out;
}

void write_manifest(const fs::path& path, const RunConfig& rc) {
  auto kv = rc.values;
  kv["command"] = rc.command;
  kv["version"] = kToolVersion;
  write_kv(path, kv);
}

std::string sample_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%04zu", i);
  return buf;
}

int cmd_simulate(const RunConfig& rc, std::ostream& out) {
  const Values v(rc);
  SimProtocol p;
  const auto seed = v.u64("seed");
  if (v.str("protocol") == "2d-gaussian") {
    p = SimProtocol::gaussian2d(seed);
  } else if (v.str("protocol") == "3d-gaussian") {
    p = SimProtocol::gaussian3d(seed);
  } else {
    throw ConfigError("option --protocol: expected 2d-gaussian or 3d-gaussian");
  }
  p.anomaly_prob = v.num("anomaly-prob");
  p.n_frames = v.u64("frames");
  p.dt = v.num("dt");
  p.form = parse_form(v.str("form"));
  p.stochastic = v.flag("stochastic");
  p.validate();
  const std::size_t n = v.u64("n");
  const fs::path dir = v.str("out");
  fs::create_directories(dir);
  parallel_for(n, [&](std::size_t i) {
    const SimSample s = make_sample(p, static_cast<std::uint32_t>(i));
    const fs::path sd = dir / sample_name(i);
    fs::create_directories(sd);
    write_bundle(sd / "params", s.params);
    write_adpf(sd / "series.adpf", s.series);
    write_kv(sd / "meta.txt", {{"has_anomaly", s.has_anomaly ? "1" : "0"},
                               {"index", std::to_string(i)},
                               {"seed", std::to_string(seed)}});
  });
  write_manifest(dir / "manifest.txt", rc);
  out << "simulate: wrote " << n << " samples to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_forward(const RunConfig& rc, std::ostream& out) {
  const Values v(rc);
  const TransportParams params = read_bundle(v.str("params"));
  ScalarField c0 = read_scalar(v.str("init"));
  require_same_grid(c0.grid(), params.grid(), "forward");
  const std::string& bnd = v.str("boundary");
  Boundary b;
  if (bnd == "neumann") {
    b = Boundary::NeumannZeroFlux;
  } else if (bnd == "cauchy") {
    b = Boundary::CauchyPatch;
  } else {
    throw ConfigError("option --boundary: expected neumann or cauchy");
  }
  c0 = ScalarField(c0.grid().with_boundary(b), c0.data());
  SolverConfig cfg;
  cfg.dt = v.num("dt");
  if (v.str("substep") != "auto") cfg.substep = v.num("substep");
  cfg.cfl_safety = v.num("cfl-safety");
  cfg.form = parse_form(v.str("form"));
  const auto& integ = v.str("integrator");
  if (integ == "rk4") {
    cfg.integrator = Integrator::RK4Fixed;
  } else if (integ == "rk45") {
    cfg.integrator = Integrator::RK45Adaptive;
  } else {
    throw ConfigError("option --integrator: expected rk4 or rk45");
  }
  cfg.stochastic = v.flag("stochastic");
  cfg.seed = v.u64("seed");
  TimeSeries ts = integrate(c0, params, cfg, v.u64("frames"));
  ts.grid = ts.grid.with_boundary(Boundary::NeumannZeroFlux);
  const fs::path dir = v.str("out");
  fs::create_directories(dir);
  write_adpf(dir / "series.adpf", ts);
  write_manifest(dir / "manifest.txt", rc);
  out << "forward: wrote " << ts.size() << " frames to " << (dir / "series.adpf").string()
      << "\n";
  return kExitOk;
}

int cmd_invert(const RunConfig& rc, std::ostream& out) {
  const Values v(rc);
  const TimeSeries obs = read_series(v.str("series"));
  FitConfig cfg;
  const auto& mode = v.str("mode");
  if (mode == "transport") {
    cfg.mode = FitMode::TransportInformed;
  } else if (mode == "physics") {
    cfg.mode = FitMode::PhysicsInformed;
  } else {
    throw ConfigError("option --mode: expected transport or physics");
  }
  cfg.max_iters = v.u64("iters");
  cfg.step_size = v.num("step");
  cfg.global_iters = v.u64("global-iters");
  cfg.n_in = v.u64("n-in");
  cfg.n_out = v.u64("n-out");
  cfg.window_stride = v.u64("stride");
  cfg.w_ul = v.num("w-ul");
  cfg.w_ss = v.num("w-ss");
  cfg.w_sigma = v.num("w-sigma");
  cfg.form = parse_form(v.str("form"));
  cfg.seed = v.u64("seed");
  cfg.check_gradient = v.flag("grad-check");
  if (v.has("init")) cfg.init = read_bundle(v.str("init"));
  std::optional<TransportParams> truth;
  if (v.has("truth")) truth = read_bundle(v.str("truth"));
  const FitResult res = fit(obs, cfg, truth ? &*truth : nullptr);
  const fs::path dir = v.str("out");
  fs::create_directories(dir);
  write_bundle(dir, res.params_hat);
  std::string log = "iteration,loss,best_loss,grad_norm\n";
  for (std::size_t i = 0; i < res.raw_trace.size(); ++i) {
    log += std::to_string(i) + "," + format_double(res.raw_trace[i]) + "," +
           format_double(res.loss_trace[i]) + "," + format_double(res.grad_norm[i]) + "\n";
  }
  write_file(dir / "fit_log.csv", log);
  write_kv(dir / "fit_summary.txt",
           {{"grad_check", format_double(res.grad_check)},
            {"iterations", std::to_string(res.iterations)},
            {"best_loss", format_double(res.loss_trace.back())},
            {"sigma_term", res.sigma_active ? "active" : "inactive"}});
  write_manifest(dir / "manifest.txt", rc);
  out << "invert: best loss " << format_double(res.loss_trace.back()) << " after "
      << res.iterations << " iterations";
  if (!res.sigma_active && cfg.mode == FitMode::TransportInformed) {
    out << " (sigma term inactive: no ground-truth A)";
  }
  out << "\n";
  return kExitOk;
}

struct ReportRow {
  std::string metric, target;
  double value;
  std::string note;
};

template <typename Fn>
void try_row(std::vector<ReportRow>& rows, const std::string& metric,
             const std::string& target, Fn&& fn) {
  try {
    rows.push_back({metric, target, fn(), ""});
  } catch (const Error& e) {
    rows.push_back({metric, target, std::nan(""), e.what()});
  }
}

int cmd_metrics(const RunConfig& rc, std::ostream& out) {
  const Values v(rc);
  std::vector<ReportRow> rows;
  std::optional<DerivedFields> pred;
  if (v.has("pred")) pred = derive(read_bundle(v.str("pred")));
  if (v.has("truth")) {
    if (!pred) throw ConfigError("metrics: --truth needs --pred");
    const DerivedFields t = derive(read_bundle(v.str("truth")));
    try_row(rows, "rae", "V", [&] { return rae(t.v, pred->v).value; });
    try_row(rows, "rae", "V_bar", [&] { return rae(t.v_bar, pred->v_bar).value; });
    try_row(rows, "rae", "D", [&] { return rae(t.d, pred->d).value; });
    try_row(rows, "rae", "D_bar", [&] { return rae(t.d_bar, pred->d_bar).value; });
    try_row(rows, "rae", "A", [&] { return rae(t.a, pred->a).value; });
  }
  if (v.has("pred-series") || v.has("truth-series")) {
    if (!v.has("pred-series") || !v.has("truth-series")) {
      throw ConfigError("metrics: --pred-series and --truth-series go together");
    }
    const TimeSeries a = read_series(v.str("truth-series"));
    const TimeSeries b = read_series(v.str("pred-series"));
    try_row(rows, "rae", "C", [&] { return rae(a, b).value; });
  }
  if (v.has("mask")) {
    if (!pred) throw ConfigError("metrics: --mask needs --pred");
    const ScalarField m = read_scalar(v.str("mask"));
    Mask lesion(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) lesion[i] = m[i] != 0.0;
    const auto regions =
        RegionMask::mirrored(m.grid(), lesion, static_cast<int>(v.u64("mirror-axis")));
    const FeatureMaps fm = feature_maps(pred->v, pred->d);
    const std::pair<const char*, const ScalarField*> feats[] = {
        {"V_norm", &fm.vmag}, {"trace_D", &fm.trace}, {"FA", &fm.fa}, {"A", &pred->a}};
    for (const auto& [name, f] : feats) {
      try_row(rows, "mu_r", name, [&] { return relative_mean(*f, regions); });
      try_row(rows, "abs_t", name, [&] { return abs_tvalue(*f, regions); });
      std::vector<double> score(f->size());
      for (std::size_t i = 0; i < score.size(); ++i) score[i] = -(*f)[i];
      try_row(rows, "auc", name, [&] { return roc_auc(score, lesion); });
    }
    const auto best = best_threshold(pred->a, lesion);
    rows.push_back({"dice", "A", best.dice, ""});
    rows.push_back({"tau", "A", best.tau, ""});
  }
  if (rows.empty()) throw ConfigError("metrics: nothing to compare");
  std::string csv = "metric,target,value,note\n";
  for (const auto& r : rows) {
    csv += r.metric + "," + r.target + "," + format_double(r.value) + "," + r.note + "\n";
  }
  const fs::path report = v.str("report");
  if (report.has_parent_path()) fs::create_directories(report.parent_path());
  write_file(report, csv);
  write_manifest(fs::path(report.string() + ".manifest.txt"), rc);
  out << "metrics: wrote " << rows.size() << " rows to " << report.string() << "\n";
  return kExitOk;
}

int cmd_export(const RunConfig& rc, std::ostream& out) {
  const Values v(rc);
  if (v.has("series") == v.has("field")) {
    throw ConfigError("export-plot: give exactly one of --series or --field");
  }
  const auto& fmt = v.str("format");
  const bool csv = fmt == "csv" || fmt == "both";
  const bool pgm = fmt == "pgm" || fmt == "both";
  if (!csv && !pgm) throw ConfigError("option --format: expected csv, pgm or both");
  const fs::path dir = v.str("out");
  fs::create_directories(dir);
  std::size_t count = 0;
  auto emit = [&](const ScalarField& f, const std::string& stem) {
    if (csv) write_csv(dir / (stem + ".csv"), f);
    if (pgm) write_pgm(dir / (stem + ".pgm"), f);
    ++count;
  };
  if (v.has("series")) {
    const TimeSeries ts = read_series(v.str("series"));
    std::vector<std::size_t> idx;
    if (v.has("frames")) {
      idx = parse_index_list(v.str("frames"));
    } else {
      for (std::size_t i = 0; i < ts.size(); ++i) idx.push_back(i);
    }
    for (std::size_t i : idx) {
      if (i >= ts.size()) throw ConfigError("export-plot: frame index out of range");
      char buf[32];
      std::snprintf(buf, sizeof buf, "frame_%04zu", i);
      emit(ts.frames[i], buf);
    }
  } else {
    emit(read_scalar(v.str("field")), "field");
  }
  write_manifest(dir / "manifest.txt", rc);
  out << "export-plot: wrote " << count << " grids to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_wellposed(const RunConfig& rc, std::ostream& out) {
  const Values v(rc);
  const auto rep = wellposedness_report(read_bundle(v.str("params")));
  const std::map<std::string, std::string> kv = {
      {"growth", format_double(rep.growth)}, {"lipschitz", format_double(rep.lipschitz)}};
  for (const auto& [k, val] : kv) out << k << "=" << val << "\n";
  if (v.has("report")) {
    const fs::path report = v.str("report");
    write_kv(report, kv);
    write_manifest(fs::path(report.string() + ".manifest.txt"), rc);
  }
  return kExitOk;
}

}  // namespace

RunConfig parse_run_config(const std::vector<std::string>& args) {
  if (args.empty()) throw ConfigError("missing command");
  RunConfig rc;
  rc.command = args[0];
  const auto& table = command_table();
  const auto it = table.find(rc.command);
  if (it == table.end()) throw ConfigError("unknown command '" + rc.command + "'");
  const auto& opts = it->second;

  std::map<std::string, std::string> cli;
  std::string config_path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + a + "'");
    std::string name = a.substr(2);
    std::optional<std::string> value;
    if (const auto eq = name.find('='); eq != std::string::npos) {
      value = name.substr(eq + 1);
      name = name.substr(0, eq);
    }
    if (name == "config") {
      if (!value) {
        if (i + 1 >= args.size()) throw ConfigError("--config needs a path");
        value = args[++i];
      }
      config_path = *value;
      continue;
    }
    const OptSpec* o = find_opt(opts, name);
    if (!o) throw ConfigError("unknown option --" + name + " for " + rc.command);
    if (!value) {
      if (o->flag) {
        value = "1";
      } else {
        if (i + 1 >= args.size()) throw ConfigError("--" + name + " needs a value");
        value = args[++i];
      }
    }
    if (o->flag && *value != "0" && *value != "1") {
      throw ConfigError("--" + name + " takes 0 or 1");
    }
    cli[name] = *value;
  }
  std::map<std::string, std::string> file;
  if (!config_path.empty()) {
    file = read_kv(config_path);
    for (const auto& [k, val] : file) {
      if (k == "version") continue;
      if (k == "command") {
        if (val != rc.command) {
          throw ConfigError("config file is for command '" + val + "'");
        }
        continue;
      }
      if (!find_opt(opts, k)) throw ConfigError("config: unknown key '" + k + "'");
    }
  }
  for (const auto& o : opts) {
    std::string val = o.def;
    if (auto f = file.find(o.name); f != file.end()) val = f->second;
    if (auto c = cli.find(o.name); c != cli.end()) val = c->second;
    if (o.required && val.empty()) {
      throw ConfigError("missing required option --" + std::string(o.name));
    }
    rc.values[o.name] = val;
  }
  return rc;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty() || args[0] == "--help" || args[0] == "-h" || args[0] == "help") {
    (args.empty() ? err : out) << usage();
    return args.empty() ? kExitConfig : kExitOk;
  }
  if (args.size() >= 2 && command_table().count(args[0]) &&
      (args[1] == "--help" || args[1] == "-h")) {
    out << usage(args[0]);
    return kExitOk;
  }
  if (args[0] == "--version") {
    out << "adpde " << kToolVersion << "\n";
    return kExitOk;
  }
  try {
    const RunConfig rc = parse_run_config(args);
    if (rc.command == "simulate") return cmd_simulate(rc, out);
    if (rc.command == "forward") return cmd_forward(rc, out);
    if (rc.command == "invert") return cmd_invert(rc, out);
    if (rc.command == "metrics") return cmd_metrics(rc, out);
    if (rc.command == "export-plot") return cmd_export(rc, out);
    return cmd_wellposed(rc, out);
  } catch (const NumericalError& e) {
    err << "error: numerical: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ConfigError& e) {
    err << "error: config: " << e.what() << "\n";
    return kExitConfig;
  } catch (const FormatError& e) {
    err << "error: config: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    err << "error: config: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace adpde

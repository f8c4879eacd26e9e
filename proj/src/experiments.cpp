#include "mtcs/experiments.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

#include "mtcs/coupling.hpp"
#include "mtcs/csvio.hpp"
#include "mtcs/mamp.hpp"
#include "mtcs/se.hpp"
#include "mtcs/source.hpp"

namespace mtcs {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

const std::map<std::string, std::set<std::string>>& allowed_keys() {
  static const std::map<std::string, std::set<std::string>> table = {
      {"rid", {"kind", "seed", "mixing", "alphas"}},
      {"se-sweep",
       {"kind", "seed", "mixing", "alphas", "rho_grid_x", "rho_grid_y", "sigma2_x",
        "sigma2_y", "mc_samples", "se_tol", "se_max_iter"}},
      {"mamp-run",
       {"kind", "seed", "mixing", "alphas", "n", "rho_x", "rho_y", "sigma2_x", "sigma2_y",
        "tau_mode", "max_iter", "stop_tol", "mc_samples", "se_max_iter"}},
      {"coupled-run",
       {"kind", "seed", "mixing", "alphas", "l_c", "bandwidth", "seed_blocks", "seed_boost",
        "delta_x", "delta_y", "sigma2_x", "sigma2_y", "max_time", "mc_samples",
        "recovery_threshold", "run_mamp", "block_n", "max_iter", "stop_tol"}},
      {"phase-boundary",
       {"kind", "seed", "mixing", "alphas", "l_c", "bandwidth", "seed_blocks", "seed_boost",
        "delta_x_grid", "delta_y_lo", "delta_y_hi", "sigma2_x", "sigma2_y", "max_time",
        "mc_samples", "recovery_threshold", "bisect_tol"}},
      {"fresh-se-check",
       {"kind", "seed", "mixing", "alphas", "n", "rho_x", "rho_y", "sigma2_x", "sigma2_y",
        "iterations", "mc_samples"}},
  };
  return table;
}

bool is_nonneg_int(const Json& v) {
  return v.is_number_integer() && v.get<long long>() >= 0;
}

void check_positive_number(const Json& c, const char* key, std::vector<std::string>& diags,
                           bool required, double max_ok = 1e12) {
  if (!c.contains(key)) {
    if (required) diags.push_back(std::string(key) + ": missing");
    return;
  }
  const Json& v = c.at(key);
  if (!v.is_number() || !(v.get<double>() > 0.0) || !(v.get<double>() <= max_ok)) {
    diags.push_back(std::string(key) + ": must be a positive number");
  }
}

void check_nonneg_number(const Json& c, const char* key, std::vector<std::string>& diags) {
  if (!c.contains(key)) return;
  const Json& v = c.at(key);
  if (!v.is_number() || !(v.get<double>() >= 0.0) || !std::isfinite(v.get<double>())) {
    diags.push_back(std::string(key) + ": must be a nonnegative finite number");
  }
}

void check_count(const Json& c, const char* key, std::vector<std::string>& diags,
                 bool required, long long lo, long long hi) {
  if (!c.contains(key)) {
    if (required) diags.push_back(std::string(key) + ": missing");
    return;
  }
  const Json& v = c.at(key);
  if (!v.is_number_integer() || v.get<long long>() < lo || v.get<long long>() > hi) {
    diags.push_back(std::string(key) + ": must be an integer in [" + std::to_string(lo) +
                    ", " + std::to_string(hi) + "]");
  }
}

void check_rate_grid(const Json& c, const char* key, std::vector<std::string>& diags) {
  if (!c.contains(key)) {
    diags.push_back(std::string(key) + ": missing");
    return;
  }
  const Json& v = c.at(key);
  if (!v.is_array() || v.empty()) {
    diags.push_back(std::string(key) + ": must be a nonempty array of positive numbers");
    return;
  }
  for (const auto& e : v) {
    if (!e.is_number() || !(e.get<double>() > 0.0) || !std::isfinite(e.get<double>())) {
      diags.push_back(std::string(key) + ": must contain only positive finite numbers");
      return;
    }
  }
}

void check_source(const Json& c, std::vector<std::string>& diags) {
  if (!c.contains("mixing")) diags.push_back("mixing: missing");
  if (!c.contains("alphas")) diags.push_back("alphas: missing");
  if (!c.contains("mixing") || !c.contains("alphas")) return;

  const Json& mix = c.at("mixing");
  const Json& al = c.at("alphas");
  if (!mix.is_array() || mix.empty()) {
    diags.push_back("mixing: must be a nonempty array of rows");
    return;
  }
  std::size_t k = 0;
  for (std::size_t r = 0; r < mix.size(); ++r) {
    const Json& row = mix.at(r);
    if (!row.is_array() || row.empty()) {
      diags.push_back("mixing: row " + std::to_string(r) + " must be a nonempty array");
      return;
    }
    if (r == 0) k = row.size();
    if (row.size() != k) {
      diags.push_back("mixing: rows must all have the same length");
      return;
    }
    for (const auto& e : row) {
      if (!e.is_number() || !std::isfinite(e.get<double>())) {
        diags.push_back("mixing: entries must be finite numbers");
        return;
      }
    }
  }
  if (k > static_cast<std::size_t>(kMaxEnumerationComponents)) {
    diags.push_back("mixing: at most " + std::to_string(kMaxEnumerationComponents) +
                    " components are supported");
  }
  if (!al.is_array() || al.size() != k) {
    diags.push_back("alphas: must be an array matching the mixing column count");
    return;
  }
  for (const auto& e : al) {
    if (!e.is_number() || !(e.get<double>() > 0.0) || e.get<double>() > 1.0) {
      diags.push_back("alphas: entries must lie in (0, 1]");
      return;
    }
  }
}

SourceSpec spec_from_json(const Json& c) {
  const Json& mix = c.at("mixing");
  const Json& al = c.at("alphas");
  const Eigen::Index t = static_cast<Eigen::Index>(mix.size());
  const Eigen::Index k = static_cast<Eigen::Index>(mix.at(0).size());
  SourceSpec spec;
  spec.mixing.resize(t, k);
  spec.alphas.resize(k);
  for (Eigen::Index r = 0; r < t; ++r) {
    for (Eigen::Index j = 0; j < k; ++j) {
      spec.mixing(r, j) = mix.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(j)).get<double>();
    }
  }
  for (Eigen::Index j = 0; j < k; ++j) {
    spec.alphas[j] = al.at(static_cast<std::size_t>(j)).get<double>();
  }
  validate_spec(spec);
  return spec;
}

std::uint64_t seed_from(const Json& c) {
  return static_cast<std::uint64_t>(c.at("seed").get<long long>());
}

std::string strip_csv_suffix(const std::string& path) {
  const std::string suffix = ".csv";
  if (path.size() > suffix.size() &&
      path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0) {
    return path.substr(0, path.size() - suffix.size());
  }
  return path;
}

std::string fmt_bool(bool v) { return v ? "1" : "0"; }

void append_wave_rows(std::vector<std::vector<std::string>>& rows,
                      const std::vector<BlockState>& states, const CoupledRunTrace* trace) {
  for (std::size_t t = 0; t < states.size(); ++t) {
    const BlockState& st = states[t];
    for (int terminal = 0; terminal < 2; ++terminal) {
      const Eigen::VectorXd& psi = (terminal == 0) ? st.psi_x : st.psi_y;
      for (Eigen::Index blk = 0; blk < psi.size(); ++blk) {
        double emp = kNan;
        if (trace != nullptr && t >= 2) {
          const std::size_t i = t - 2;
          if (i < trace->iterations.size()) {
            const CoupledIterationRecord& rec = trace->iterations[i];
            emp = (terminal == 0) ? rec.block_mse_x[blk] : rec.block_mse_y[blk];
          }
        }
        rows.push_back({std::to_string(t), terminal == 0 ? "x" : "y",
                        std::to_string(blk), format_double(psi[blk]),
                        format_double(emp)});
      }
    }
  }
}

}  // namespace

Json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read config file " + path);
  Json config;
  try {
    in >> config;
  } catch (const Json::parse_error& e) {
    throw std::invalid_argument("config parse error in " + path + ": " + e.what());
  }
  return config;
}

std::vector<std::string> validate_config(const Json& c) {
  std::vector<std::string> diags;
  if (!c.is_object()) {
    diags.push_back("config: must be a json object");
    return diags;
  }
  if (!c.contains("kind") || !c.at("kind").is_string()) {
    diags.push_back("kind: missing or not a string");
    return diags;
  }
  const std::string kind = c.at("kind").get<std::string>();
  const auto& table = allowed_keys();
  auto it = table.find(kind);
  if (it == table.end()) {
    diags.push_back("kind: unknown experiment kind '" + kind + "'");
    return diags;
  }
  for (auto el = c.begin(); el != c.end(); ++el) {
    if (it->second.count(el.key()) == 0) {
      diags.push_back(el.key() + ": unknown key for kind '" + kind + "'");
    }
  }
  if (!c.contains("seed") || !is_nonneg_int(c.at("seed"))) {
    diags.push_back("seed: missing or not a nonnegative integer");
  }
  check_source(c, diags);
  check_count(c, "mc_samples", diags, false, 100, 100000000);

  if (kind == "se-sweep") {
    check_rate_grid(c, "rho_grid_x", diags);
    check_rate_grid(c, "rho_grid_y", diags);
    check_nonneg_number(c, "sigma2_x", diags);
    check_nonneg_number(c, "sigma2_y", diags);
    check_positive_number(c, "se_tol", diags, false, 1.0);
    check_count(c, "se_max_iter", diags, false, 1, 100000);
  } else if (kind == "mamp-run") {
    check_count(c, "n", diags, true, 2, 10000000);
    check_positive_number(c, "rho_x", diags, true, 100.0);
    check_positive_number(c, "rho_y", diags, true, 100.0);
    check_nonneg_number(c, "sigma2_x", diags);
    check_nonneg_number(c, "sigma2_y", diags);
    if (c.contains("tau_mode")) {
      const Json& v = c.at("tau_mode");
      if (!v.is_string() ||
          (v.get<std::string>() != "oracle" && v.get<std::string>() != "empirical")) {
        diags.push_back("tau_mode: must be 'oracle' or 'empirical'");
      }
    }
    check_count(c, "max_iter", diags, false, 1, 100000);
    check_positive_number(c, "stop_tol", diags, false, 1.0);
    check_count(c, "se_max_iter", diags, false, 1, 100000);
  } else if (kind == "coupled-run" || kind == "phase-boundary") {
    check_count(c, "l_c", diags, true, 1, 4096);
    check_count(c, "bandwidth", diags, true, 0, 2048);
    check_count(c, "seed_blocks", diags, true, 0, 4096);
    check_nonneg_number(c, "seed_boost", diags);
    if (!c.contains("seed_boost")) diags.push_back("seed_boost: missing");
    check_nonneg_number(c, "sigma2_x", diags);
    check_nonneg_number(c, "sigma2_y", diags);
    check_count(c, "max_time", diags, false, 1, 100000);
    check_positive_number(c, "recovery_threshold", diags, false, 1.0);
    if (kind == "coupled-run") {
      check_positive_number(c, "delta_x", diags, true, 100.0);
      check_positive_number(c, "delta_y", diags, true, 100.0);
      if (c.contains("run_mamp") && !c.at("run_mamp").is_boolean()) {
        diags.push_back("run_mamp: must be a boolean");
      }
      const bool wants_mamp = c.value("run_mamp", false);
      if (wants_mamp) {
        check_count(c, "block_n", diags, true, 2, 1000000);
        check_count(c, "max_iter", diags, false, 1, 100000);
        check_positive_number(c, "stop_tol", diags, false, 1.0);
      }
    } else {
      check_rate_grid(c, "delta_x_grid", diags);
      check_positive_number(c, "delta_y_lo", diags, true, 100.0);
      check_positive_number(c, "delta_y_hi", diags, true, 100.0);
      if (c.contains("delta_y_lo") && c.contains("delta_y_hi") &&
          c.at("delta_y_lo").is_number() && c.at("delta_y_hi").is_number() &&
          !(c.at("delta_y_lo").get<double>() < c.at("delta_y_hi").get<double>())) {
        diags.push_back("delta_y_hi: must exceed delta_y_lo");
      }
      check_positive_number(c, "bisect_tol", diags, false, 1.0);
    }
  } else if (kind == "fresh-se-check") {
    check_count(c, "n", diags, true, 2, 10000000);
    check_positive_number(c, "rho_x", diags, true, 100.0);
    check_positive_number(c, "rho_y", diags, true, 100.0);
    check_nonneg_number(c, "sigma2_x", diags);
    check_nonneg_number(c, "sigma2_y", diags);
    check_count(c, "iterations", diags, true, 1, 10000);
  }
  return diags;
}

ExperimentOutputs run_experiment(const Json& c, const std::string& out_csv_path) {
  const std::vector<std::string> diags = validate_config(c);
  if (!diags.empty()) {
    std::string msg = "invalid config:";
    for (const auto& d : diags) msg += "\n  " + d;
    throw std::invalid_argument(msg);
  }
  const auto started = std::chrono::steady_clock::now();

  const std::string kind = c.at("kind").get<std::string>();
  const SourceSpec spec = spec_from_json(c);
  const std::uint64_t seed = seed_from(c);
  const std::int64_t mc_samples = c.value("mc_samples", 100000LL);
  const std::string base = strip_csv_suffix(out_csv_path);

  ExperimentOutputs outputs;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  if (kind == "rid") {
    header = {"quantity", "value"};
    std::vector<int> all_rows(static_cast<std::size_t>(spec.terminals()));
    for (int i = 0; i < static_cast<int>(spec.terminals()); ++i) {
      all_rows[static_cast<std::size_t>(i)] = i;
      rows.push_back({"d_" + std::to_string(i), format_double(rid(spec, {i}))});
    }
    rows.push_back({"d_joint", format_double(rid(spec, all_rows))});
    if (spec.terminals() == 2) {
      rows.push_back({"d_0_given_1", format_double(rid_conditional(spec, {0}, {1}))});
      rows.push_back({"d_1_given_0", format_double(rid_conditional(spec, {1}, {0}))});
    }
    write_csv(out_csv_path, header, rows);
    outputs.files.push_back(out_csv_path);
  } else if (kind == "se-sweep") {
    const std::vector<double> gx = c.at("rho_grid_x").get<std::vector<double>>();
    const std::vector<double> gy = c.at("rho_grid_y").get<std::vector<double>>();
    McParams mc{mc_samples, seed};
    const auto cells =
        rate_distortion_grid(spec, gx, gy, c.value("sigma2_x", 0.0), c.value("sigma2_y", 0.0),
                             mc, c.value("se_tol", 1e-8), c.value("se_max_iter", 500));
    header = {"rho_x", "rho_y", "tau_x", "tau_y", "distortion", "converged", "iterations"};
    for (const auto& cell : cells) {
      rows.push_back({format_double(cell.rho_x), format_double(cell.rho_y),
                      format_double(cell.tau_x), format_double(cell.tau_y),
                      format_double(cell.distortion), fmt_bool(cell.converged),
                      std::to_string(cell.iterations)});
    }
    write_csv(out_csv_path, header, rows);
    outputs.files.push_back(out_csv_path);
  } else if (kind == "mamp-run") {
    const Eigen::Index n = c.at("n").get<long long>();
    const double rho_x = c.at("rho_x").get<double>();
    const double rho_y = c.at("rho_y").get<double>();
    const Eigen::Index mx = static_cast<Eigen::Index>(std::lround(rho_x * static_cast<double>(n)));
    const Eigen::Index my = static_cast<Eigen::Index>(std::lround(rho_y * static_cast<double>(n)));
    if (mx < 1 || my < 1) throw std::invalid_argument("rho_x/rho_y: too small for n");
    const double sigma2_x = c.value("sigma2_x", 0.0);
    const double sigma2_y = c.value("sigma2_y", 0.0);

    GaussianEnsemble a = make_ensemble(mx, n, seed);
    GaussianEnsemble b = make_ensemble(my, n, seed + 1);
    Eigen::MatrixXd truth = sample_source(spec, n, seed);
    Eigen::VectorXd u = measure(a, truth.row(0).transpose(), sigma2_x, seed, 0);
    Eigen::VectorXd v = measure(b, truth.row(1).transpose(), sigma2_y, seed, 1);

    MampOptions options;
    options.max_iter = static_cast<int>(c.value("max_iter", 100LL));
    options.stop_tol = c.value("stop_tol", 1e-8);

    TauSchedule schedule;
    if (c.value("tau_mode", std::string("oracle")) == "oracle") {
      SeParams params{a.rate, b.rate, sigma2_x, sigma2_y};
      McParams mc{mc_samples, seed};
      const auto fp = se_fixed_point(spec, params, mc, 1e-10,
                                     static_cast<int>(c.value("se_max_iter", 500LL)));
      schedule = TauSchedule::oracle(fp.trajectory);
    } else {
      schedule = TauSchedule::empirical();
    }

    const MampResult run = mamp_run(a, b, u, v, spec, schedule, options, &truth);
    header = {"iter", "mse_x", "mse_y", "residual_var_x", "residual_var_y",
              "se_tau_x", "se_tau_y"};
    for (std::size_t t = 0; t < run.trace.iterations.size(); ++t) {
      const IterationRecord& rec = run.trace.iterations[t];
      rows.push_back({std::to_string(t), format_double(rec.mse_x), format_double(rec.mse_y),
                      format_double(rec.residual_var_x), format_double(rec.residual_var_y),
                      format_double(rec.se_tau_x), format_double(rec.se_tau_y)});
    }
    write_csv(out_csv_path, header, rows);
    outputs.files.push_back(out_csv_path);
  } else if (kind == "coupled-run") {
    const WeightMatrix weight = build_weight_matrix(
        static_cast<int>(c.at("l_c").get<long long>()),
        static_cast<int>(c.at("bandwidth").get<long long>()),
        static_cast<int>(c.at("seed_blocks").get<long long>()), c.at("seed_boost").get<double>());
    CoupledSeParams params{c.at("delta_x").get<double>(), c.at("delta_y").get<double>(),
                           c.value("sigma2_x", 0.0), c.value("sigma2_y", 0.0)};
    MmseSampler sampler(spec, mc_samples, seed);
    CoupledSeOptions opts;
    opts.recovery_threshold = c.value("recovery_threshold", 1e-4);
    const CoupledSeResult se = coupled_se_run(
        weight, params, static_cast<int>(c.value("max_time", 400LL)), sampler, opts);

    CoupledRunTrace trace;
    const bool wants_mamp = c.value("run_mamp", false);
    if (wants_mamp) {
      const Eigen::Index bn = c.at("block_n").get<long long>();
      const Eigen::Index bmx =
          static_cast<Eigen::Index>(std::lround(params.delta_x * static_cast<double>(bn)));
      const Eigen::Index bmy =
          static_cast<Eigen::Index>(std::lround(params.delta_y * static_cast<double>(bn)));
      if (bmx < 1 || bmy < 1) throw std::invalid_argument("delta_x/delta_y: too small for block_n");
      const CoupledEnsemble a = build_coupled_ensemble(weight, bmx, bn, seed);
      const CoupledEnsemble b = build_coupled_ensemble(weight, bmy, bn, seed + 1);
      Eigen::MatrixXd truth = sample_source(spec, a.n(), seed);
      Eigen::VectorXd u = measure_matrix(a.matrix, truth.row(0).transpose(), params.sigma2_x, seed, 0);
      Eigen::VectorXd v = measure_matrix(b.matrix, truth.row(1).transpose(), params.sigma2_y, seed, 1);
      const CoupledMampResult run = coupled_mamp_run(
          a, b, u, v, spec, se.states, static_cast<int>(c.value("max_iter", 400LL)),
          c.value("stop_tol", 1e-8), &truth);
      trace = run.trace;
    }

    header = {"t", "terminal", "block", "psi", "empirical_mse"};
    append_wave_rows(rows, se.states, wants_mamp ? &trace : nullptr);
    write_csv(out_csv_path, header, rows);
    outputs.files.push_back(out_csv_path);
  } else if (kind == "phase-boundary") {
    const WeightMatrix weight = build_weight_matrix(
        static_cast<int>(c.at("l_c").get<long long>()),
        static_cast<int>(c.at("bandwidth").get<long long>()),
        static_cast<int>(c.at("seed_blocks").get<long long>()), c.at("seed_boost").get<double>());
    MmseSampler sampler(spec, mc_samples, seed);
    const auto points = phase_boundary_search(
        weight, c.at("delta_x_grid").get<std::vector<double>>(),
        c.at("delta_y_lo").get<double>(), c.at("delta_y_hi").get<double>(),
        c.value("sigma2_x", 0.0), c.value("sigma2_y", 0.0),
        static_cast<int>(c.value("max_time", 400LL)), sampler,
        c.value("recovery_threshold", 1e-4), c.value("bisect_tol", 0.005));
    header = {"delta_x", "delta_y_boundary", "converged_t", "anomaly"};
    for (const auto& p : points) {
      rows.push_back({format_double(p.delta_x), format_double(p.delta_y_boundary),
                      std::to_string(p.converged_t), fmt_bool(p.anomaly)});
    }
    write_csv(out_csv_path, header, rows);
    outputs.files.push_back(out_csv_path);

    if (spec.terminals() == 2) {
      const double d_x = rid(spec, {0});
      const double d_y = rid(spec, {1});
      const double d_xy = rid_conditional(spec, {0}, {1});
      const double d_yx = rid_conditional(spec, {1}, {0});
      std::vector<std::vector<std::string>> corners = {
          {format_double(d_xy), format_double(1.0)},
          {format_double(d_xy), format_double(d_y)},
          {format_double(d_x), format_double(d_yx)},
          {format_double(1.0), format_double(d_yx)},
      };
      const std::string pentagon_path = base + ".pentagon.csv";
      write_csv(pentagon_path, {"delta_x", "delta_y"}, corners);
      outputs.files.push_back(pentagon_path);
    }
  } else if (kind == "fresh-se-check") {
    SeParams params{c.at("rho_x").get<double>(), c.at("rho_y").get<double>(),
                    c.value("sigma2_x", 0.0), c.value("sigma2_y", 0.0)};
    McParams mc{mc_samples, seed};
    const auto records = fresh_matrix_se_check(
        spec, params, c.at("n").get<long long>(),
        static_cast<int>(c.at("iterations").get<long long>()), seed, mc);
    header = {"iteration", "tau_se_x", "tau_se_y", "tau_emp_x", "tau_emp_y"};
    for (const auto& rec : records) {
      rows.push_back({std::to_string(rec.iteration), format_double(rec.tau_se_x),
                      format_double(rec.tau_se_y), format_double(rec.tau_emp_x),
                      format_double(rec.tau_emp_y)});
    }
    write_csv(out_csv_path, header, rows);
    outputs.files.push_back(out_csv_path);
  }

  const auto stopped = std::chrono::steady_clock::now();
  Json manifest;
  manifest["version"] = kVersion;
  manifest["kind"] = kind;
  manifest["config"] = c;
  manifest["outputs"] = outputs.files;
  manifest["wall_time_seconds"] =
      std::chrono::duration<double>(stopped - started).count();
  const std::string manifest_path = base + ".manifest.json";
  write_text_atomic(manifest_path, manifest.dump(2) + "\n");
  outputs.files.push_back(manifest_path);
  return outputs;
}

}  // namespace mtcs

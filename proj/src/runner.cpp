#include "occp/runner.hpp"

#include "occp/config.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

namespace occp {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

Sweep parse_sweep(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size())
    throw ConfigError("sweep must look like key=v1,v2,... (got \"" + text + "\")");
  Sweep s;
  s.key = text.substr(0, eq);
  const auto keys = config_keys();
  if (std::find(keys.begin(), keys.end(), s.key) == keys.end())
    throw ConfigError("sweep: unknown key \"" + s.key + "\"");
  std::stringstream ss(text.substr(eq + 1));
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) s.values.push_back(item);
  if (s.values.empty()) throw ConfigError("sweep: no values for " + s.key);
  return s;
}

namespace {

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  if (v.empty()) return m;
  const double n = static_cast<double>(v.size());
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() > 1) {
    double var = 0.0;
    for (double x : v) var += (x - m.mean) * (x - m.mean);
    m.stddev = std::sqrt(var / (n - 1.0));
  }
  return m;
}

json to_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.stddev}}; }

json to_json(const SolveStats& s) {
  return {{"mean", s.mean}, {"max", s.max}, {"min", s.min}, {"std", s.stddev}};
}

json to_json(const RunMetrics& m) {
  return {{"completed", m.completed},
          {"task_duration", m.task_duration},
          {"v_min", m.v_min},
          {"v_mean", m.v_mean},
          {"v_max", m.v_max},
          {"v_terminal", m.v_terminal},
          {"collision", m.collision},
          {"solve_ms", to_json(m.solve_ms)},
          {"solve_cpu_ms", to_json(m.solve_cpu_ms)},
          {"cycles", m.cycles},
          {"nonconverged", m.nonconverged},
          {"max_iterations", m.max_iterations}};
}

json to_json(const Aggregate& a) {
  return {{"trials", a.trials},
          {"completed", a.completed},
          {"collisions", a.collisions},
          {"task_duration", to_json(a.task_duration)},
          {"v_min", to_json(a.v_min)},
          {"v_mean", to_json(a.v_mean)},
          {"v_max", to_json(a.v_max)},
          {"solve_mean_ms", to_json(a.solve_mean)},
          {"solve_max_ms", to_json(a.solve_max)},
          {"solve_min_ms", to_json(a.solve_min)},
          {"cpu_mean_ms", to_json(a.cpu_mean)},
          {"cpu_max_ms", to_json(a.cpu_max)}};
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-' || c == '=') ? c : '_';
  return out;
}

void write_file(const fs::path& p, const std::function<void(std::ostream&)>& body) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << std::setprecision(10);
  body(os);
}

struct Job {
  int point;
  int trial;
};

TrialResult run_trial(const ScenarioConfig& cfg, const RunSpec& spec, const fs::path& dir) {
  TrialResult t;
  t.seed = cfg.seed;
  try {
    RunOptions opts;
    opts.record_admm = spec.trace_admm;
    const std::string tag = "seed" + std::to_string(cfg.seed);
    if (spec.dump_risk && !dir.empty()) {
      fs::create_directories(dir / ("risk_" + tag));
      opts.on_risk = [&](int cycle, const CycleTrace&, const RiskAssessment& risk) {
        if (risk.fields.empty()) return;
        write_file(dir / ("risk_" + tag) / ("cycle" + std::to_string(cycle) + ".csv"),
                   [&](std::ostream& os) { write_risk_csv(os, risk.fields); });
      };
    }
    RunResult r = run_scenario(cfg, opts);
    if (!dir.empty()) {
      write_file(dir / ("trace_" + tag + ".csv"), [&](std::ostream& os) { write_trace_csv(os, r.trace); });
      write_file(dir / ("velocity_profile_" + tag + ".csv"), [&](std::ostream& os) {
        write_velocity_profile_csv(os, r.trace, cfg.plot_cycle, cfg.dt);
      });
      write_file(dir / ("solve_time_" + tag + ".csv"),
                 [&](std::ostream& os) { write_solve_time_csv(os, r.trace); });
      if (spec.trace_admm)
        write_file(dir / ("admm_" + tag + ".csv"), [&](std::ostream& os) { write_admm_csv(os, r.admm); });
    }
    t.metrics = r.metrics;
    t.trace = std::move(r.trace);
    t.ok = true;
  } catch (const std::exception& e) {
    t.error = e.what();
  }
  return t;
}

}  // namespace

Aggregate aggregate(const std::vector<RunMetrics>& trials) {
  Aggregate a;
  a.trials = static_cast<int>(trials.size());
  std::vector<double> dur, vmin, vmean, vmax, smean, smax, smin, cmean, cmax;
  for (const auto& m : trials) {
    a.collisions += m.collision ? 1 : 0;
    smean.push_back(m.solve_ms.mean);
    smax.push_back(m.solve_ms.max);
    smin.push_back(m.solve_ms.min);
    cmean.push_back(m.solve_cpu_ms.mean);
    cmax.push_back(m.solve_cpu_ms.max);
    if (!m.completed) continue;
    ++a.completed;
    dur.push_back(m.task_duration);
    vmin.push_back(m.v_min);
    vmean.push_back(m.v_mean);
    vmax.push_back(m.v_max);
  }
  a.task_duration = mean_std(dur);
  a.v_min = mean_std(vmin);
  a.v_mean = mean_std(vmean);
  a.v_max = mean_std(vmax);
  a.solve_mean = mean_std(smean);
  a.solve_max = mean_std(smax);
  a.solve_min = mean_std(smin);
  a.cpu_mean = mean_std(cmean);
  a.cpu_max = mean_std(cmax);
  return a;
}

int worker_count(int requested, int jobs) {
  int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("OCCP_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return std::clamp(n, 1, std::max(1, jobs));
}

RunOutcome run(const RunSpec& spec) {
  if (spec.trials < 1) throw ConfigError("trials must be >= 1");
  ScenarioConfig base = spec.base;
  if (spec.mode) base.mode = *spec.mode;
  const std::uint64_t seed0 = spec.seed ? *spec.seed : base.seed;

  RunOutcome out;
  if (spec.sweep) {
    for (const auto& v : spec.sweep->values) {
      PointResult p;
      p.label = spec.sweep->key + "=" + v;
      p.config = with_config_value(base, spec.sweep->key, v);
      out.points.push_back(std::move(p));
    }
  } else {
    PointResult p;
    p.label = "base";
    p.config = base;
    out.points.push_back(std::move(p));
  }

  std::vector<fs::path> dirs(out.points.size());
  if (!spec.out_dir.empty())
    for (std::size_t i = 0; i < out.points.size(); ++i) {
      dirs[i] = spec.sweep ? fs::path(spec.out_dir) / sanitize(out.points[i].label) : fs::path(spec.out_dir);
      fs::create_directories(dirs[i]);
    }

  std::vector<Job> jobs;
  for (int p = 0; p < static_cast<int>(out.points.size()); ++p) {
    out.points[p].trials.resize(spec.trials);
    for (int t = 0; t < spec.trials; ++t) jobs.push_back({p, t});
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      const Job& job = jobs[j];
      ScenarioConfig cfg = out.points[job.point].config;
      cfg.seed = seed0 + static_cast<std::uint64_t>(job.trial);
      out.points[job.point].trials[job.trial] = run_trial(cfg, spec, dirs[job.point]);
    }
  };
  const int workers = worker_count(spec.threads, static_cast<int>(jobs.size()));
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  bool failed = false, collided = false;
  for (auto& p : out.points) {
    std::vector<RunMetrics> ms;
    for (const auto& t : p.trials) {
      failed = failed || !t.ok;
      if (t.ok) ms.push_back(t.metrics);
    }
    p.agg = aggregate(ms);
    collided = collided || p.agg.collisions > 0;
  }
  if (failed)
    out.exit_code = 2;
  else if (spec.strict && base.mode != RunMode::Ignorant && collided)
    out.exit_code = 1;

  if (!spec.out_dir.empty()) {
    write_file(fs::path(spec.out_dir) / "metrics.json",
               [&](std::ostream& os) { os << metrics_json(out, spec) << "\n"; });
    write_file(fs::path(spec.out_dir) / "summary.txt",
               [&](std::ostream& os) { os << summary_table(out, base.mode); });
  }
  return out;
}

std::string summary_table(const RunOutcome& out, RunMode mode) {
  auto ms = [](const MeanStd& m, int prec = 2) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(prec) << m.mean << " (" << m.stddev << ")";
    return o.str();
  };
  std::ostringstream o;
  o << std::left << std::setw(22) << "Run" << std::setw(11) << "Collision" << std::setw(15) << "Duration (s)"
    << std::setw(14) << "v min" << std::setw(14) << "v mean" << std::setw(14) << "v max" << std::setw(15)
    << "Solve mean" << std::setw(17) << "Solve max" << std::setw(15) << "Solve min"
    << "Trials\n";
  for (const auto& p : out.points) {
    const Aggregate& a = p.agg;
    const std::string label = p.label == "base" ? to_string(mode) : to_string(mode) + " " + p.label;
    o << std::setw(22) << label << std::setw(11) << (a.collisions > 0 ? "Yes" : "No") << std::setw(15)
      << ms(a.task_duration) << std::setw(14) << ms(a.v_min) << std::setw(14) << ms(a.v_mean) << std::setw(14)
      << ms(a.v_max) << std::setw(15) << ms(a.solve_mean) << std::setw(17) << ms(a.solve_max)
      << std::setw(15) << ms(a.solve_min) << a.completed << "/" << a.trials;
    if (a.collisions > 0) o << " (" << a.collisions << " with collision)";
    o << "\n";
  }
  o << "Duration and velocities in mean (std) over completed trials; velocities in m/s, solve times in ms.\n";
  return o.str();
}

std::string metrics_json(const RunOutcome& out, const RunSpec& spec) {
  json doc;
  doc["mode"] = to_string(spec.mode ? *spec.mode : spec.base.mode);
  doc["trials"] = spec.trials;
  doc["seed_base"] = spec.seed ? *spec.seed : spec.base.seed;
  doc["exit_code"] = out.exit_code;
  if (spec.sweep) doc["sweep_key"] = spec.sweep->key;
  json points = json::array();
  for (const auto& p : out.points) {
    json jp;
    jp["label"] = p.label;
    jp["aggregate"] = to_json(p.agg);
    json trials = json::array();
    for (const auto& t : p.trials) {
      json jt = {{"seed", t.seed}, {"ok", t.ok}};
      if (t.ok)
        jt["metrics"] = to_json(t.metrics);
      else
        jt["error"] = t.error;
      trials.push_back(jt);
    }
    jp["trials"] = trials;
    points.push_back(jp);
  }
  doc["points"] = points;
  return doc.dump(2);
}

void write_trace_csv(std::ostream& os, const std::vector<CycleTrace>& trace) {
  os << "t,px,py,theta,v,sel,solve_ms,iters,residual,r_total,v0_occ,v1_occ,collision\n";
  for (const auto& c : trace)
    os << c.t << ',' << c.ev.px << ',' << c.ev.py << ',' << c.ev.theta << ',' << c.ev.v << ',' << c.selected
       << ',' << c.solve_ms << ',' << c.iterations << ',' << c.residual << ',' << c.r_total << ','
       << c.bounds.v0_occ << ',' << c.bounds.v1_occ << ',' << (c.collision ? 1 : 0) << '\n';
}

void write_admm_csv(std::ostream& os, const std::vector<AdmmTraceRow>& rows) {
  os << "cycle,iter,residual,obj,wall_us\n";
  for (const auto& r : rows)
    os << r.cycle << ',' << r.rec.iter << ',' << r.rec.residual << ',' << r.rec.objective << ','
       << r.rec.wall_us << '\n';
}

void write_risk_csv(std::ostream& os, const std::vector<RiskField>& fields) {
  os << "s,d,r\n";
  for (const auto& f : fields)
    for (std::size_t i = 0; i < f.s.size(); ++i)
      for (std::size_t j = 0; j < f.d.size(); ++j)
        os << f.s[i] << ',' << f.d[j] << ',' << f.r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))
           << '\n';
}

void write_velocity_profile_csv(std::ostream& os, const std::vector<CycleTrace>& trace, int cycle,
                                double dt) {
  os << "k,t,v_explore,v_fallback\n";
  int planned = 0;
  for (const auto& c : trace) {
    if (!c.planned) continue;
    if (planned++ != cycle) continue;
    for (Eigen::Index k = 0; k < c.speed_explore.size() && k < c.speed_fallback.size(); ++k)
      os << k << ',' << c.t + static_cast<double>(k) * dt << ',' << c.speed_explore(k) << ','
         << c.speed_fallback(k) << '\n';
    return;
  }
}

void write_solve_time_csv(std::ostream& os, const std::vector<CycleTrace>& trace) {
  os << "cycle,t,solve_ms,solve_cpu_ms,iters\n";
  int k = 0;
  for (const auto& c : trace) {
    if (!c.planned) continue;
    os << k++ << ',' << c.t << ',' << c.solve_ms << ',' << c.solve_cpu_ms << ',' << c.iterations << '\n';
  }
}

}  // namespace occp

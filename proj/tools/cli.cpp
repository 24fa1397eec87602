// Copyright 2026 The lowbit Authors
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "lowbit/errors.hpp"
#include "lowbit/tuner.hpp"

namespace lowbit::tools {
namespace {

namespace fs = std::filesystem;

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw FormatError("short write to '" + tmp.string() + "'");
    }
  }
  fs::rename(tmp, path);
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(1) + "\n"); }

std::string fixed(double v, int digits = 6) {
  std::ostringstream s;
  s << std::setprecision(digits) << std::scientific << v;
  return s.str();
}

void print_report(std::ostream& out, const SensitivityReport& r) {
  out << std::left << std::setw(18) << "layer" << std::right << std::setw(10) << "params";
  for (int b : r.options) out << std::setw(15) << r.scheme(b).label();
  out << '\n';
  for (const auto& l : r.layers) {
    out << std::left << std::setw(18) << l.name << std::right << std::setw(10) << l.params;
    for (int b : r.options) out << std::setw(15) << fixed(l.scores.at(b), 4);
    out << '\n';
  }
}

void print_assignment(std::ostream& out, const BitAssignment& a) {
  for (std::size_t i = 0; i < a.names.size(); ++i) {
    out << std::left << std::setw(18) << a.names[i] << std::right << std::setw(4) << a.bits[i]
        << '\n';
  }
  for (const auto& name : a.excluded) {
    out << std::left << std::setw(18) << name << std::right << std::setw(4) << kFullPrecisionBits
        << "  (excluded)\n";
  }
  out << "solver " << a.solver << "  target " << a.target.str() << "  average bits "
      << std::setprecision(6) << std::defaultfloat << a.average_bits << "  objective "
      << fixed(a.objective) << '\n';
}

void print_stages(std::ostream& out, const std::vector<StageReport>& stages) {
  out << std::left << std::setw(8) << "stage" << std::right << std::setw(15) << "rtn"
      << std::setw(15) << "initial" << std::setw(15) << "final" << std::setw(8) << "best@"
      << '\n';
  for (const auto& s : stages) {
    if (s.layers.empty()) continue;
    out << std::left << std::setw(8) << s.stage << std::right << std::setw(15)
        << fixed(s.rtn_loss, 4) << std::setw(15) << fixed(s.initial_loss, 4) << std::setw(15)
        << fixed(s.final_loss, 4) << std::setw(8) << s.best_step << '\n';
  }
}

BitAssignment load_or_allocate(const RunConfig& cfg, const std::string& assignment_path,
                               std::ostream& out) {
  if (!assignment_path.empty()) return BitAssignment::load(assignment_path);
  out << "no assignment given; scoring sensitivity and allocating\n";
  return run_allocate(run_sensitivity(cfg), cfg);
}

// Largest option not above the target, used for the uniform baseline.
int uniform_bits(const RunConfig& cfg) {
  int best = *std::min_element(cfg.options.begin(), cfg.options.end());
  for (int b : cfg.options) {
    if (std::int64_t{b} * cfg.target.den <= cfg.target.num) best = std::max(best, b);
  }
  return best;
}

struct CommonArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out_dir;

  RunConfig load() const {
    std::vector<std::string> all = overrides;
    if (!out_dir.empty()) all.push_back("run.out_dir=" + out_dir);
    return load_config(config, all);
  }
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config, "INI config file");
  cmd->add_option("--set", args.overrides, "override, section.key=value")->take_all();
  cmd->add_option("-o,--out-dir", args.out_dir, "output directory");
}

}  // namespace

SensitivityReport run_sensitivity(const RunConfig& cfg) {
  const Model model = Model::build(cfg.model);
  const CalibSet calib = cfg.sensitivity_calib();
  SensitivityOptions opts;
  opts.grad_at_full_precision = cfg.grad_at_full_precision;
  return build_report(model, cfg.options, cfg.family, cfg.group_size, calib, opts);
}

BitAssignment run_allocate(const SensitivityReport& report, const RunConfig& cfg) {
  const AllocationProblem p = problem_from_report(report, cfg.target, cfg.exclude);
  BitAssignment a;
  if (cfg.solver == "dp") {
    a = allocate_dp(p);
  } else if (cfg.solver == "brute") {
    a = allocate_brute(p);
  } else {
    a = allocate_heuristic(p, parse_heuristic(cfg.solver), cfg.high_bits);
  }
  validate_assignment(p, a);
  return a;
}

QuantizeOutputs run_quantize(const RunConfig& cfg, const BitAssignment& assignment) {
  const Model model = Model::build(cfg.model);
  const std::vector<QuantScheme> schemes = schemes_from_assignment(model, assignment);
  const CalibSet calib = cfg.tune_calib();
  const CalibSet eval = cfg.eval_set();

  TuneConfig no_tune = cfg.tune;
  no_tune.steps = 0;
  const QuantizedModel dl_only = quantize_model(model, schemes, calib, no_tune);
  const QuantizedModel tuned =
      cfg.tune.steps > 0 ? quantize_model(model, schemes, calib, cfg.tune) : dl_only;

  const int rtn_b = uniform_bits(cfg);
  std::vector<QuantScheme> rtn_schemes = schemes;
  for (std::size_t i = 0; i < rtn_schemes.size(); ++i) {
    const std::string& name = model.layers()[i].name;
    const bool excluded = std::find(assignment.excluded.begin(), assignment.excluded.end(),
                                    name) != assignment.excluded.end();
    if (!excluded) rtn_schemes[i] = {assignment.family, rtn_b, assignment.group_size};
  }
  const QuantizedModel rtn = quantize_model(model, rtn_schemes, calib, no_tune);

  const nlohmann::json config = cfg.to_json();
  const nlohmann::json asg = assignment.to_json();
  QuantizeOutputs outs{build_artifact(model, tuned, config, asg), {}};

  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : tuned.stages) stages.push_back(s.to_json());
  outs.metrics = {{"format", "lowbit-metrics/1"},
                  {"config_digest", hex64(outs.artifact.config_digest)},
                  {"assignment_digest", hex64(outs.artifact.assignment_digest)},
                  {"average_bits", assignment.average_bits},
                  {"rtn_bits", rtn_b},
                  {"eval",
                   {{"samples", eval.n_samples},
                    {"seq_len", eval.seq_len},
                    {"fp", eval_loss(model, eval)},
                    {"rtn", rtn.eval_loss(eval)},
                    {"dl-only", dl_only.eval_loss(eval)},
                    {"tuned", tuned.eval_loss(eval)}}},
                  {"stages", stages}};
  return outs;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"lowbit: mixed-precision post-training quantization for toy models", "lowbit"};
  app.require_subcommand(1);

  CommonArgs sens_args;
  CLI::App* sens = app.add_subcommand("sensitivity", "score per-layer loss sensitivity");
  add_common(sens, sens_args);

  CommonArgs alloc_args;
  std::string alloc_report, alloc_target, alloc_solver, alloc_output;
  CLI::App* alloc = app.add_subcommand("allocate", "assign bit widths under a budget");
  add_common(alloc, alloc_args);
  alloc->add_option("--report", alloc_report, "sensitivity report JSON")->required();
  alloc->add_option("--target", alloc_target, "average bits, e.g. 2.5 or 8/3");
  alloc->add_option("--mode", alloc_solver, "dp, brute, head or tail");

  CommonArgs tune_args;
  std::string tune_assignment;
  CLI::App* tune = app.add_subcommand("tune", "tune quantized stages and report losses");
  add_common(tune, tune_args);
  tune->add_option("--assignment", tune_assignment, "bit assignment JSON");

  CommonArgs quant_args;
  std::string quant_assignment;
  CLI::App* quant = app.add_subcommand("quantize", "run the full pipeline and write an artifact");
  add_common(quant, quant_args);
  quant->add_option("--assignment", quant_assignment, "bit assignment JSON");

  std::string verify_path;
  CLI::App* verify = app.add_subcommand("verify", "re-check an artifact");
  verify->add_option("artifact", verify_path, "artifact file")->required();

  CommonArgs report_args;
  std::string report_input;
  bool report_tuned = false;
  CLI::App* report = app.add_subcommand("report", "compare DeltaLoss and heuristic allocations");
  add_common(report, report_args);
  report->add_option("--report", report_input, "sensitivity report JSON (computed if absent)");
  report->add_flag("--with-tuning", report_tuned, "also tune the DeltaLoss allocation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  try {
    if (*sens) {
      const RunConfig cfg = sens_args.load();
      const SensitivityReport r = run_sensitivity(cfg);
      const fs::path path = fs::path(cfg.out_dir) / "sensitivity.json";
      write_json(path, r.to_json());
      print_report(out, r);
      out << "wrote " << path.string() << '\n';
    } else if (*alloc) {
      std::vector<std::string> sets = alloc_args.overrides;
      if (!alloc_target.empty()) sets.push_back("quant.target_bits=" + alloc_target);
      if (!alloc_solver.empty()) sets.push_back("quant.solver=" + alloc_solver);
      CommonArgs merged = alloc_args;
      merged.overrides = sets;
      RunConfig cfg = merged.load();
      const SensitivityReport r = SensitivityReport::load(alloc_report);
      cfg.options = r.options;
      cfg.family = r.family;
      cfg.group_size = r.group_size;
      const BitAssignment a = run_allocate(r, cfg);
      const fs::path path = fs::path(cfg.out_dir) / "assignment.json";
      write_json(path, a.to_json());
      print_assignment(out, a);
      out << "wrote " << path.string() << '\n';
    } else if (*tune) {
      const RunConfig cfg = tune_args.load();
      const BitAssignment a = load_or_allocate(cfg, tune_assignment, out);
      const Model model = Model::build(cfg.model);
      const QuantizedModel q =
          quantize_model(model, schemes_from_assignment(model, a), cfg.tune_calib(), cfg.tune);
      nlohmann::json stages = nlohmann::json::array();
      for (const auto& s : q.stages) stages.push_back(s.to_json());
      const fs::path path = fs::path(cfg.out_dir) / "tune.json";
      write_json(path, {{"format", "lowbit-tune/1"}, {"stages", stages}});
      print_stages(out, q.stages);
      out << "wrote " << path.string() << '\n';
    } else if (*quant) {
      const RunConfig cfg = quant_args.load();
      const BitAssignment a = load_or_allocate(cfg, quant_assignment, out);
      const QuantizeOutputs q = run_quantize(cfg, a);
      const fs::path dir(cfg.out_dir);
      fs::create_directories(dir);
      const fs::path artifact = dir / "model.lbqa";
      q.artifact.write(artifact.string());
      try {
        write_json(dir / "metrics.json", q.metrics);
      } catch (...) {
        fs::remove(artifact);
        throw;
      }
      const auto& ev = q.metrics.at("eval");
      out << "eval loss  fp " << fixed(ev.at("fp").get<double>()) << "  rtn "
          << fixed(ev.at("rtn").get<double>()) << "  dl-only "
          << fixed(ev.at("dl-only").get<double>()) << "  tuned "
          << fixed(ev.at("tuned").get<double>()) << '\n';
      out << "wrote " << artifact.string() << " and " << (dir / "metrics.json").string() << '\n';
    } else if (*verify) {
      const QuantizedArtifact a = QuantizedArtifact::read(verify_path);
      bool ok = true;
      for (const VerifyCheck& c : verify_artifact(a)) {
        out << (c.ok ? "ok    " : "FAIL  ") << c.name;
        if (!c.detail.empty()) out << "  " << c.detail;
        out << '\n';
        ok = ok && c.ok;
      }
      return ok ? kExitOk : kExitFailure;
    } else if (*report) {
      const RunConfig cfg = report_args.load();
      const SensitivityReport r =
          report_input.empty() ? run_sensitivity(cfg) : SensitivityReport::load(report_input);
      const AllocationProblem p = problem_from_report(r, cfg.target, cfg.exclude);
      const Model model = Model::build(cfg.model);
      const CalibSet calib = cfg.tune_calib();
      const CalibSet eval = cfg.eval_set();
      TuneConfig no_tune = cfg.tune;
      no_tune.steps = 0;

      std::vector<BitAssignment> rows = {allocate_dp(p),
                                         allocate_heuristic(p, HeuristicMode::kHead, cfg.high_bits),
                                         allocate_heuristic(p, HeuristicMode::kTail, cfg.high_bits)};
      nlohmann::json entries = nlohmann::json::array();
      out << std::left << std::setw(10) << "method" << std::right << std::setw(12) << "avg bits"
          << std::setw(15) << "objective" << std::setw(15) << "eval loss" << '\n';
      const auto emit = [&](const std::string& label, const BitAssignment& a, double loss) {
        validate_assignment(p, a);
        out << std::left << std::setw(10) << label << std::right << std::setw(12)
            << std::setprecision(5) << std::defaultfloat << a.average_bits << std::setw(15)
            << fixed(a.objective, 4) << std::setw(15) << fixed(loss, 6) << '\n';
        entries.push_back({{"method", label},
                           {"average_bits", a.average_bits},
                           {"objective", a.objective},
                           {"eval_loss", loss},
                           {"assignment", a.to_json()}});
      };
      for (const BitAssignment& a : rows) {
        const QuantizedModel q =
            quantize_model(model, schemes_from_assignment(model, a), calib, no_tune);
        emit(a.solver == "dp" ? "dl-only" : a.solver + "-" + std::to_string(cfg.high_bits),
             a, q.eval_loss(eval));
      }
      if (report_tuned) {
        const QuantizedModel q =
            quantize_model(model, schemes_from_assignment(model, rows[0]), calib, cfg.tune);
        emit("tuned", rows[0], q.eval_loss(eval));
      }
      const fs::path path = fs::path(cfg.out_dir) / "report.json";
      write_json(path, {{"format", "lowbit-report/1"},
                        {"fp_eval_loss", eval_loss(model, eval)},
                        {"target", cfg.target.str()},
                        {"rows", entries}});
      out << "wrote " << path.string() << '\n';
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InfeasibleError& e) {
    err << "infeasible: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace lowbit::tools

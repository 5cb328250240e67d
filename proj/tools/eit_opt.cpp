// eit-opt: command-line driver for the three-stage EIT experiment.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "eitopt/experiment.hpp"

namespace fs = std::filesystem;
using namespace eitopt;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kConfig = 2, kSolver = 3, kOptimizer = 4, kValidation = 5 };

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<double> beta;
  std::optional<double> rv;
  bool flip_gradient = false;
};

ExperimentConfig load(const Options& o) {
  std::ifstream in(o.config);
  if (!in) throw ConfigError("cannot open config file '" + o.config + "'");
  auto cfg = parse_config(in);
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (o.seed) cfg.pca_seed = *o.seed;
  if (o.rv) cfg.pca_r_opt = *o.rv;
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  return cfg;
}

fs::path path_in(const ExperimentConfig& cfg, const std::string& name) {
  return fs::path(cfg.output_dir) / name;
}

std::ofstream open_out(const ExperimentConfig& cfg, const std::string& name) {
  std::ofstream os(path_in(cfg, name));
  if (!os) throw Error("cannot write '" + path_in(cfg, name).string() + "'");
  return os;
}

VoltageVector read_u_star(const ExperimentConfig& cfg) {
  const auto p = path_in(cfg, "u_star.txt");
  std::ifstream in(p);
  if (!in) throw ConfigError("missing '" + p.string() + "'; run stage1 first");
  VoltageVector u(read_values(in));
  if (u.size() != static_cast<std::size_t>(cfg.m))
    throw ConfigError("'" + p.string() + "' does not hold m voltages");
  return u;
}

void write_field(const ExperimentConfig& cfg, const Setup& s, const std::string& stem,
                 std::span<const double> values) {
  auto txt = open_out(cfg, stem + ".txt");
  write_values(txt, values);
  auto vtk = open_out(cfg, stem + ".vtk");
  write_vtk(vtk, s.model.mesh(), values);
}

void report_inversion(const ExperimentConfig& cfg, const Setup& s, const std::string& stage,
                      const InversionResult& r) {
  {
    auto csv = open_out(cfg, stage + "_run.csv");
    write_run_csv(csv, r.run);
  }
  write_field(cfg, s, stage + "_sigma", r.run.sigma.values);
  {
    auto u = open_out(cfg, stage + "_u.txt");
    write_values(u, r.run.U.span());
  }
  auto os = open_out(cfg, stage + "_summary.txt");
  for (std::ostream* o : {static_cast<std::ostream*>(&os), static_cast<std::ostream*>(&std::cout)}) {
    const auto& f = r.run.final_row();
    *o << stage << ": " << r.run.iterations() << " iterations, " << to_string(r.run.reason) << '\n';
    *o << "  cost " << r.run.rows.front().cost << " -> " << f.cost << " (mismatch " << f.mismatch
       << ", reg " << f.reg << ")\n";
    *o << "  N_sigma " << r.initial_norms.n_sigma << " -> " << r.final_norms.n_sigma << '\n';
    *o << "  N_U " << r.initial_norms.n_u << " -> " << r.final_norms.n_u << '\n';
    *o << "  outside mean sigma " << r.detection.outside_mean << '\n';
    for (const auto& spot : r.detection.spots)
      *o << "  inclusion (" << spot.inclusion.x << ", " << spot.inclusion.y << ", r "
         << spot.inclusion.r << "): mean " << spot.mean << ", margin " << spot.margin << '\n';
  }
}

int cmd_stage1(const Options& o) {
  const auto cfg = load(o);
  const auto s = make_setup(cfg);
  const auto r = run_stage1(s);
  {
    auto u = open_out(cfg, "u_star.txt");
    write_values(u, r.u_star.span());
    auto csv = open_out(cfg, "stage1_run.csv");
    write_run_csv(csv, r.run);
    auto cur = open_out(cfg, "stage1_currents.txt");
    cur << std::setprecision(17) << "# l I_target I_closed_loop\n";
    for (std::size_t l = 0; l < r.closed_loop.size(); ++l)
      cur << l + 1 << ' ' << s.currents[l] << ' ' << r.closed_loop[l] << '\n';
  }
  std::cout << "stage1: " << r.run.iterations() << " iterations, " << to_string(r.run.reason)
            << ", cost " << r.run.rows.front().cost << " -> " << r.run.final_row().cost << '\n';
  std::cout << "  closed-loop max current error " << r.max_current_error << " A\n";
  if (!(r.max_current_error <= 1e-3)) {
    std::cerr << "stage1: closed-loop currents do not reproduce the injected pattern\n";
    return kOptimizer;
  }
  return kOk;
}

int cmd_stage2(const Options& o) {
  const auto cfg = load(o);
  const auto s = make_setup(cfg);
  const auto u_star = read_u_star(cfg);
  std::optional<PcaBasis> basis;
  if (cfg.stage2_pca) basis = build_pca(s);
  const auto r = run_stage2(s, u_star, o.beta.value_or(cfg.stage2_beta), basis ? &*basis : nullptr);
  report_inversion(cfg, s, "stage2", r);
  return kOk;
}

int cmd_stage3(const Options& o) {
  const auto cfg = load(o);
  const auto s = make_setup(cfg);
  const auto u_star = read_u_star(cfg);
  const auto data = rotation_data(s, u_star);
  {
    auto m = open_out(cfg, "measurements.txt");
    write_measurements(m, data);
  }
  std::optional<PcaBasis> basis;
  if (cfg.stage3_pca) basis = build_pca(s);
  const auto r = run_stage3(s, data, o.beta.value_or(cfg.stage3_beta), basis ? &*basis : nullptr);
  report_inversion(cfg, s, "stage3", r);
  return kOk;
}

int cmd_validate(const Options& o) {
  const auto cfg = load(o);
  ValidationOptions vo;
  if (o.flip_gradient) vo.gradient_scale = -1.0;
  const auto rep = run_validation(cfg, vo);
  for (const auto& k : rep.kappa_curves) {
    auto os = open_out(cfg, k.name + ".txt");
    write_kappa_report(os, k.report);
  }
  {
    auto os = open_out(cfg, "kappa-U.txt");
    os << std::setprecision(17);
    for (std::size_t l = 0; l < rep.kappa_u.size(); ++l) os << l + 1 << ' ' << rep.kappa_u[l] << '\n';
  }
  auto os = open_out(cfg, "validation_report.txt");
  for (const auto& c : rep.checks)
    for (std::ostream* out : {static_cast<std::ostream*>(&os), static_cast<std::ostream*>(&std::cout)})
      *out << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
  return rep.passed() ? kOk : kValidation;
}

int cmd_pca_build(const Options& o) {
  const auto cfg = load(o);
  const auto s = make_setup(cfg);
  const auto basis = build_pca(s);
  {
    auto os = open_out(cfg, "pca_basis.txt");
    save_basis(os, basis);
  }
  auto os = open_out(cfg, "pca_variance.txt");
  os << std::setprecision(17) << "# k r_v\n";
  const auto curve = basis.variance_curve();
  for (std::size_t k = 0; k < curve.size(); ++k) os << k + 1 << ' ' << curve[k] << '\n';
  std::cout << "pca-build: rank " << basis.rank() << ", n_xi " << basis.n_xi() << " at r_opt "
            << cfg.pca_r_opt << "% (retained " << 100.0 * basis.retained_variance() << "%)\n";
  return kOk;
}

int cmd_sweep(const Options& o) {
  const auto cfg = load(o);
  const auto s = make_setup(cfg);
  const auto u_star = read_u_star(cfg);
  const auto data = rotation_data(s, u_star);
  std::optional<PcaBasis> basis;
  if (cfg.stage3_pca) basis = build_pca(s);
  const auto rows = run_sweep(s, data, basis ? &*basis : nullptr, cfg.sweep_betas);
  auto os = open_out(cfg, "sweep_beta.csv");
  write_sweep_csv(os, rows);
  write_sweep_csv(std::cout, rows);
  return kOk;
}

int cmd_export(const Options& o) {
  const auto cfg = load(o);
  const auto s = make_setup(cfg);
  write_field(cfg, s, "sigma_true", s.sigma_true.values);
  write_field(cfg, s, "sigma_ini", s.sigma_ini.values);
  for (const std::string stage : {"stage2", "stage3"}) {
    std::ifstream in(path_in(cfg, stage + "_sigma.txt"));
    if (!in) continue;
    const auto values = read_values(in);
    if (values.size() != s.model.n_elements())
      throw Error(stage + "_sigma.txt does not match the configured mesh");
    auto vtk = open_out(cfg, stage + "_sigma.vtk");
    write_vtk(vtk, s.model.mesh(), values);
  }
  auto os = open_out(cfg, "config_resolved.cfg");
  os << serialize_config(cfg);
  std::cout << "export: wrote fields to " << cfg.output_dir << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inverse EIT reconstruction with adjoint gradients and PCA"};
  app.require_subcommand(1, 1);
  Options opts;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config, "Configuration file")->required();
    sub->add_option("--out", opts.out, "Output directory (overrides output.dir)");
    sub->add_option("--seed", opts.seed, "PCA realization seed (overrides pca.seed)");
    sub->add_option("--beta", opts.beta, "Tikhonov weight for the stage");
    sub->add_option("--rv", opts.rv, "Retained variance target in percent (overrides pca.r_opt)");
  };

  struct Command {
    const char* name;
    const char* help;
    int (*run)(const Options&);
  };
  const Command commands[] = {
      {"stage1", "Problem I at the true conductivity (current-to-voltage)", cmd_stage1},
      {"stage2", "Problem J with the single current pattern", cmd_stage2},
      {"stage3", "Problem K with rotation data", cmd_stage3},
      {"validate", "Gradient and invariant validation suite", cmd_validate},
      {"pca-build", "Build and save the PCA basis", cmd_pca_build},
      {"sweep-beta", "Stage 3 over the configured beta grid", cmd_sweep},
      {"export", "Write VTK fields and the resolved configuration", cmd_export},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    if (std::string(c.name) == "validate")
      sub->add_flag("--flip-gradient", opts.flip_gradient, "Negate the adjoint gradient (self-test)");
    subs.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    for (const auto& [sub, cmd] : subs)
      if (sub->parsed()) return cmd->run(opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const SolverError& e) {
    std::cerr << "solver error: " << e.what() << " (iterations " << e.iterations << ", residual "
              << e.residual << ")\n";
    return kSolver;
  } catch (const OptimizerError& e) {
    std::cerr << "optimizer error: " << e.what() << '\n';
    return kOptimizer;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return kValidation;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

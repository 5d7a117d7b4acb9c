// nlm: construct and certify natural locomotion cycles.
//
//   nlm 2seg support|solve|continue|certify
//   nlm 3seg modes|support|lift|continue|certify|pair
//   nlm oracle pendulum|schur|energy
//
// Settings come from --config, then --set key=value, then the dedicated
// flags. NLM_OUTPUT_DIR overrides the output directory.

#include "CLI11.hpp"
#include "nlm/error.hpp"
#include "nlm/io/run.hpp"

#include <cstdio>
#include <cstdlib>
#include <iostream>

namespace {

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Natural locomotion cycle construction and certification"};
  app.require_subcommand(1);

  std::string config_path, out, sector, gauge, chart, speed_grid, amplitudes, k_list;
  std::vector<std::string> sets;
  std::optional<double> vbar;
  std::optional<int> m_cov;
  std::optional<std::uint64_t> seed;
  bool no_poe_row = false, list_keys = false;

  auto common = [&](CLI::App* sc) {
    sc->add_option("--config", config_path, "config file (key = value with [sections])");
    sc->add_option("--set", sets, "override: section.key=value (repeatable)");
    sc->add_option("--out", out, "output directory");
    sc->add_option("--vbar", vbar, "mean-speed target");
    sc->add_option("--k", k_list, "pendulum moduli, comma separated");
    sc->add_option("--sector", sector, "IP, AP or both");
    sc->add_flag("--no-poe-row", no_poe_row, "certify without the POE gate");
    sc->add_option("--m-cov", m_cov, "AP cover multiplicity (1 or 3)");
    sc->add_option("--gauge", gauge, "support gauge: modal, tangent, seed-tracking");
    sc->add_option("--chart", chart, "continuation chart kind");
    sc->add_option("--speed-grid", speed_grid, "speeds, comma separated");
    sc->add_option("--amplitudes", amplitudes, "support amplitude ladder, comma separated");
    sc->add_option("--seed", seed, "random seed");
  };

  struct Sub {
    const char* system;
    std::vector<std::string> tasks;
  };
  const Sub subs[] = {{"2seg", {"support", "solve", "continue", "certify"}},
                      {"3seg", {"modes", "support", "lift", "continue", "certify", "pair"}},
                      {"oracle", {"pendulum", "schur", "energy"}}};
  std::string system, task;
  for (const Sub& s : subs) {
    CLI::App* sys = app.add_subcommand(s.system, std::string(s.system) + " tasks: " + join(s.tasks));
    sys->require_subcommand(1);
    for (const std::string& t : s.tasks) {
      CLI::App* sc = sys->add_subcommand(t);
      common(sc);
      sc->callback([&system, &task, sys_name = std::string(s.system), t] {
        system = sys_name;
        task = t;
      });
    }
  }
  app.add_flag("--list-keys", list_keys, "print accepted config keys and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (list_keys) {
      for (const std::string& key : nlm::io::known_keys()) std::cout << key << "\n";
      return 0;
    }
    return app.exit(e);
  }

  nlm::io::RunConfig cfg;
  try {
    nlm::io::apply_setting(cfg, "run.system", system);
    nlm::io::apply_setting(cfg, "run.task", task);
    if (!config_path.empty()) cfg = nlm::io::load_config(config_path, cfg);
    // the subcommand always names the task
    nlm::io::apply_setting(cfg, "run.system", system);
    nlm::io::apply_setting(cfg, "run.task", task);
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw nlm::Error("config-error", "--set expects key=value, got '" + s + "'");
      nlm::io::apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    if (!out.empty()) cfg.output = out;
    if (vbar) nlm::io::apply_setting(cfg, "flags.vbar", nlm::io::format_number(*vbar));
    if (!k_list.empty()) nlm::io::apply_setting(cfg, "flags.k", k_list);
    if (!sector.empty()) nlm::io::apply_setting(cfg, "flags.sector", sector);
    if (no_poe_row) cfg.poe_row_enabled = false;
    if (m_cov) cfg.m_cov = *m_cov;
    if (!gauge.empty()) nlm::io::apply_setting(cfg, "flags.gauge", gauge);
    if (!chart.empty()) nlm::io::apply_setting(cfg, "flags.chart", chart);
    if (!speed_grid.empty()) nlm::io::apply_setting(cfg, "flags.speed_grid", speed_grid);
    if (!amplitudes.empty()) nlm::io::apply_setting(cfg, "flags.amplitudes", amplitudes);
    if (seed) cfg.seed = *seed;
    if (const char* dir = std::getenv("NLM_OUTPUT_DIR"); dir && *dir) cfg.output = dir;
    nlm::io::validate(cfg);
  } catch (const nlm::Error& e) {
    std::cerr << "nlm: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    const nlm::io::RunReport rep = nlm::io::run(cfg);
    nlm::io::write_report(rep, cfg.output);
    std::printf("%s %s: %d accepted, %d rejected, %s -> %s\n", system.c_str(), task.c_str(), rep.accepted,
                rep.rejected, rep.pass ? "pass" : "FAIL", cfg.output.c_str());
    return rep.exit_code();
  } catch (const nlm::Error& e) {
    std::cerr << "nlm: " << e.what() << "\n";
    return e.kind() == "config-error" ? 2 : 1;
  }
}

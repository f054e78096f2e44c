// raudit: randomization audits from pre-treatment features.
#include <CLI11.hpp>

#include <iostream>

#include "raudit/commands.hpp"
#include "raudit/error.hpp"

namespace {

struct OverrideFlags {
  std::string data, frame, out;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* workers_opt = nullptr;

  void attach(CLI::App* cmd, bool with_frame) {
    cmd->add_option("--data", data, "override data.path");
    if (with_frame) cmd->add_option("--frame", frame, "override frame.path");
    cmd->add_option("--out", out, "override output.dir");
    seed_opt = cmd->add_option("--seed", seed, "override resampling.master_seed");
    workers_opt = cmd->add_option("--workers", workers, "worker threads (results do not depend on it)")
                      ->check(CLI::PositiveNumber);
  }

  raudit::Overrides get() const {
    raudit::Overrides o;
    if (!data.empty()) o.data = data;
    if (!frame.empty()) o.frame = frame;
    if (!out.empty()) o.output_dir = out;
    if (seed_opt && seed_opt->count()) o.seed = seed;
    if (workers_opt && workers_opt->count()) o.workers = workers;
    return o;
  }
};

void list_files(const std::vector<std::filesystem::path>& files) {
  for (const auto& f : files) std::cout << "wrote " << f.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"raudit: design-based randomization audits"};
  app.require_subcommand(1);

  std::string config;
  OverrideFlags audit_flags, selection_flags, missing_flags, power_flags;

  auto* audit = app.add_subcommand("audit", "conditional randomization test of the registered design");
  audit->add_option("config", config, "config JSON")->required()->check(CLI::ExistingFile);
  audit_flags.attach(audit, false);

  auto* selection = app.add_subcommand("selection", "descriptive selection-into-frame diagnostic");
  selection->add_option("config", config, "config JSON")->required()->check(CLI::ExistingFile);
  selection_flags.attach(selection, true);

  auto* missing = app.add_subcommand("missingness", "descriptive missingness diagnostic and IPW weights");
  missing->add_option("config", config, "config JSON")->required()->check(CLI::ExistingFile);
  missing_flags.attach(missing, false);

  auto* power = app.add_subcommand("power", "simulated power curve for a synthetic scenario");
  power->add_option("config", config, "config JSON")->required()->check(CLI::ExistingFile);
  power_flags.attach(power, false);

  auto* validate = app.add_subcommand("validate", "echo the preregistration checklist");
  validate->add_option("config", config, "config JSON")->required()->check(CLI::ExistingFile);

  std::string scenario;
  std::string synth_out = ".";
  std::uint64_t synth_seed = 1;
  auto* synth = app.add_subcommand("synth", "write a builtin synthetic dataset and its config");
  synth->add_option("scenario", scenario, "builtin name")
      ->required()
      ->check(CLI::IsMember(raudit::builtin_scenarios()));
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--seed", synth_seed, "generator seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (audit->parsed()) {
      const auto out = raudit::cmd_audit(config, audit_flags.get());
      std::cout << out.summary;
      list_files({out.report_path, out.nulls_path, out.summary_path});
    } else if (selection->parsed()) {
      const auto out = raudit::cmd_selection(config, selection_flags.get());
      std::cout << out.summary;
      list_files(out.files);
    } else if (missing->parsed()) {
      const auto out = raudit::cmd_missingness(config, missing_flags.get());
      std::cout << out.summary;
      list_files(out.files);
    } else if (power->parsed()) {
      const auto out = raudit::cmd_power(config, power_flags.get());
      std::cout << raudit::power_curve_csv(out.curve);
      list_files(out.files);
    } else if (validate->parsed()) {
      const auto result = raudit::cmd_validate(config);
      std::cout << result.text;
      if (!result.ok) {
        std::cerr << "required checklist rows are MISSING\n";
        return 3;
      }
    } else if (synth->parsed()) {
      list_files(raudit::cmd_synth(scenario, synth_seed, synth_out));
    }
  } catch (const raudit::InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const raudit::DesignError& e) {
    std::cerr << "design error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "salience/commands.hpp"
#include "salience/error.hpp"

using namespace salience;

namespace {

struct Flags {
  std::string config;
  std::string dataset;
  std::string variant;
  std::string new_user;
  std::string seeds;
  std::string out;
  std::string checkpoint;
  std::vector<std::string> set;
  bool export_features = false;
  bool overwrite = false;
  bool quiet = false;
};

/// File values, then --set overrides, then the dedicated flags.
RunConfig build_config(const Flags& f) {
  KvDocument doc;
  if (!f.config.empty()) {
    if (!std::filesystem::exists(f.config)) throw Error(ErrorKind::MissingFile, "config file not found: " + f.config);
    doc = KvDocument::load(f.config);
  }
  for (const auto& kv : f.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::InvalidConfig, "--set expects key=value, got '" + kv + "'");
    doc.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  if (!f.dataset.empty()) doc.set("dataset", f.dataset);
  if (!f.variant.empty()) doc.set("variant", f.variant);
  if (!f.new_user.empty()) doc.set("new_user", f.new_user);
  if (!f.seeds.empty()) doc.set("seeds", f.seeds);
  if (!f.out.empty()) doc.set("out", f.out);
  if (f.export_features) doc.set("export_features", "true");
  return RunConfig::from_document(doc);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sensor-level adversarial user adaptation for wearable activity recognition"};
  app.require_subcommand(1);
  Flags flags;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", flags.config, "Key-value run config file");
    cmd->add_option("--dataset", flags.dataset, "synthetic, a preset name or a .layout path");
    cmd->add_option("--out", flags.out, "Run directory to create");
    cmd->add_option("--set", flags.set, "Override one config key (key=value), repeatable");
    cmd->add_flag("--overwrite", flags.overwrite, "Replace an existing run directory");
    cmd->add_flag("--quiet", flags.quiet, "No progress output");
  };
  auto add_training = [&](CLI::App* cmd) {
    cmd->add_option("--variant", flags.variant, "base, LD, GD, LDGD or full");
    cmd->add_option("--new-user", flags.new_user, "Held-out user");
    cmd->add_option("--seeds", flags.seeds, "Comma-separated seeds");
  };

  std::map<std::string, int (*)(const RunConfig&, const CommandOptions&)> commands{
      {"synth", cmd_synth}, {"preprocess", cmd_preprocess}, {"train", cmd_train},
      {"evaluate", cmd_evaluate}, {"ablate", cmd_ablate}};

  auto* synth = app.add_subcommand("synth", "Write a synthetic raw dataset");
  add_common(synth);
  auto* preprocess = app.add_subcommand("preprocess", "Clean, segment and store windows");
  add_common(preprocess);
  auto* train = app.add_subcommand("train", "Train one variant with one user held out");
  add_common(train);
  add_training(train);
  auto* evaluate = app.add_subcommand("evaluate", "Leave-one-user-out evaluation or checkpoint scoring");
  add_common(evaluate);
  add_training(evaluate);
  evaluate->add_flag("--export-features", flags.export_features, "Write classifier logits per window");
  evaluate->add_option("--checkpoint", flags.checkpoint, "Score this checkpoint on --new-user");
  auto* ablate = app.add_subcommand("ablate", "Compare all five variants on identical splits");
  add_common(ablate);
  add_training(ablate);
  ablate->add_flag("--export-features", flags.export_features, "Write classifier logits per window");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    const RunConfig config = build_config(flags);
    CommandOptions options;
    options.overwrite = flags.overwrite;
    options.log = flags.quiet ? nullptr : &std::cerr;
    if (!flags.checkpoint.empty()) options.checkpoint = flags.checkpoint;
    return commands.at(name)(config, options);
  } catch (const std::exception& e) {
    std::cerr << "salience " << name << ": error: " << e.what() << '\n';
    return kExitError;
  }
}

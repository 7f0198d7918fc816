#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>

#include "salience/run_config.hpp"

namespace salience {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitError = 1,
  kExitUsage = 2,
  kExitPartial = 3,    ///< some folds or variants failed; their reports are still written
  kExitNonFinite = 4,  ///< training diverged; the log up to the failure is kept
};

struct CommandOptions {
  bool overwrite = false;
  /// evaluate: score this checkpoint on the held-out user instead of running LOUO.
  std::optional<std::filesystem::path> checkpoint;
  std::ostream* log = nullptr;  ///< progress messages (nullptr = quiet)
};

/// Create `dir` for a new run. An existing non-empty directory is an error
/// unless `overwrite`, in which case its contents are removed first.
void prepare_run_directory(const std::filesystem::path& dir, bool overwrite);

int cmd_synth(const RunConfig& config, const CommandOptions& options);
int cmd_preprocess(const RunConfig& config, const CommandOptions& options);
int cmd_train(const RunConfig& config, const CommandOptions& options);
int cmd_evaluate(const RunConfig& config, const CommandOptions& options);
int cmd_ablate(const RunConfig& config, const CommandOptions& options);

}  // namespace salience

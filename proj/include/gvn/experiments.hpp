#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gvn {

// Result of one experiment config: scalar metrics (printed one per line by
// the CLI), failed-assertion descriptions, artifact files written, and
// free-form notes.
struct RunOutcome {
  std::map<std::string, double> metrics;
  std::vector<std::string> failures;
  std::vector<std::string> artifacts;
  std::vector<std::string> notes;

  bool passed() const { return failures.empty(); }
};

// Runs a config given as JSON text. Paths inside the config resolve against
// base_dir; artifacts are written under out_dir (created if needed). The
// optional seed overrides the config's seed. Invalid configs and failed
// construction preconditions throw std::invalid_argument (and subclasses);
// failed assertions are reported in the outcome, not thrown.
RunOutcome run_experiment_text(const std::string& config_text, const std::string& base_dir,
                               const std::string& out_dir, std::optional<std::uint64_t> seed_override);

// File-based wrapper with the CLI exit-code contract: 0 when all configured
// assertions pass, 1 on assertion failure (the failing metric is named on
// the log stream), 2 on invalid configs or construction errors.
int run_config_file(const std::string& config_path, const std::optional<std::string>& out_override,
                    std::optional<std::uint64_t> seed_override, std::ostream& log,
                    const std::optional<std::string>& expected_kind = std::nullopt);

}  // namespace gvn

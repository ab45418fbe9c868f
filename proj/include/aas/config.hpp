#pragma once

#include <string>

#include "aas/engine.hpp"

namespace aas {

/// A training run as the command line sees it: the trainer settings plus output options.
struct RunConfig {
  TrainConfig train;
  std::string out_dir = "run";
  int checkpoint_every = 10;
  int scatter_points = 2000;  // rows per scatter dump, 0 for all
  bool record_wallclock = false;  // off keeps metrics.csv byte-reproducible
};

// Grammar, one entry per line:
//   section.key = value   # comment
// Values are integers, reals, true/false, or strings (optionally in double quotes).
// Unknown keys and malformed values are config errors.

/// Defaults apply to absent keys; the result must pass check_run_config.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config(const std::string& path);
/// Applies one `section.key = value` assignment.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// Stricter than validate(): rates must be positive here.
void check_run_config(const RunConfig& cfg);

/// Every key with its resolved value, in a fixed order.
std::string canonical_text(const RunConfig& cfg);
/// 16 hex digits over the trainer part of canonical_text.
std::string config_hash(const RunConfig& cfg);

/// Shortest round-trip decimal form, independent of the locale.
std::string format_real(double v);

}  // namespace aas

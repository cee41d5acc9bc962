#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "cli/config.hpp"
#include "itdt/error.hpp"

namespace itdt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;

/// 2 for malformed input or configuration, 3 for numerical and model errors.
int exit_code(ErrorCode code);

void cmd_identify(const Config& cfg, std::ostream& log);
void cmd_calibrate(const Config& cfg, std::ostream& log);
/// `streams` overrides the `stream` key when nonempty. A single stream is
/// written to `scores` (or `out` when that key is unset or "-").
void cmd_detect(const Config& cfg, const std::vector<std::string>& streams, std::ostream& out,
                std::ostream& log);
void cmd_simulate(const Config& cfg, std::ostream& log);
void cmd_eval(const Config& cfg, std::ostream& log);
void cmd_bench(const Config& cfg, std::ostream& log);
/// simulate (train, validation, test) → identify → calibrate → detect → eval
/// inside output_dir.
void cmd_pipeline(const Config& cfg, std::ostream& log);

/// Parses arguments, runs the command, maps errors to exit codes.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace itdt::cli

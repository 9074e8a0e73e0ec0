#pragma once

#include <iosfwd>
#include <string>

#include "aldsr/config.hpp"

namespace aldsr::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericFailure = 3 };

// Parses argv[1..] and runs one subcommand; never throws.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// The `params` report. `arch` is all, aldsr, aldb, rdb, dw-rdb, ldw-rdb or ald-rdb;
// `overrides` replaces model config defaults.
std::string params_report(const std::string& arch, const KeyValueConfig& overrides = {});

// 1363968 -> "1,363,968".
std::string with_commas(std::size_t n);

}  // namespace aldsr::cli

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tuna::cli {

// Parses and runs one command (train, eval, gradcheck, count-params,
// data-stats, gen-synth). Every run echoes its fully resolved configuration
// before acting. Exit codes: 0 success, 1 I/O or data, 2 configuration,
// 3 compatibility, 4 numerical abort.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// %.10g with a guaranteed decimal point ("3" -> "3.0"); the stable float
// format of stats output.
std::string fmt_float(double v);

}  // namespace tuna::cli

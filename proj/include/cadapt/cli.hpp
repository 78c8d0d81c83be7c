#ifndef CADAPT_CLI_HPP
#define CADAPT_CLI_HPP

#include <ostream>
#include <string>
#include <vector>

namespace cadapt {

inline constexpr const char* kVersion = "cadapt 1.0.0";

/// Command-line entry point. args excludes the program name. Failures print
/// a JSON error object to err and return a nonzero code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cadapt

#endif

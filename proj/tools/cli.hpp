#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace abfr {

// Exit codes of the abfr command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1;  // some subjects, folds or configs failed
inline constexpr int kExitConfig = 2;   // usage, config or input error

// Runs one command line. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace abfr

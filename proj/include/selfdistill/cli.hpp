#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace selfdistill::cli {

enum ExitCode : int {
  kOk = 0,
  kValidation = 1,
  kDiverged = 2,
  kBracketFailure = 3,
};

// args excludes the program name. Returns the process exit status.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace selfdistill::cli

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace simpeval::cli {

// args[0] is the program name. Returns the process exit code:
// 0 success, 1 runtime failure, 2 usage or input validation error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace simpeval::cli

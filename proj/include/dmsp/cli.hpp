#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dmsp::cli {

// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
int run(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace dmsp::cli

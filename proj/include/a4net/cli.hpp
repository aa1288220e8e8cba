#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace a4net {

// Runs `a4net <subcommand> ...`. Returns 0 on success, 1 for usage,
// configuration or validation errors, 2 for runtime failures. Diagnostics go
// to `err`; help and metrics go to `out`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace a4net

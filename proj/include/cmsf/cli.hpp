#pragma once
#include <iosfwd>

namespace cmsf {

// Entry point of the `cmsf` tool. Returns the process exit status: 0 on
// success, 1 with a one-line diagnostic on a validation or runtime failure,
// 2 with usage text on a command-line error or unknown subcommand.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cmsf

#ifndef CFX_CLI_HPP
#define CFX_CLI_HPP

#include <string>
#include <vector>

namespace cfx {

// Entry point shared by the binary and the tests. `args` excludes the
// program name. Returns the process exit code: 0 success, 1 usage error,
// 2 data/contract error, 3 numerical failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace cfx

#endif

#ifndef NDT_CLI_HPP_
#define NDT_CLI_HPP_

namespace ndt {

// Entry point for the ndt binary. Exit codes: 0 success, 2 usage error,
// 1 runtime failure.
int run_cli(int argc, char** argv);

}  // namespace ndt

#endif  // NDT_CLI_HPP_

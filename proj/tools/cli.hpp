#ifndef TDN_TOOLS_CLI_HPP
#define TDN_TOOLS_CLI_HPP

namespace tdn {

// Entry point of the `tdn` tool. Returns 0 on success, 1 on bad input or
// configuration, 2 on numerical failure.
int run_cli(int argc, char** argv);

} // namespace tdn

#endif

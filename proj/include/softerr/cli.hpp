#pragma once

namespace softerr {

// Command-line entry point. Returns the process exit code: 0 on success,
// 2 on usage or configuration errors, 3 on runtime failures. Failures also
// print one machine-readable line to stderr:
//   softerr-error: category=<config|runtime> message="..."
int run_cli(int argc, const char* const* argv);

}  // namespace softerr

#pragma once

namespace dlab {

// Top-level command dispatch. Returns the process exit code: 0 on success,
// 2 for usage or configuration errors (with the valid parameter groups
// printed), 1 for any failure during a run.
int run_command(int argc, const char* const* argv);

}  // namespace dlab

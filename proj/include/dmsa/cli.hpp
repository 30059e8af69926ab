#pragma once

#include <ostream>

namespace dmsa {

/// Entry point of the `dmsa` tool. Returns 0 on success, 2 on usage errors
/// and 1 on runtime errors (after printing a message to `err`).
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dmsa

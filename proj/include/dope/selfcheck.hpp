#pragma once

#include <ostream>

namespace dope {

// Fast invariant/oracle suite behind the `verify` CLI subcommand. Prints one
// line per check; returns true iff every check passes.
bool run_selfcheck(std::ostream& out);

}  // namespace dope

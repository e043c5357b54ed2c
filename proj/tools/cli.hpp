#pragma once

#include <iosfwd>

namespace flowcrypt::cli {

/// Exit codes: 0 success, 1 numerical failure, 2 I/O, 3 invalid argument,
/// 4 degenerate data, 5 shape/label mismatch, 6 corruption or invalid key.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace flowcrypt::cli

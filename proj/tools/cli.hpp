#pragma once

#include <ostream>

namespace tcm::cli {

enum ExitCode : int {
    kOk = 0,
    kInternal = 1,   // unexpected failure
    kUsage = 2,      // bad arguments, missing or unreadable input files
    kFormat = 3,     // malformed container/checkpoint, model id mismatch
    kCorrupt = 4,    // damaged entropy-coded payload
    kNumerical = 5,  // non-finite loss or gradient during training
};

/// Runs the `tcm` command line. Results go to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tcm::cli

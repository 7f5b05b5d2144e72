#pragma once

namespace soar::cli {

// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
int run(int argc, char const * const * argv);

}  // namespace soar::cli

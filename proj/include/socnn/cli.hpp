#pragma once

#include <string>
#include <vector>

namespace socnn::cli {

// Entry point behind the socnn binary. `args` excludes the program name.
// Returns 0 on success, non-zero after printing an error or usage message.
int run(const std::vector<std::string>& args);

}  // namespace socnn::cli

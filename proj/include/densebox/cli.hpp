#pragma once

#include <string>
#include <vector>

namespace densebox {

// Entry point behind the densebox binary. Exit codes: 0 success, 1 usage,
// 2 data error, 3 numeric failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace densebox

#include <string>
#include <vector>

#include "densebox/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return densebox::run_cli(args);
}

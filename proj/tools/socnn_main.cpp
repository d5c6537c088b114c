#include <string>
#include <vector>

#include "socnn/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return socnn::cli::run(args);
}

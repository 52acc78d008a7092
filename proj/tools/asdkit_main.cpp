#include <string>
#include <vector>

#include "asdkit/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return asdkit::cli::run(std::move(args));
}

#include <string>
#include <vector>

#include "mosforge/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mosforge::cli::run(std::move(args));
}

#include <string>
#include <vector>

#include "mmsf/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mmsf::cli::run(args);
}

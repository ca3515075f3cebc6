#include <string>
#include <vector>

#include "nphmm/cli.hpp"

int main(int argc, char** argv) {
  return nphmm::cli::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}

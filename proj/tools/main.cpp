#include <cstdio>

#include "emogen/config.hpp"
#include "emogen/error.hpp"

int main(int argc, char** argv) {
  (void)argc;
  (void)argv;
  std::fprintf(stderr, "emogen: no subcommands wired up yet\n");
  return 2;
}

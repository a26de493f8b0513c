#include <cstdio>

// CLI entry point; subcommands are filled in as the library lands.
int main(int argc, char** argv) {
  (void)argc;
  (void)argv;
  std::printf("oarseg: command-line interface under construction\n");
  return 2;
}

// Entry point of the lenslab executable. Subcommands are wired up in
// cli.hpp; this file only owns main().

#include "lenslab/cli.hpp"

int main(int argc, char** argv) { return lenslab::cli_main(argc, argv); }

#include "demix/cli/cli.hpp"

int main(int argc, char** argv) { return demix::run_cli(argc, argv); }

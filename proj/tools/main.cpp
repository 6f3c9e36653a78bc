#include "mislead/cli.hpp"

int main(int argc, char** argv) { return mislead::cli::run_cli(argc, argv); }

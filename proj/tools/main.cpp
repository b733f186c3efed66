#include "softerr/cli.hpp"

int main(int argc, char** argv) { return softerr::run_cli(argc, argv); }

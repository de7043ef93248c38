#include "ndt/cli.hpp"

int main(int argc, char** argv) { return ndt::run_cli(argc, argv); }

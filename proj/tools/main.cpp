#include "cornerdet/cli.hpp"

int main(int argc, char** argv) { return cornerdet::cli_run(argc, argv); }

#include "contour_mpc/cli.hpp"

int main(int argc, char** argv) { return cmpc::run_cli(argc, argv); }

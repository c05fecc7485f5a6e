#include "hearth/cli.hpp"

int main(int argc, char** argv) { return hearth::run_command(argc, argv); }

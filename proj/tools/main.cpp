#include "l2d/cli.hpp"

int main(int argc, char** argv) { return l2d::cli::main(argc, argv); }

#include "t4t/cli.hpp"

int main(int argc, char** argv) { return t4t::cli::main(argc, argv); }

#include "diffe/cli.hpp"

int main(int argc, char** argv) { return diffe::cli::run(argc, argv); }

#include "tsot/cli.hpp"

int main(int argc, char** argv) { return tsot::cli::run(argc, argv); }

#include "strokelab/cli.hpp"

int main(int argc, char** argv) { return strokelab::cli::run(argc, argv); }

#include "solverate/cli.hpp"

int main(int argc, char** argv) { return solverate::cli::run(argc, argv); }

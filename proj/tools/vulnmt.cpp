#include "vulnmt/cli.hpp"

int main(int argc, char** argv) { return vulnmt::cli::run(argc, argv); }

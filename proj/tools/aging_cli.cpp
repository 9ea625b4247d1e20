#include "aging/cli.hpp"

int main(int argc, char** argv) { return aging::cli::run(argc, argv); }

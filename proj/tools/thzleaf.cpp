#include "thzleaf/cli.hpp"

int main(int argc, char** argv) { return thzleaf::cli::run(argc, argv); }

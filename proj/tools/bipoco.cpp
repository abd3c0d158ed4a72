#include "bipoco/cli.hpp"

int main(int argc, char** argv) { return bipoco::cli::run(argc, argv); }

#include "ifield/cli.hpp"

int main(int argc, char** argv) { return ifield::cli::run(argc, argv); }

#include "lesioncal/cli.hpp"

int main(int argc, char** argv) { return lesioncal::cli::main(argc, argv); }

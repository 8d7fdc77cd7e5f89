#include "paintkit/cli.hpp"

int main(int argc, char** argv) { return paintkit::cli::run(argc, argv); }

#include "terracover/cli.hpp"

int main(int argc, char** argv) { return terra::cli::run(argc, argv); }

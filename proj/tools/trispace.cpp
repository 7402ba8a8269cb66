#include "trispace/cli.hpp"

int main(int argc, char** argv) { return trispace::cli::dispatch(argc, argv); }

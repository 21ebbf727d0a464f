#include "cli.hpp"

int main(int argc, char** argv) { return oscid::cli::run(argc, argv); }

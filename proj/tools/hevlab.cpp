#include "cli.hpp"

int main(int argc, char** argv) { return hevlab::cli::main(argc, argv); }

#include "unportrait/cli.hpp"

int main(int argc, char** argv) { return unportrait::run_cli(argc, argv); }

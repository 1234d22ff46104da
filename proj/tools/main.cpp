#include "blastoseg/cli.hpp"

int main(int argc, char** argv) { return blastoseg::cli_main(argc, argv); }

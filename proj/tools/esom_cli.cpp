#include "esom/harness.hpp"

int main(int argc, char** argv) { return esom::cli_main(argc, argv); }

#include "dmclab/harness.hpp"

int main(int argc, char** argv) { return dmclab::harness::run_cli(argc, argv); }

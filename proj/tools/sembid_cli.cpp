#include "sembid/harness.hpp"

int main(int argc, char** argv) { return sembid::run_cli(argc, argv); }

#include "msst/cli.hpp"

int main(int argc, char** argv) { return msst::run_cli(argc, argv); }

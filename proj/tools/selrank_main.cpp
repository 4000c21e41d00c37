#include "selrank/cli.hpp"

int main(int argc, char** argv) { return selrank::run_cli(argc, argv); }

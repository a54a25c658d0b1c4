#include "modalmeta/cli.hpp"

int main(int argc, char** argv) { return modalmeta::run_cli(argc, argv); }

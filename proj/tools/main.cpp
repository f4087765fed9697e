#include "cli.hpp"

int main(int argc, char** argv) { return abfr::run_cli(argc, argv); }

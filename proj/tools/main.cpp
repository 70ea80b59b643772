#include "cli.hpp"

int main(int argc, char** argv) { return tdn::run_cli(argc, argv); }

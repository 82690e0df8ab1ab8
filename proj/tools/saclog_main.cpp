#include "saclog/cli.hpp"

int main(int argc, char** argv) { return saclog::run_cli(argc, argv); }

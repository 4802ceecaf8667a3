#include "promptkd/cli.hpp"

int main(int argc, char** argv) { return promptkd::cli_main(argc, argv); }

#include "cli_app.hpp"

int main(int argc, char** argv) { return ldbranch::cli::run_cli(argc, argv); }

#include "dkps/cli.hpp"

int main(int argc, char** argv) { return dkps::cli::run(argc, argv); }

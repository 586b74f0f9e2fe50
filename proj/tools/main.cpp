#include "cli.hpp"

int main(int argc, char** argv) { return btcxr::cli::run(argc, argv); }

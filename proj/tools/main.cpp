#include "cli.hpp"

int main(int argc, char** argv) { return dalm::cli::run(argc, argv); }

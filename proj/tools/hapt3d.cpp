#include "hapt3d/cli.hpp"

int main(int argc, char** argv) { return hapt3d::cli::run(argc, argv); }

#include "latthresh/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return latthresh::cli::run_cli(argc, argv, std::cout, std::cerr);
}

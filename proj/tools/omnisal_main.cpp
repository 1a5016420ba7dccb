#include <iostream>

#include "omnisal/cli.hpp"

int main(int argc, char** argv) {
    return omnisal::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}

#include <iostream>
#include <string>
#include <vector>

#include "steerkit/cli.hpp"

int main(int argc, char** argv) {
    return steerkit::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

#include <iostream>
#include <string>
#include <vector>

#include "grovle/cli.hpp"

int main(int argc, char** argv) {
    return grovle::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

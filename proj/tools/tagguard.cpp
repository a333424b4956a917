#include <iostream>
#include <string>
#include <vector>

#include "tagguard/cli/driver.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return tagguard::cli::run_cli(args, std::cout, std::cerr);
}

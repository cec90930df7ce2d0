#include <iostream>
#include <string>
#include <vector>

#include "knotforge/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return knotforge::cli::main_entry(args, std::cout, std::cerr);
}

#include <iostream>
#include <string>
#include <vector>

#include "cadapt/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return cadapt::run_cli(args, std::cout, std::cerr);
}

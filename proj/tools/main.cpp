#include <iostream>

#include "tdlm/cli.hpp"

int main(int argc, char** argv)
{
    return tdlm::cli::run_command(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}

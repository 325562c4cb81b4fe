#include <iostream>

#include "awq_edge/cli.hpp"

int main(int argc, char** argv)
{
    return awq_edge::run_cli(argc, argv, std::cout, std::cerr);
}

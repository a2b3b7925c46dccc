#include "dcoral/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return dcoral::cli::run(argc, argv, std::cout, std::cerr);
}

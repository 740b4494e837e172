#include <string>
#include <vector>

#include "cfx/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return cfx::run_cli(args);
}

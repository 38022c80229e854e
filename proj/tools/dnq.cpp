#include "dnq/cli.hpp"

int main(int argc, char** argv) {
    return dnq::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}

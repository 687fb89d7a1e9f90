#include "bcglm_cli.hpp"

int main(int argc, char** argv) {
    return bcglm::cli::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}

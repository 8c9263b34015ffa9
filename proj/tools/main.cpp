#include "n2ntd/cli/cli.hpp"

#include <string>
#include <vector>

int main(int argc, char** argv)
{
    return n2ntd::cli::cli_main(
        std::vector<std::string>(argv + 1, argv + argc));
}

#include "alignmap/cli.hpp"

int main(int argc, char** argv) {
    return alignmap::cli::main(argc, argv);
}

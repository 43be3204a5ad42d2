#include "bpct/cli/app.hpp"

int main(int argc, char** argv) { return bpct::cli::run(argc, argv); }

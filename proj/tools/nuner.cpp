#include "nuner/cli/app.hpp"

int main(int argc, char** argv) { return nuner::cli::run(argc, argv); }

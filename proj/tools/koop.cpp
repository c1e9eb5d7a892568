#include "koop/cli.hpp"

int main(int argc, char** argv) { return koop::cli::dispatch(argc, argv); }

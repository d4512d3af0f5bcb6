#include "oce/cli.hpp"

int main(int argc, char** argv) { return oce::cli::dispatch(argc, argv); }

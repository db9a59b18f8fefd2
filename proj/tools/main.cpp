#include "commands.hpp"

int main(int argc, char** argv) { return rtaformer::cli::main_entry(argc, argv); }

#include "trajfield/commands.hpp"

int main(int argc, char** argv) { return trajfield::run_cli(argc, argv); }

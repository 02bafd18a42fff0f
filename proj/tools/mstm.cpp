#include "mstm/commands.hpp"

int main(int argc, char** argv) { return mstm::run_cli(argc, argv); }

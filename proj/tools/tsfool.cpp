#include "tsfool/cli.hpp"
#include "tsfool/runtime.hpp"

int main(int argc, char** argv) {
  tsfool::tune_allocator();
  return tsfool::cli::run(argc, argv);
}

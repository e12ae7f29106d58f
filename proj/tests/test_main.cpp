#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "lobemil/runtime.hpp"

int main(int argc, char** argv) {
  lobemil::init_runtime(argc, argv);
  return doctest::Context(argc, argv).run();
}

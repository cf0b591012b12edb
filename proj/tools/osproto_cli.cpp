#include "osproto/experiment.hpp"

#include <iostream>

int main(int argc, char** argv) {
  return osproto::run_command({argv + 1, argv + argc}, std::cout, std::cerr);
}

#include <string>
#include <vector>

#include "ksrs/cli.hpp"

int main(int argc, char** argv) {
  // dispatch takes the subcommand and its flags, without the program name
  return ksrs::dispatch(std::vector<std::string>(argv + 1, argv + argc));
}

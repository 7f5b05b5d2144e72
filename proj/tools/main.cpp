#include "cli.hpp"

int main(int argc, char ** argv)
{
  return soar::cli::run(argc, argv);
}

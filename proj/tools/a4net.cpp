#include <torch/torch.h>

#include "a4net/cli.hpp"

int main(int argc, char** argv) {
  // One intra-op thread keeps reductions in a fixed order, so runs repeat bit for bit.
  torch::set_num_threads(1);
  return a4net::run_cli(argc, argv);
}

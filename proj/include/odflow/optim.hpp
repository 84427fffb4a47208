#pragma once

#include <string>
#include <vector>

#include "odflow/tensor.hpp"

namespace odflow::ad {

struct ParamEntry {
  std::string name;
  Tensor tensor;
};

// Adam with bias correction; moments are shaped like their parameters.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<std::vector<double>> m, v;

  void init(const std::vector<ParamEntry>& params);
};

// One Adam update from the gradients currently stored on the parameters.
// A non-finite gradient aborts the step before touching any parameter.
void adam_step(std::vector<ParamEntry>& params, AdamState& state, double lr);

void zero_grad(std::vector<ParamEntry>& params);

}  // namespace odflow::ad

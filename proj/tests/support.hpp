#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "odflow/optim.hpp"
#include "odflow/rng.hpp"
#include "odflow/tensor.hpp"
#include "odflow/tntp.hpp"

namespace testsupport {

inline odflow::ad::Tensor random_tensor(odflow::rng::Xoshiro256pp& gen, odflow::ad::Shape shape,
                                        bool requires_grad = true, double lo = -1.0,
                                        double hi = 1.0) {
  odflow::ad::Tensor t = odflow::ad::Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.values()) v = gen.uniform(lo, hi);
  return t;
}

// Central finite differences against the gradients already stored on the
// parameters. `loss_fn` must rebuild the forward pass from the parameters'
// current values.
inline double max_grad_rel_error(std::vector<odflow::ad::ParamEntry>& params,
                                 const std::function<double()>& loss_fn, double h = 1e-5) {
  double worst = 0.0;
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.tensor.numel(); ++i) {
      const double saved = p.tensor.values()[i];
      p.tensor.values()[i] = saved + h;
      const double up = loss_fn();
      p.tensor.values()[i] = saved - h;
      const double down = loss_fn();
      p.tensor.values()[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double got = p.tensor.grad()[i];
      const double scale = std::max({std::abs(fd), std::abs(got), 1e-6});
      worst = std::max(worst, std::abs(fd - got) / scale);
    }
  }
  return worst;
}

// Minimal TNTP fixtures used across suites.
inline std::string tiny_net_text() {
  return "<NUMBER OF NODES> 3\n"
         "<NUMBER OF LINKS> 3\n"
         "<FIRST THRU NODE> 1\n"
         "<END OF METADATA>\n"
         "~ init_node term_node capacity length free_flow_time b power speed toll link_type ;\n"
         "1 2 1200 2 4 0.15 4 0 0 1 ;\n"
         "2 3 900 1.5 3 0.15 4 0 0 1 ;\n"
         "1 3 600 4 9 0.15 4 0 0 1 ;\n";
}

inline std::string tiny_trips_text() {
  return "<NUMBER OF ZONES> 3\n"
         "<TOTAL OD FLOW> 150\n"
         "<END OF METADATA>\n"
         "Origin 1\n"
         "    2 : 100 ;  3 : 50 ;\n";
}

}  // namespace testsupport

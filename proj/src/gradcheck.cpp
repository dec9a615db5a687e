#include "mdet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mdet {

GradCheckResult grad_check(ParamStore& params, const std::function<Var(Graph&)>& loss_fn, double eps, double floor) {
  params.zero_grad();
  {
    Graph g;
    g.backward(loss_fn(g));
  }
  std::vector<Tensor> analytic;
  for (std::size_t i = 0; i < params.size(); ++i) analytic.push_back(params[i].grad);

  auto eval = [&]() {
    Graph g;
    return loss_fn(g).item();
  };

  GradCheckResult res;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double saved = p.value[k];
      p.value[k] = saved + eps;
      const double up = eval();
      p.value[k] = saved - eps;
      const double down = eval();
      p.value[k] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i][k];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++res.checked;
      if (rel > res.max_rel_error || res.worst_param.empty()) {
        if (rel >= res.max_rel_error) {
          res.max_rel_error = rel;
          res.worst_param = p.name;
          res.worst_index = k;
        }
      }
    }
  }
  params.zero_grad();
  return res;
}

}  // namespace mdet

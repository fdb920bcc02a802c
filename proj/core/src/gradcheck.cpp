#include "filter/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "filter/errors.hpp"

namespace filter {

double finite_diff_check(const std::function<Tensor()>& f, Tensor& x,
                         double h) {
  if (!x.requires_grad())
    throw ShapeError("finite_diff_check: x does not require gradients");
  if (active_tape() != nullptr)
    throw ShapeError("finite_diff_check: call without an active tape");
  if (h <= 0.0) throw ShapeError("finite_diff_check: h must be positive");

  x.zero_grad();
  std::vector<double> g_ad;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f();
    backward(loss);
    auto g = x.grad();
    g_ad.assign(g.begin(), g.end());
  }
  x.zero_grad();

  auto vals = x.values_mut();
  double worst = 0.0;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double keep = vals[i];
    vals[i] = keep + h;
    const double up = f().item();
    vals[i] = keep - h;
    const double down = f().item();
    vals[i] = keep;
    const double g_fd = (up - down) / (2.0 * h);
    const double denom =
        std::max({std::abs(g_ad[i]), std::abs(g_fd), 1.0});
    worst = std::max(worst, std::abs(g_ad[i] - g_fd) / denom);
  }
  return worst;
}

}  // namespace filter

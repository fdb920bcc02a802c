#pragma once

#include <functional>

#include "filter/tensor.hpp"

namespace filter {

// Independent oracle for backward(): compares the tape gradient of
// f() with central finite differences taken coordinate-wise on x.
//
// f must be a nullary closure over x (and any other fixed tensors)
// returning a scalar loss; it is re-run value-only for each probe, so it
// has to be deterministic. x must require gradients. Must be called with
// no tape active; the check manages its own.
//
// Returns the max over coordinates of |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1).
double finite_diff_check(const std::function<Tensor()>& f, Tensor& x,
                         double h = 1e-5);

}  // namespace filter

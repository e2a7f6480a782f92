// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>

namespace corda {

// Numerical or algorithmic failure: singular covariance, SVD
// non-convergence, infeasible rank budget. The CLI maps this to exit 1.
class MethodError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Persistence or configuration failure: bad magic, truncated file,
// schema violation. The CLI maps this to exit 2.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace corda

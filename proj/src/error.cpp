// SPDX-License-Identifier: Apache-2.0
#include "pecop/error.hpp"

namespace pecop {

const char* category_name(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::config: return "config";
    case ErrorCategory::data: return "data";
    case ErrorCategory::compatibility: return "compatibility";
    case ErrorCategory::shape: return "shape";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::metric: return "metric";
  }
  return "unknown";
}

}  // namespace pecop

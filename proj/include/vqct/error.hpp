#pragma once

#include <stdexcept>
#include <string>

namespace vqct {

/// Raised for every contract violation and stage failure in the pipeline.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vqct

#include "emoformer/tensor.hpp"

namespace emoformer::nn {

bool& autograd_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace emoformer::nn

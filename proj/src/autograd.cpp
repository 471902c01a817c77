#include "pgfa/autograd.hpp"

namespace pgfa::ag {

bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace pgfa::ag

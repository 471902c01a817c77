#include "pgfa/tensor.hpp"

#pragma once

#include <map>
#include <string>
#include <vector>

#include "pgfa/tensor.hpp"

namespace pgfa::train {

// Flat archive of named float arrays. Entries are written in the order given;
// names come from the parameter registry and are stable across runs.
//
// Layout (little endian):
//   magic "PGFACKPT" | u32 version | u32 count |
//   per entry: u32 name_len | name | u8 ndim | u32 dims[ndim] | f32 data[]
struct NamedArray {
  std::string name;
  Tensor<float> tensor;
};

void save_arrays(const std::string& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> load_arrays(const std::string& path);
std::map<std::string, Tensor<float>> load_array_map(const std::string& path);

}  // namespace pgfa::train

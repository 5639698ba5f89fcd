#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "brsda/tensor.hpp"

namespace brsda::npz {

// One named numeric array. Values are widened to double on read; integers
// survive exactly (magnitudes at rest stay far below 2^53). source_dtype
// records the on-disk element type and selects it on write.
struct Array {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::string source_dtype = "<f8";  // "<f8", "<f4", "<i8", "<i4", "|u1", ...
};

Array from_tensor(const Tensor& t, std::string dtype = "<f8");
Tensor to_tensor(const Array& a);

// A zip archive of .npy entries plus optional raw (non-array) members such
// as an embedded meta.json. Deflate-compressed on write; stored and
// deflated members are both accepted on read. Compatible with NumPy's
// savez/savez_compressed container.
struct Contents {
  std::map<std::string, Array> arrays;        // key without ".npy" suffix
  std::map<std::string, std::string> extras;  // raw members, by full name
};

Contents load(const std::string& path);

void save(const std::string& path,
          const std::vector<std::pair<std::string, Array>>& arrays,
          const std::vector<std::pair<std::string, std::string>>& extras = {});

}  // namespace brsda::npz

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace emoformer::emof {

// EMOF binary container, little-endian throughout.
//
// Single-array file (features):
//   magic "EMOF" | version u32 | dtype u32 (1 = f32) | ndim u32 |
//   dims u32[ndim] | payload, row-major
//
// Named-array file (weights): the dtype slot carries the table marker
// (100), then a JSON header and an array table:
//   magic "EMOF" | version u32 | 100 | json_len u32 | json bytes |
//   count u32 | count x { name_len u32 | name | dtype u32 | ndim u32 |
//                         dims u32[ndim] | payload }

constexpr uint32_t kVersion = 1;
constexpr uint32_t kDtypeF32 = 1;
constexpr uint32_t kNamedTable = 100;

struct Array {
  std::vector<uint32_t> dims;
  std::vector<float> data;  // row-major

  size_t numel() const {
    size_t n = 1;
    for (uint32_t d : dims) n *= d;
    return n;
  }
};

void write_array(const std::string& path, const Array& array);
Array read_array(const std::string& path);

struct NamedArrays {
  std::string json_header;
  std::vector<std::pair<std::string, Array>> arrays;  // insertion order

  const Array* find(const std::string& name) const;
  // Throws FormatError if the name is absent.
  const Array& at(const std::string& name) const;
  void add(const std::string& name, Array array);
};

void write_named(const std::string& path, const NamedArrays& file);
NamedArrays read_named(const std::string& path);

}  // namespace emoformer::emof

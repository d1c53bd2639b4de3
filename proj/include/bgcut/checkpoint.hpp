#pragma once

// Named-tensor checkpoint file. Little-endian layout:
//   magic "BGCT" | version u32 | tensor count u32
//   per tensor: name_len u32, name bytes, dtype u8, rank u8,
//               extents i32 x rank, payload offset u64, payload bytes u64
//   payloads (concatenated, offsets relative to payload section start)
//   crc32 u32 of everything before it
// dtype codes: 0 = f32, 1 = f64, 2 = i32, 3 = u8.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bgcut/tensor.hpp"

namespace bgcut {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1, i32 = 2, u8 = 3 };

std::size_t dtype_size(DType d);

struct StoredTensor {
  DType dtype = DType::f32;
  Shape shape;
  std::vector<std::uint8_t> bytes;

  std::int64_t numel() const;
};

class TensorStore {
 public:
  void put_f32(const std::string& name, const Tensor& t);
  void put_f64(const std::string& name, const TensorD& t);
  void put_i32(const std::string& name, const TensorT<int>& t);
  void put_bytes(const std::string& name, const std::vector<std::uint8_t>& data);

  Tensor get_f32(const std::string& name) const;
  TensorD get_f64(const std::string& name) const;
  TensorT<int> get_i32(const std::string& name) const;
  std::vector<std::uint8_t> get_bytes(const std::string& name) const;

  // Fetches an f32 tensor and checks its shape against the destination.
  Tensor get_f32_shaped(const std::string& name, const Shape& expect) const;

  bool contains(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }

  // Exact size in bytes that save() will write.
  std::uint64_t predicted_file_size() const;

  void save(const std::string& path) const;
  static TensorStore load(const std::string& path);

 private:
  const StoredTensor& entry(const std::string& name) const;
  void put_raw(const std::string& name, StoredTensor t);

  std::map<std::string, StoredTensor> entries_;
  std::vector<std::string> order_;
};

}  // namespace bgcut

#include "bgcut/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace bgcut {

namespace {

constexpr char kMagic[4] = {'B', 'G', 'C', 'T'};

void append_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

template <class U>
void append_scalar(std::vector<std::uint8_t>& out, U v) {
  append_bytes(out, &v, sizeof(U));
}

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}

  void read(void* dst, std::size_t n) {
    require(pos_ + n <= n_, Errc::truncated, "checkpoint: unexpected end of file");
    std::memcpy(dst, p_ + pos_, n);
    pos_ += n;
  }

  template <class U>
  U scalar() {
    U v;
    read(&v, sizeof(U));
    return v;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::i32: return 4;
    case DType::u8: return 1;
  }
  fail(Errc::invalid_argument, "unknown dtype code");
}

std::int64_t StoredTensor::numel() const {
  return static_cast<std::int64_t>(bytes.size() / dtype_size(dtype));
}

void TensorStore::put_raw(const std::string& name, StoredTensor t) {
  require(!name.empty(), Errc::invalid_argument, "tensor name must not be empty");
  if (entries_.find(name) == entries_.end()) order_.push_back(name);
  entries_[name] = std::move(t);
}

void TensorStore::put_f32(const std::string& name, const Tensor& t) {
  StoredTensor st;
  st.dtype = DType::f32;
  st.shape = t.shape();
  st.bytes.resize(static_cast<std::size_t>(t.size()) * 4);
  std::memcpy(st.bytes.data(), t.data(), st.bytes.size());
  put_raw(name, std::move(st));
}

void TensorStore::put_f64(const std::string& name, const TensorD& t) {
  StoredTensor st;
  st.dtype = DType::f64;
  st.shape = t.shape();
  st.bytes.resize(static_cast<std::size_t>(t.size()) * 8);
  std::memcpy(st.bytes.data(), t.data(), st.bytes.size());
  put_raw(name, std::move(st));
}

void TensorStore::put_i32(const std::string& name, const TensorT<int>& t) {
  StoredTensor st;
  st.dtype = DType::i32;
  st.shape = t.shape();
  st.bytes.resize(static_cast<std::size_t>(t.size()) * 4);
  std::memcpy(st.bytes.data(), t.data(), st.bytes.size());
  put_raw(name, std::move(st));
}

void TensorStore::put_bytes(const std::string& name, const std::vector<std::uint8_t>& data) {
  StoredTensor st;
  st.dtype = DType::u8;
  st.shape = {static_cast<int>(data.size())};
  st.bytes = data;
  put_raw(name, std::move(st));
}

const StoredTensor& TensorStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  require(it != entries_.end(), Errc::invalid_argument, "checkpoint: missing tensor " + name);
  return it->second;
}

Tensor TensorStore::get_f32(const std::string& name) const {
  const StoredTensor& st = entry(name);
  require(st.dtype == DType::f32, Errc::invalid_argument, "checkpoint: dtype mismatch for " + name);
  Tensor t(st.shape);
  std::memcpy(t.data(), st.bytes.data(), st.bytes.size());
  return t;
}

TensorD TensorStore::get_f64(const std::string& name) const {
  const StoredTensor& st = entry(name);
  require(st.dtype == DType::f64, Errc::invalid_argument, "checkpoint: dtype mismatch for " + name);
  TensorD t(st.shape);
  std::memcpy(t.data(), st.bytes.data(), st.bytes.size());
  return t;
}

TensorT<int> TensorStore::get_i32(const std::string& name) const {
  const StoredTensor& st = entry(name);
  require(st.dtype == DType::i32, Errc::invalid_argument, "checkpoint: dtype mismatch for " + name);
  TensorT<int> t(st.shape);
  std::memcpy(t.data(), st.bytes.data(), st.bytes.size());
  return t;
}

std::vector<std::uint8_t> TensorStore::get_bytes(const std::string& name) const {
  const StoredTensor& st = entry(name);
  require(st.dtype == DType::u8, Errc::invalid_argument, "checkpoint: dtype mismatch for " + name);
  return st.bytes;
}

Tensor TensorStore::get_f32_shaped(const std::string& name, const Shape& expect) const {
  Tensor t = get_f32(name);
  require(t.shape() == expect, Errc::shape_mismatch,
          "checkpoint: stored shape of " + name + " does not match the model");
  return t;
}

bool TensorStore::contains(const std::string& name) const {
  return entries_.find(name) != entries_.end();
}

std::uint64_t TensorStore::predicted_file_size() const {
  std::uint64_t n = 4 + 4 + 4;  // magic, version, count
  for (const auto& name : order_) {
    const StoredTensor& st = entries_.at(name);
    n += 4 + name.size() + 1 + 1 + 4 * st.shape.size() + 8 + 8;
    n += st.bytes.size();
  }
  return n + 4;  // crc
}

void TensorStore::save(const std::string& path) const {
  std::vector<std::uint8_t> out;
  append_bytes(out, kMagic, 4);
  append_scalar<std::uint32_t>(out, kCheckpointVersion);
  append_scalar<std::uint32_t>(out, static_cast<std::uint32_t>(order_.size()));

  std::uint64_t offset = 0;
  for (const auto& name : order_) {
    const StoredTensor& st = entries_.at(name);
    append_scalar<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    append_bytes(out, name.data(), name.size());
    append_scalar<std::uint8_t>(out, static_cast<std::uint8_t>(st.dtype));
    append_scalar<std::uint8_t>(out, static_cast<std::uint8_t>(st.shape.size()));
    for (int d : st.shape) append_scalar<std::int32_t>(out, d);
    append_scalar<std::uint64_t>(out, offset);
    append_scalar<std::uint64_t>(out, static_cast<std::uint64_t>(st.bytes.size()));
    offset += st.bytes.size();
  }
  for (const auto& name : order_) {
    const StoredTensor& st = entries_.at(name);
    append_bytes(out, st.bytes.data(), st.bytes.size());
  }
  const auto crc =
      static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), out.data(), static_cast<uInt>(out.size())));
  append_scalar<std::uint32_t>(out, crc);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), Errc::io, "checkpoint: cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  require(f.good(), Errc::io, "checkpoint: write failed: " + path);
}

TensorStore TensorStore::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Errc::io, "checkpoint: cannot open: " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  require(!f.bad(), Errc::io, "checkpoint: read failed: " + path);

  Reader r(buf.data(), buf.size());
  char magic[4];
  r.read(magic, 4);
  require(std::memcmp(magic, kMagic, 4) == 0, Errc::bad_magic, "checkpoint: bad magic");
  const auto version = r.scalar<std::uint32_t>();
  require(version == kCheckpointVersion, Errc::bad_version,
          "checkpoint: unsupported format version " + std::to_string(version));
  const auto count = r.scalar<std::uint32_t>();

  struct Row {
    std::string name;
    DType dtype;
    Shape shape;
    std::uint64_t offset, len;
  };
  std::vector<Row> rows;
  rows.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Row row;
    const auto name_len = r.scalar<std::uint32_t>();
    row.name.resize(name_len);
    r.read(row.name.data(), name_len);
    const auto dcode = r.scalar<std::uint8_t>();
    require(dcode <= 3, Errc::invalid_argument, "checkpoint: unknown dtype code");
    row.dtype = static_cast<DType>(dcode);
    const auto rank = r.scalar<std::uint8_t>();
    for (int d = 0; d < rank; ++d) row.shape.push_back(r.scalar<std::int32_t>());
    row.offset = r.scalar<std::uint64_t>();
    row.len = r.scalar<std::uint64_t>();
    rows.push_back(std::move(row));
  }

  const std::size_t payload_start = r.pos();
  std::uint64_t payload_bytes = 0;
  for (const auto& row : rows) payload_bytes = std::max(payload_bytes, row.offset + row.len);
  require(payload_start + payload_bytes + 4 <= buf.size(), Errc::truncated,
          "checkpoint: unexpected end of file");

  const std::size_t crc_pos = buf.size() - 4;
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + crc_pos, 4);
  const auto crc = static_cast<std::uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), buf.data(), static_cast<uInt>(crc_pos)));
  require(crc == stored_crc, Errc::bad_checksum, "checkpoint: checksum mismatch");

  TensorStore store;
  for (const auto& row : rows) {
    StoredTensor st;
    st.dtype = row.dtype;
    st.shape = row.shape;
    const std::int64_t expect = shape_numel(row.shape) * static_cast<std::int64_t>(dtype_size(row.dtype));
    require(static_cast<std::uint64_t>(expect) == row.len, Errc::truncated,
            "checkpoint: payload length does not match shape for " + row.name);
    st.bytes.assign(buf.begin() + static_cast<std::ptrdiff_t>(payload_start + row.offset),
                    buf.begin() + static_cast<std::ptrdiff_t>(payload_start + row.offset + row.len));
    store.put_raw(row.name, std::move(st));
  }
  return store;
}

}  // namespace bgcut

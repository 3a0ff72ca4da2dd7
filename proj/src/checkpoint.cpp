#include "spot/checkpoint.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <memory>

namespace spot {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void floats(const ArrayX<float>& a) {
    // float bytes as-is; the build targets little-endian hosts
    const std::size_t at = buf_.size();
    buf_.resize(at + static_cast<std::size_t>(a.size()) * 4);
    std::memcpy(buf_.data() + at, a.data(), static_cast<std::size_t>(a.size()) * 4);
  }
  const std::vector<std::uint8_t>& bytes() const { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
  }
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& buf, const std::string& path)
      : buf_(buf), path_(path) {}
  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  std::string str() {
    const std::uint32_t n = u32();
    const std::uint8_t* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  ArrayX<float> floats(std::int64_t n) {
    const std::uint8_t* p = take(static_cast<std::size_t>(n) * 4);
    ArrayX<float> a(n);
    std::memcpy(a.data(), p, static_cast<std::size_t>(n) * 4);
    return a;
  }
  std::size_t offset() const { return pos_; }

 private:
  std::uint64_t le(int n) {
    const std::uint8_t* p = take(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = n - 1; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    if (pos_ + n > buf_.size())
      throw IoError(path_ + ": truncated checkpoint at offset " + std::to_string(pos_));
    const std::uint8_t* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  const std::vector<std::uint8_t>& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fingerprint64(const std::string& text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

void CheckpointBundle::put(const std::string& name, const TensorF& t) {
  for (auto& kv : tensors)
    if (kv.first == name) {
      kv.second = t.detach();
      return;
    }
  tensors.emplace_back(name, t.detach());
}

void CheckpointBundle::put_array(const std::string& name, const ArrayX<float>& a) {
  put(name, TensorF::from_array(Shape{static_cast<int>(std::max<Eigen::Index>(a.size(), 1))},
                                a.size() ? a : ArrayX<float>::Zero(1)));
}

void CheckpointBundle::put_scalar(const std::string& name, float v) {
  put(name, TensorF::full(Shape{1}, v));
}

const TensorF* CheckpointBundle::find(const std::string& name) const {
  for (const auto& kv : tensors)
    if (kv.first == name) return &kv.second;
  return nullptr;
}

const TensorF& CheckpointBundle::require(const std::string& name) const {
  const TensorF* t = find(name);
  if (!t) throw IoError("checkpoint is missing tensor '" + name + "'");
  return *t;
}

void CheckpointBundle::save(const std::string& path) const {
  Writer w;
  w.u8('S');
  w.u8('P');
  w.u8('O');
  w.u8('T');
  w.u32(kVersion);
  w.u64(fingerprint);
  w.u64(step);
  w.u32(epoch);
  w.u64(seed);
  w.str(config_text);

  std::vector<std::pair<std::string, TensorF>> sorted = tensors;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  w.u32(static_cast<std::uint32_t>(sorted.size()));
  for (const auto& [name, t] : sorted) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    for (char c : name) w.u8(static_cast<std::uint8_t>(c));
    w.u8(0);  // dtype: f32
    w.u8(static_cast<std::uint8_t>(t.shape().rank()));
    for (int i = 0; i < t.shape().rank(); ++i) w.u32(static_cast<std::uint32_t>(t.shape()[i]));
    w.floats(t.values());
  }

  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot write checkpoint file: " + path);
  const auto& bytes = w.bytes();
  if (std::fwrite(bytes.data(), 1, bytes.size(), f.get()) != bytes.size())
    throw IoError("short write on checkpoint file: " + path);
}

CheckpointBundle CheckpointBundle::load(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open checkpoint file: " + path);
  std::fseek(f.get(), 0, SEEK_END);
  const long fsize = std::ftell(f.get());
  std::fseek(f.get(), 0, SEEK_SET);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(fsize));
  if (fsize > 0 && std::fread(bytes.data(), 1, bytes.size(), f.get()) != bytes.size())
    throw IoError("short read on checkpoint file: " + path);

  if (bytes.size() < 4 || std::memcmp(bytes.data(), "SPOT", 4) != 0)
    throw IoError(path + ": bad magic at offset 0, expected \"SPOT\"");
  Reader r(bytes, path);
  r.u32();  // magic, already checked
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw IoError(path + ": unsupported checkpoint version " + std::to_string(version) +
                  " at offset 4");
  CheckpointBundle b;
  b.fingerprint = r.u64();
  b.step = r.u64();
  b.epoch = r.u32();
  b.seed = r.u64();
  b.config_text = r.str();
  const std::uint32_t n = r.u32();
  b.tensors.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint16_t name_len = r.u16();
    std::string name;
    name.reserve(name_len);
    for (std::uint16_t k = 0; k < name_len; ++k) name.push_back(static_cast<char>(r.u8()));
    const std::uint8_t dtype = r.u8();
    if (dtype != 0)
      throw IoError(path + ": unsupported dtype tag " + std::to_string(dtype) + " for '" + name +
                    "' at offset " + std::to_string(r.offset() - 1));
    const int rank = static_cast<int>(r.u8());
    if (rank < 1 || rank > 4)
      throw IoError(path + ": bad rank " + std::to_string(rank) + " for '" + name + "'");
    std::vector<int> dims(static_cast<std::size_t>(rank));
    std::int64_t total = 1;
    for (int d = 0; d < rank; ++d) {
      dims[static_cast<std::size_t>(d)] = static_cast<int>(r.u32());
      total *= dims[static_cast<std::size_t>(d)];
    }
    Shape shape = [&] {
      switch (rank) {
        case 1: return Shape{dims[0]};
        case 2: return Shape{dims[0], dims[1]};
        case 3: return Shape{dims[0], dims[1], dims[2]};
        default: return Shape{dims[0], dims[1], dims[2], dims[3]};
      }
    }();
    b.tensors.emplace_back(name, TensorF::from_array(shape, r.floats(total)));
  }
  return b;
}

}  // namespace spot

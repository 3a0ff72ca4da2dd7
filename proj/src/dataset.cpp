#include "spot/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <memory>

#include "spot/ops.hpp"

namespace spot {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint64_t read_le(const std::uint8_t* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void write_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

}  // namespace

ImageDataset ImageDataset::load(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open dataset file: " + path);
  std::fseek(f.get(), 0, SEEK_END);
  const long fsize = std::ftell(f.get());
  std::fseek(f.get(), 0, SEEK_SET);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(fsize));
  if (fsize > 0 && std::fread(bytes.data(), 1, bytes.size(), f.get()) != bytes.size())
    throw IoError("short read on dataset file: " + path);

  if (bytes.size() < kHeaderSize)
    throw IoError(path + ": truncated header, " + std::to_string(bytes.size()) +
                  " bytes but the header needs " + std::to_string(kHeaderSize) +
                  " (offset " + std::to_string(bytes.size()) + ")");
  if (std::memcmp(bytes.data(), "IMGB", 4) != 0)
    throw IoError(path + ": bad magic at offset 0, expected \"IMGB\"");
  const auto version = static_cast<std::uint16_t>(read_le(bytes.data() + 4, 2));
  if (version != kVersion)
    throw IoError(path + ": unsupported version " + std::to_string(version) +
                  " at offset 4, expected " + std::to_string(kVersion));
  const auto count = static_cast<std::uint32_t>(read_le(bytes.data() + 6, 4));
  const int channels = static_cast<int>(bytes[10]);
  const int height = static_cast<int>(read_le(bytes.data() + 11, 2));
  const int width = static_cast<int>(read_le(bytes.data() + 13, 2));
  if (channels < 1 || height < 1 || width < 1)
    throw IoError(path + ": degenerate geometry in header (offset 10)");

  const std::size_t record = 1 + static_cast<std::size_t>(channels) * height * width;
  const std::size_t expect = kHeaderSize + record * count;
  if (bytes.size() != expect)
    throw IoError(path + ": file length " + std::to_string(bytes.size()) + " does not match " +
                  std::to_string(expect) + " for " + std::to_string(count) +
                  " records (truncation detected at offset " +
                  std::to_string(std::min(bytes.size(), expect)) + ")");

  ImageDataset ds(channels, height, width);
  ds.labels_.reserve(count);
  ds.pixels_.resize(static_cast<std::size_t>(count) * (record - 1));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint8_t* rec = bytes.data() + kHeaderSize + record * i;
    ds.labels_.push_back(rec[0]);
    std::memcpy(ds.pixels_.data() + static_cast<std::size_t>(i) * (record - 1), rec + 1,
                record - 1);
  }
  return ds;
}

void ImageDataset::save(const std::string& path) const {
  std::vector<std::uint8_t> bytes;
  const std::size_t plane = static_cast<std::size_t>(channels_) * height_ * width_;
  bytes.reserve(kHeaderSize + labels_.size() * (1 + plane));
  bytes.insert(bytes.end(), {'I', 'M', 'G', 'B'});
  write_le(bytes, kVersion, 2);
  write_le(bytes, labels_.size(), 4);
  bytes.push_back(static_cast<std::uint8_t>(channels_));
  write_le(bytes, static_cast<std::uint64_t>(height_), 2);
  write_le(bytes, static_cast<std::uint64_t>(width_), 2);
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    bytes.push_back(labels_[i]);
    bytes.insert(bytes.end(), pixels_.begin() + static_cast<std::ptrdiff_t>(i * plane),
                 pixels_.begin() + static_cast<std::ptrdiff_t>((i + 1) * plane));
  }
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot write dataset file: " + path);
  if (!bytes.empty() && std::fwrite(bytes.data(), 1, bytes.size(), f.get()) != bytes.size())
    throw IoError("short write on dataset file: " + path);
}

void ImageDataset::add(std::uint8_t label, const std::vector<std::uint8_t>& pixels) {
  const std::size_t plane = static_cast<std::size_t>(channels_) * height_ * width_;
  if (pixels.size() != plane)
    throw IoError("record has " + std::to_string(pixels.size()) + " pixel bytes, expected " +
                  std::to_string(plane));
  labels_.push_back(label);
  pixels_.insert(pixels_.end(), pixels.begin(), pixels.end());
}

ArrayX<float> ImageDataset::image(int i) const {
  if (i < 0 || i >= count()) throw IoError("record index " + std::to_string(i) + " out of range");
  const std::size_t plane = static_cast<std::size_t>(channels_) * height_ * width_;
  ArrayX<float> out(static_cast<Eigen::Index>(plane));
  const std::uint8_t* src = pixels_.data() + plane * static_cast<std::size_t>(i);
  for (std::size_t k = 0; k < plane; ++k)
    out[static_cast<Eigen::Index>(k)] = static_cast<float>(src[k]) / 255.0f;
  return out;
}

TensorF ImageDataset::batch(const std::vector<int>& indices) const {
  const Eigen::Index plane = static_cast<Eigen::Index>(channels_) * height_ * width_;
  ArrayX<float> data(static_cast<Eigen::Index>(indices.size()) * plane);
  for (std::size_t k = 0; k < indices.size(); ++k)
    data.segment(static_cast<Eigen::Index>(k) * plane, plane) = image(indices[k]);
  return TensorF::from_array(
      Shape{static_cast<int>(indices.size()), channels_, height_, width_}, std::move(data));
}

std::vector<int> ImageDataset::all_indices() const {
  std::vector<int> idx(static_cast<std::size_t>(count()));
  for (int i = 0; i < count(); ++i) idx[static_cast<std::size_t>(i)] = i;
  return idx;
}

ArrayX<float> augment(const ArrayX<float>& image, int channels, int height, int width, int crop,
                      Rng& rng, float scale_min, float scale_max) {
  const float s = static_cast<float>(rng.uniform(scale_min, scale_max));
  const int rh = std::max(crop, static_cast<int>(std::lround(height * s)));
  const int rw = std::max(crop, static_cast<int>(std::lround(width * s)));
  if (crop > rh || crop > rw)
    throw ShapeError("augment: crop " + std::to_string(crop) + " exceeds resized image " +
                     std::to_string(rh) + "x" + std::to_string(rw));
  TensorF t = TensorF::from_array(Shape{1, channels, height, width}, image);
  TensorF resized = (rh == height && rw == width) ? t : resize_bilinear(t, rh, rw);
  const int oy = rh == crop ? 0 : rng.uniform_int(rh - crop + 1);
  const int ox = rw == crop ? 0 : rng.uniform_int(rw - crop + 1);
  ArrayX<float> out(static_cast<Eigen::Index>(channels) * crop * crop);
  const auto& src = resized.values();
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < crop; ++y)
      for (int x = 0; x < crop; ++x)
        out[(static_cast<Eigen::Index>(c) * crop + y) * crop + x] =
            src[(static_cast<Eigen::Index>(c) * rh + oy + y) * rw + ox + x];
  return out;
}

}  // namespace spot

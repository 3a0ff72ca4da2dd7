#include "spot/netspec.hpp"

#include <cctype>
#include <stdexcept>

namespace spot {

namespace {

class Cursor {
 public:
  explicit Cursor(const std::string& s) : s_(s) {}
  bool done() const { return pos_ >= s_.size(); }
  char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
  char take() { return s_[pos_++]; }
  void expect(char c) {
    if (done() || s_[pos_] != c)
      throw std::invalid_argument("conv stack: expected '" + std::string(1, c) + "' at position " +
                                  std::to_string(pos_) + " in \"" + s_ + "\"");
    ++pos_;
  }
  int number() {
    if (done() || !std::isdigit(static_cast<unsigned char>(peek())))
      throw std::invalid_argument("conv stack: expected a number at position " +
                                  std::to_string(pos_) + " in \"" + s_ + "\"");
    int v = 0;
    while (!done() && std::isdigit(static_cast<unsigned char>(peek()))) v = v * 10 + (take() - '0');
    return v;
  }

 private:
  const std::string& s_;
  std::size_t pos_ = 0;
};

}  // namespace

NetworkSpec parse_conv_stack(const std::string& text) {
  NetworkSpec spec;
  Cursor cur(text);
  while (true) {
    LayerSpec layer;
    cur.expect('(');
    layer.filters = cur.number();
    cur.expect(')');
    layer.kernel = cur.number();
    if (cur.peek() == 'r') {
      cur.take();
      layer.kind = LayerKind::ResizeConv;
    }
    cur.expect('c');
    layer.stride = cur.number();
    if (layer.filters < 1 || layer.kernel < 1 || layer.stride < 1)
      throw std::invalid_argument("conv stack: non-positive field in layer " +
                                  std::to_string(spec.layers.size()));
    spec.layers.push_back(layer);
    if (cur.done()) break;
    cur.expect('-');
  }
  return spec;
}

std::string format_conv_stack(const NetworkSpec& spec) {
  std::string out;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (i) out += '-';
    out += '(' + std::to_string(l.filters) + ')' + std::to_string(l.kernel) +
           (l.kind == LayerKind::ResizeConv ? "rc" : "c") + std::to_string(l.stride);
  }
  return out;
}

Shape conv_stack_output_shape(const NetworkSpec& spec, const Shape& input) {
  if (input.rank() != 4) throw ShapeError("conv stack input must be rank 4, got " + input.str());
  int c = input.c(), h = input.h(), w = input.w();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.kind == LayerKind::ResizeConv) {
      h *= l.stride;
      w *= l.stride;
    } else {
      h = (h + l.stride - 1) / l.stride;
      w = (w + l.stride - 1) / l.stride;
    }
    if (h < 1 || w < 1)
      throw ShapeError("conv stack: layer " + std::to_string(i) + " collapses spatial extent");
    c = l.filters;
  }
  return Shape{input.n(), c, h, w};
}

RFSummary receptive_field(const NetworkSpec& spec) {
  RFSummary rf;
  int r = 1, j = 1;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.kind != LayerKind::Conv)
      throw std::invalid_argument("receptive_field: layer " + std::to_string(i) +
                                  " is not a plain convolution");
    r += (l.kernel - 1) * j;
    j *= l.stride;
  }
  rf.receptive_field = r;
  rf.effective_stride = j;
  rf.overlap = r - j;
  return rf;
}

}  // namespace spot

#include "bsrkit/bft.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "bsrkit/error.hpp"

namespace bsrkit {

namespace {

constexpr char kMagic[4] = {'B', 'F', 'T', '1'};
constexpr std::uint8_t kDtypeF64 = 0;

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(raw), std::end(raw));
  out.insert(out.end(), std::begin(raw), std::end(raw));
}

template <class T>
T get_le(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw FormatError("truncated .bft payload");
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(raw), std::end(raw));
  pos += sizeof(T);
  T v;
  std::memcpy(&v, raw, sizeof(T));
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_bft(const Tensor& t) {
  if (t.rank() > 255) throw FormatError("rank too large for .bft");
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.push_back(kDtypeF64);
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) {
    if (e > 0xffffffffu) throw FormatError("extent too large for .bft");
    put_le(out, static_cast<std::uint32_t>(e));
  }
  out.reserve(out.size() + t.size() * 8);
  for (double v : t.values()) put_le(out, v);
  return out;
}

Tensor decode_bft(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a .bft file (bad magic)");
  if (bytes[4] != kDtypeF64) throw FormatError("unsupported .bft dtype tag " + std::to_string(bytes[4]));
  const std::size_t rank = bytes[5];
  std::size_t pos = 6;
  Shape shape;
  for (std::size_t i = 0; i < rank; ++i) shape.push_back(get_le<std::uint32_t>(bytes, pos));
  if (shape.empty()) throw FormatError(".bft rank must be positive");
  const std::size_t n = numel(shape);
  if (bytes.size() != pos + n * 8) throw FormatError(".bft payload length does not match extents");
  std::vector<double> data(n);
  for (auto& v : data) v = get_le<double>(bytes, pos);
  return Tensor(std::move(shape), std::move(data));
}

void write_bft(const Tensor& t, const std::filesystem::path& path) {
  const auto bytes = encode_bft(t);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

Tensor read_bft(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_bft(bytes);
}

}  // namespace bsrkit

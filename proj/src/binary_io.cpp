#include "binary_io.hpp"

#include <fstream>
#include <sstream>

namespace s3m::detail {

void ByteWriter::short_string(std::string_view s) {
  if (s.size() > 0xffff) throw DataError("string too long for u16 length prefix");
  uint<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
  bytes(s);
}

std::string_view ByteReader::bytes(std::size_t n) {
  if (n > remaining()) {
    throw CorruptionError(context_ + ": truncated (needed " + std::to_string(n) + " bytes at offset " +
                          std::to_string(pos_) + ", " + std::to_string(remaining()) + " left)");
  }
  auto out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

void ByteReader::floats(std::span<float> out) {
  auto raw = bytes(out.size_bytes());
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), raw.data(), raw.size());
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::uint32_t v = 0;
      for (int b = 0; b < 4; ++b) {
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[4 * i + b])) << (8 * b);
      }
      out[i] = std::bit_cast<float>(v);
    }
  }
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace s3m::detail

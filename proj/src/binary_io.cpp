#include "sembid/binary_io.hpp"

#include <fstream>

namespace sembid {

void ByteWriter::write_file(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(buf_.data()),
            static_cast<std::streamsize>(buf_.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

ByteReader ByteReader::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  const auto size = std::filesystem::file_size(path);
  std::vector<std::uint8_t> data(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(size));
  if (!in) throw std::runtime_error("read failed: " + path.string());
  return ByteReader(std::move(data));
}

std::uint64_t ByteReader::get(int n) {
  if (remaining() < static_cast<std::size_t>(n)) fail("unexpected end of data");
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += static_cast<std::size_t>(n);
  return v;
}

std::string ByteReader::bytes(std::size_t n) {
  if (remaining() < n) fail("unexpected end of data");
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

void ByteReader::expect_magic(std::string_view magic) {
  const std::size_t at = pos_;
  if (remaining() < magic.size() || bytes(magic.size()) != magic) {
    throw ParseError("bad magic, expected '" + std::string(magic) + "'", at);
  }
}

}  // namespace sembid

#include "clustat/arrayio.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "clustat/core.hpp"

namespace clustat {

namespace {

constexpr const char* kMagic = "CLUSTAT-ARRAY 1";

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
  return r;
}

}  // namespace

void write_array(std::ostream& out, const DenseArray& array) {
  if (array.data.size() != array.rows * array.cols)
    throw std::invalid_argument("write_array: data size does not match rows*cols");
  out << kMagic << '\n' << "dtype f64\n" << "endian little\n";
  out << "rows " << array.rows << '\n' << "cols " << array.cols << '\n';
  for (const auto& [k, v] : array.meta) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos)
      throw std::invalid_argument("write_array: metadata must be single-token keys on one line");
    out << k << ' ' << v << '\n';
  }
  out << "END\n";
  for (double d : array.data) {
    std::uint64_t bits = to_little(std::bit_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
  }
}

DenseArray read_array(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw DataError("read_array: bad magic line");
  DenseArray array;
  bool have_rows = false, have_cols = false;
  while (std::getline(in, line)) {
    if (line == "END") break;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw DataError("read_array: malformed header line '" + line + "'");
    const std::string key = line.substr(0, sp), value = line.substr(sp + 1);
    long long n = 0;
    if (key == "dtype") {
      if (value != "f64") throw DataError("read_array: unsupported dtype " + value);
    } else if (key == "endian") {
      if (value != "little") throw DataError("read_array: unsupported endianness " + value);
    } else if (key == "rows" && parse_int(value, n) && n >= 0) {
      array.rows = static_cast<std::size_t>(n);
      have_rows = true;
    } else if (key == "cols" && parse_int(value, n) && n >= 0) {
      array.cols = static_cast<std::size_t>(n);
      have_cols = true;
    } else {
      array.meta[key] = value;
    }
  }
  if (!have_rows || !have_cols) throw DataError("read_array: header lacks rows/cols");
  array.data.resize(array.rows * array.cols);
  for (double& d : array.data) {
    std::uint64_t bits = 0;
    if (!in.read(reinterpret_cast<char*>(&bits), sizeof(bits))) throw DataError("read_array: truncated data");
    d = std::bit_cast<double>(to_little(bits));
  }
  return array;
}

void write_arrays(const std::string& path, const std::vector<DenseArray>& arrays) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const auto& a : arrays) write_array(out, a);
  if (!out) throw IoError("write failed: " + path);
}

std::vector<DenseArray> read_arrays(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<DenseArray> arrays;
  while (in.peek() != std::char_traits<char>::eof()) arrays.push_back(read_array(in));
  return arrays;
}

}  // namespace clustat

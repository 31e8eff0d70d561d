// Binary dense-array files with a self-describing text header.
//
//   CLUSTAT-ARRAY 1
//   dtype f64
//   endian little
//   rows <R>
//   cols <C>
//   <key> <value>        (optional metadata lines)
//   END
//   <R*C little-endian IEEE-754 doubles, row-major>
//
// Several arrays may follow each other in one file.

#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace clustat {

struct DenseArray {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major
  std::map<std::string, std::string> meta;
};

void write_array(std::ostream& out, const DenseArray& array);
DenseArray read_array(std::istream& in);

void write_arrays(const std::string& path, const std::vector<DenseArray>& arrays);
std::vector<DenseArray> read_arrays(const std::string& path);

}  // namespace clustat

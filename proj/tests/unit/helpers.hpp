#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "tmf/phantom.hpp"

namespace tmf::test {

// 64^3 grid at 4 mm: the default anatomy at a quarter of the voxel count.
inline PhantomSpec small_spec() {
  PhantomSpec s;
  s.dims = {64, 64, 64};
  s.spacing_mm = {4.0, 4.0, 4.0};
  return s;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("tmf_unit_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace tmf::test

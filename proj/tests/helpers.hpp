#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "mpnflow/synthdata.hpp"

namespace testutil {

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mpnflow_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path);
  os << text;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline mpnflow::Detection det(int node_id, int frame, mpnflow::Box box,
                              std::vector<double> appearance = {0.0}) {
  mpnflow::Detection d;
  d.node_id = node_id;
  d.frame = frame;
  d.box = box;
  d.appearance = std::move(appearance);
  return d;
}

}  // namespace testutil

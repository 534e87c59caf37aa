#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "oracles.hpp"

namespace dnet::test {

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dnet_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace dnet::test

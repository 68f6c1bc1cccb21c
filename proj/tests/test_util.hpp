#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "bdce/image.hpp"
#include "bdce/rng.hpp"

namespace bdce::test {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("bdce_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline Image random_image(std::size_t h, std::size_t w, Rng& rng, float lo = 0.0f, float hi = 1.0f) {
  Image img = Image::chw(3, h, w);
  for (auto& v : img.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return img;
}

}  // namespace bdce::test

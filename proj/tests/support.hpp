#pragma once

// Shared test helpers: seeded random masks, temporary directories and golden
// file comparison. Set SIMSAM_UPDATE_GOLDEN=1 to rewrite golden files.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "simsam/error.hpp"
#include "simsam/mask.hpp"

namespace simsam::testing {

inline void expect_code(ErrorCode code, const std::function<void()>& fn) {
  try {
    fn();
    ADD_FAILURE() << "expected an Error with code " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

inline std::filesystem::path golden_dir() { return SIMSAM_GOLDEN_DIR; }
inline std::filesystem::path data_dir() { return SIMSAM_DATA_DIR; }
inline std::filesystem::path test_data_dir() { return SIMSAM_TEST_DATA_DIR; }

inline bool updating_goldens() {
  const char* v = std::getenv("SIMSAM_UPDATE_GOLDEN");
  return v != nullptr && std::string(v) == "1";
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream(path, std::ios::binary) << text;
}

/// Compares `actual` with golden file `name`, or rewrites it when updating.
inline void expect_golden(const std::string& name, const std::string& actual) {
  const auto path = golden_dir() / name;
  if (updating_goldens()) {
    write_text(path, actual);
    return;
  }
  ASSERT_TRUE(std::filesystem::exists(path)) << "missing golden file " << path;
  EXPECT_EQ(read_text(path), actual) << "golden mismatch for " << name;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = tag;
    if (info != nullptr) name += std::string("_") + info->test_suite_name() + "_" + info->name();
    path_ = std::filesystem::temp_directory_path() / ("simsam_" + name);
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

/// Bernoulli(density) pixels.
inline BinaryMask random_mask(const ImageShape& shape, double density, std::mt19937_64& rng) {
  std::bernoulli_distribution on(density);
  BinaryMask m(shape);
  for (std::size_t i = 0; i < shape.pixel_count(); ++i) m.set(i, on(rng));
  return m;
}

/// A random axis-aligned rectangle, sometimes empty, for structured masks.
inline BinaryMask random_blocky_mask(const ImageShape& shape, std::mt19937_64& rng) {
  BinaryMask m(shape);
  std::uniform_int_distribution<std::size_t> rows(0, shape.height - 1), cols(0, shape.width - 1);
  const int rects = static_cast<int>(rng() % 3);
  for (int k = 0; k < rects; ++k) {
    auto r0 = rows(rng), r1 = rows(rng), c0 = cols(rng), c1 = cols(rng);
    if (r0 > r1) std::swap(r0, r1);
    if (c0 > c1) std::swap(c0, c1);
    for (std::size_t r = r0; r <= r1; ++r) {
      for (std::size_t c = c0; c <= c1; ++c) m.set(r, c, true);
    }
  }
  return m;
}

inline BinaryMask mask_from_rows(const std::vector<std::string>& rows) {
  BinaryMask m(ImageShape{rows.size(), rows.front().size()});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) m.set(r, c, rows[r][c] == '#');
  }
  return m;
}

}  // namespace simsam::testing

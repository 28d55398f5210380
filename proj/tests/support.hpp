#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <gtest/gtest.h>

namespace scholarpipe::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("scholarpipe-" + std::to_string(rd()) + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

#define EXPECT_ERRC(stmt, errc)                                  \
  do {                                                           \
    try {                                                        \
      stmt;                                                      \
      ADD_FAILURE() << "expected " #errc;                        \
    } catch (const ::scholarpipe::Error& e) {                    \
      EXPECT_EQ(e.code(), errc) << e.what();                     \
    }                                                            \
  } while (0)

}  // namespace scholarpipe::testing

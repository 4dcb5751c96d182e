#pragma once

#include <filesystem>
#include <string>

#include "facecond/config.hpp"
#include "facecond/gradcheck.hpp"
#include "facecond/params.hpp"

namespace facecond::test {

// Small float config shared by the module tests.
inline Config small_config() { return gradcheck_config(); }

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("facecond_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace facecond::test

#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "cellspec/digest.hpp"

namespace testsupport {

namespace fs = std::filesystem;

inline fs::path fixtures() { return CELLSPEC_FIXTURES; }
inline fs::path cli() { return CELLSPEC_CLI; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("cellspec-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline std::string quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

/// Runs the command-line tool with the given arguments (already quoted).
inline RunResult run_cli(const std::string& args, const fs::path& scratch) {
  static std::atomic<int> n{0};
  const auto id = std::to_string(n++);
  const fs::path out = scratch / (".stdout" + id), err = scratch / (".stderr" + id);
  const std::string cmd = quote(cli().string()) + " " + args + " >" + quote(out.string()) + " 2>" + quote(err.string());
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = cellspec::read_file(out);
  r.err = cellspec::read_file(err);
  fs::remove(out);
  fs::remove(err);
  return r;
}

inline const char* kSampleQuestion = "During Emergency Registration, when is NAS integrity established?";

}  // namespace testsupport

#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "salbfgs/rng.hpp"
#include "salbfgs/types.hpp"

namespace testutil {

namespace fs = std::filesystem;

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& hint) {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            (hint + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// Runs a shell command, returning its exit code; stdout/stderr are captured
// into the given files when paths are provided.
inline int run_command(const std::string& command,
                       const fs::path& stdout_file = {},
                       const fs::path& stderr_file = {}) {
  std::string full = command;
  if (!stdout_file.empty()) full += " > " + stdout_file.string();
  if (!stderr_file.empty()) full += " 2> " + stderr_file.string();
  const int status = std::system(full.c_str());
  if (status == -1) return -1;
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return -2;
}

#ifdef SALBFGS_CLI_PATH
inline std::string cli_path() { return SALBFGS_CLI_PATH; }
#endif

// Dense random classification examples for in-library tests.
inline salbfgs::Example random_example(salbfgs::Rng& rng, std::size_t dim,
                                       std::size_t nnz,
                                       bool random_weight = false) {
  salbfgs::Example ex;
  auto indices = salbfgs::sample_without_replacement(dim, nnz, rng);
  std::sort(indices.begin(), indices.end());
  for (std::size_t i : indices) {
    double v = rng.normal();
    if (v == 0.0) v = 0.5;
    ex.features.entries.emplace_back(static_cast<std::uint32_t>(i), v);
  }
  ex.label = rng.uniform01() < 0.5 ? 0 : 1;
  if (random_weight) ex.weight = 0.5 + rng.uniform01();
  return ex;
}

inline salbfgs::Batch random_batch(salbfgs::Rng& rng, std::size_t time_index,
                                   std::size_t size, std::size_t dim,
                                   std::size_t nnz,
                                   bool random_weight = false) {
  salbfgs::Batch batch;
  batch.time_index = time_index;
  for (std::size_t i = 0; i < size; ++i)
    batch.examples.push_back(random_example(rng, dim, nnz, random_weight));
  return batch;
}

}  // namespace testutil

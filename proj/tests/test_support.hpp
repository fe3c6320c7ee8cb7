#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include "dfmm/geometry.hpp"
#include "dfmm/precompute.hpp"

namespace dfmm::test {

inline std::string data_path(const std::string& name) {
  if (const char* d = std::getenv("DFMM_TEST_DATA_DIR"))
    return std::string(d) + "/" + name;
  return "tests/data/" + name;
}

inline std::string artifact_dir() {
  std::string dir = "dfmm_test_artifacts";
  if (const char* d = std::getenv("DFMM_TEST_ARTIFACTS")) dir = d;
  std::filesystem::create_directories(dir);
  return dir;
}

// Expensive shared fixtures are built once and kept on disk so every ctest
// process (and re-run) after the first loads them instead.
inline const PrecomputeCache& cache_k4(double epsilon) {
  static std::map<double, PrecomputeCache> held;
  auto it = held.find(epsilon);
  if (it != held.end()) return it->second;

  const std::string path =
      artifact_dir() + "/cache_k4_" + std::to_string(int(-std::log10(epsilon))) + ".bin";
  if (std::filesystem::exists(path)) {
    try {
      PrecomputeCache c = load_cache(path);
      if (c.epsilon == epsilon && c.covers(4.0, 3))
        return held.emplace(epsilon, std::move(c)).first->second;
    } catch (const Error&) {
      // stale or truncated artifact: rebuild below
    }
  }
  PrecomputeCache c = PrecomputeCache::build(4.0, epsilon, 1, 3);
  save_cache(c, path);
  return held.emplace(epsilon, std::move(c)).first->second;
}

}  // namespace dfmm::test

#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "preflab/data.hpp"
#include "preflab/model.hpp"

namespace fixtures {

namespace fs = std::filesystem;

inline fs::path tmp_dir(const std::string& name) {
  static std::atomic<int> counter{0};
  const fs::path p = fs::path(PREFLAB_TEST_TMP) / (name + "-" + std::to_string(::getpid()) + "-" +
                                                   std::to_string(counter++));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline preflab::SyntheticConfig small_config(std::size_t d = 8, std::size_t n_train = 512) {
  preflab::SyntheticConfig c;
  c.d = d;
  c.n_train = n_train;
  c.n_valid = 128;
  c.n_test = 256;
  c.n_ood = 64;
  c.truth_hidden = 8;
  return c;
}

inline preflab::PreferenceDataset small_dataset(std::uint64_t seed = 1, std::size_t d = 8,
                                                std::size_t n_train = 512) {
  return preflab::generate_synthetic(small_config(d, n_train), seed);
}

inline preflab::ComparisonPair make_pair(const std::string& id, std::vector<double> a, std::vector<double> b,
                                         std::optional<preflab::Choice> label = preflab::Choice::First) {
  preflab::ComparisonPair p;
  p.pair_id = id;
  p.first = {id + "/a", std::nullopt, std::move(a)};
  p.second = {id + "/b", std::nullopt, std::move(b)};
  p.label = label;
  return p;
}

inline std::vector<double> normal_vector(preflab::Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * preflab::standard_normal(rng);
  return v;
}

}  // namespace fixtures

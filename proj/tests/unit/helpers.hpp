#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tpld/autodiff.hpp"
#include "tpld/corpus.hpp"
#include "tpld/model.hpp"
#include "tpld/rng.hpp"

namespace testutil {

inline std::filesystem::path data_dir() { return TPLD_TEST_DATA; }

inline tpld::Corpus golden() { return tpld::load_corpus(data_dir() / "golden_3sessions.jsonl"); }

inline std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

inline std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("tpld_unit_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename T>
tpld::ad::Tensor<T> random_tensor(tpld::Rng& rng, tpld::ad::Shape shape, bool requires_grad = true, double sd = 1.0) {
  std::vector<T> v(tpld::ad::numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal(0.0, sd));
  return tpld::ad::Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

// A small model that still has every component (2 heads, 1+1 layers).
inline tpld::ModelConfig small_model(std::size_t vocab) {
  tpld::ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.d_ff = 16;
  c.max_context = 64;
  c.max_target = 48;
  c.max_turns = 8;
  return c;
}

// The micro architecture with a given vocabulary size.
inline tpld::ModelConfig micro_model(std::size_t vocab) {
  tpld::ModelConfig c;
  c.vocab_size = vocab;
  c.max_context = 128;
  c.max_target = 64;
  return c;
}

}  // namespace testutil

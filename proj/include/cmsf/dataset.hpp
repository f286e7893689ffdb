#pragma once
// Paired region/word feature sets: in-memory form, synthetic generator, and
// the on-disk manifest format.
//
// Manifest (text):
//   cmsf-features-v1
//   pairs <P>
//   regions <N> <D_region>
//   words <L> <D_word>
//   <region file> <word file>      one line per pair, paths relative to
//                                  the manifest's directory
// Each feature file is N*D_region (or L*D_word) little-endian float32 values.
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "cmsf/tensor.hpp"

namespace cmsf {

struct FeatureDataset {
  std::size_t pairs = 0;
  std::size_t N = 0, L = 0;
  std::size_t d_region = 0, d_word = 0;
  std::vector<float> regions;  // pairs x N x d_region
  std::vector<float> words;    // pairs x L x d_word

  void validate() const;
  // (len(indices), N, d_region) and (len(indices), L, d_word).
  Tensor region_batch(const std::vector<std::size_t>& indices) const;
  Tensor word_batch(const std::vector<std::size_t>& indices) const;
  FeatureDataset subset(const std::vector<std::size_t>& indices) const;
};

struct SynthOptions {
  std::uint64_t seed = 0;
  std::size_t pairs = 200;
  std::size_t N = 36, L = 36;
  std::size_t d_region = 2048, d_word = 768;
  std::size_t latent_dim = 16;
  float noise = 0.1f;
  void validate() const;
};

// Each pair draws min(N, L) latent concept vectors. Every region token and
// every word token shows one of its pair's concepts (a seeded random
// assignment per pair), mapped through a fixed per-modality random projection
// and perturbed by independent Gaussian noise of scale `noise`. Tokens of
// different pairs share nothing, so only matched pairs are related.
struct SynthDataset {
  FeatureDataset data;
  std::size_t concepts = 0;
  std::vector<float> latents;              // pairs x concepts x latent_dim
  std::vector<std::uint32_t> region_code;  // pairs x N concept indices
  std::vector<std::uint32_t> word_code;    // pairs x L
  std::vector<float> region_projection;    // latent_dim x d_region
  std::vector<float> word_projection;      // latent_dim x d_word
};

SynthDataset synth_dataset(const SynthOptions& options);

// Writes the manifest and one file per pair and modality into `dir`; returns
// the manifest path.
std::filesystem::path write_dataset(const FeatureDataset& data, const std::filesystem::path& dir);
// Validates sizes of every referenced file before reading any values.
FeatureDataset load_dataset(const std::filesystem::path& manifest);

// Seed-stable split: a shuffled `fraction` of the pairs (at least one when
// there are two or more) goes to validation.
struct Split {
  std::vector<std::size_t> train, validation;
};
Split split_pairs(std::size_t pairs, double fraction, std::uint64_t seed);

}  // namespace cmsf

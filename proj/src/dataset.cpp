#include "cmsf/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "cmsf/errors.hpp"

namespace cmsf {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifestTag = "cmsf-features-v1";

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

void write_floats(const fs::path& path, const float* data, std::size_t count) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  std::vector<std::uint32_t> words(count);
  std::memcpy(words.data(), data, count * sizeof(float));
  for (auto& w : words) w = to_le(w);
  out.write(reinterpret_cast<const char*>(words.data()), std::streamsize(count * sizeof(float)));
  if (!out) throw DatasetError("short write to " + path.string());
}

void read_floats(const fs::path& path, float* dest, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot read " + path.string());
  std::vector<std::uint32_t> words(count);
  in.read(reinterpret_cast<char*>(words.data()), std::streamsize(count * sizeof(float)));
  if (!in) throw DatasetError("short read from " + path.string());
  for (auto& w : words) w = to_le(w);
  std::memcpy(dest, words.data(), count * sizeof(float));
}

Tensor gather(const std::vector<float>& src, std::size_t pairs, std::size_t tokens, std::size_t width,
              const std::vector<std::size_t>& indices) {
  const std::size_t stride = tokens * width;
  std::vector<float> out(indices.size() * stride);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= pairs) throw UsageError("pair index " + std::to_string(indices[i]) + " out of range");
    std::copy_n(src.begin() + std::ptrdiff_t(indices[i] * stride), stride, out.begin() + std::ptrdiff_t(i * stride));
  }
  return Tensor::from({indices.size(), tokens, width}, std::move(out));
}

}  // namespace

void FeatureDataset::validate() const {
  if (regions.size() != pairs * N * d_region || words.size() != pairs * L * d_word) {
    throw DatasetError("feature buffers do not match the declared shapes");
  }
}

Tensor FeatureDataset::region_batch(const std::vector<std::size_t>& indices) const {
  return gather(regions, pairs, N, d_region, indices);
}

Tensor FeatureDataset::word_batch(const std::vector<std::size_t>& indices) const {
  return gather(words, pairs, L, d_word, indices);
}

FeatureDataset FeatureDataset::subset(const std::vector<std::size_t>& indices) const {
  FeatureDataset out;
  out.pairs = indices.size();
  out.N = N;
  out.L = L;
  out.d_region = d_region;
  out.d_word = d_word;
  const Tensor r = region_batch(indices);
  const Tensor w = word_batch(indices);
  out.regions.assign(r.data().begin(), r.data().end());
  out.words.assign(w.data().begin(), w.data().end());
  return out;
}

void SynthOptions::validate() const {
  if (pairs < 2) throw UsageError("synthetic dataset needs at least 2 pairs (contrastive negatives)");
  if (N == 0 || L == 0 || d_region == 0 || d_word == 0 || latent_dim == 0) {
    throw UsageError("synthetic dataset sizes must be positive");
  }
  if (!(noise >= 0.0f)) throw UsageError("noise must be non-negative");
}

SynthDataset synth_dataset(const SynthOptions& o) {
  o.validate();
  SynthDataset s;
  s.concepts = std::min(o.N, o.L);
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<float> gauss(0.0f, 1.0f);

  const float proj_scale = 1.0f / std::sqrt(float(o.latent_dim));
  s.region_projection.resize(o.latent_dim * o.d_region);
  s.word_projection.resize(o.latent_dim * o.d_word);
  for (float& v : s.region_projection) v = gauss(rng) * proj_scale;
  for (float& v : s.word_projection) v = gauss(rng) * proj_scale;

  s.latents.resize(o.pairs * s.concepts * o.latent_dim);
  for (float& v : s.latents) v = gauss(rng);

  auto assign = [&](std::size_t tokens, std::vector<std::uint32_t>& codes) {
    std::vector<std::uint32_t> perm(s.concepts);
    for (std::size_t p = 0; p < o.pairs; ++p) {
      std::iota(perm.begin(), perm.end(), 0u);
      std::shuffle(perm.begin(), perm.end(), rng);
      for (std::size_t k = 0; k < tokens; ++k) codes.push_back(perm[k % s.concepts]);
    }
  };
  assign(o.N, s.region_code);
  assign(o.L, s.word_code);

  auto render = [&](std::size_t tokens, std::size_t width, const std::vector<std::uint32_t>& codes,
                    const std::vector<float>& proj, std::vector<float>& out) {
    out.assign(o.pairs * tokens * width, 0.0f);
    for (std::size_t p = 0; p < o.pairs; ++p) {
      for (std::size_t k = 0; k < tokens; ++k) {
        const float* z = s.latents.data() + (p * s.concepts + codes[p * tokens + k]) * o.latent_dim;
        float* row = out.data() + (p * tokens + k) * width;
        for (std::size_t c = 0; c < o.latent_dim; ++c) {
          for (std::size_t d = 0; d < width; ++d) row[d] += z[c] * proj[c * width + d];
        }
        if (o.noise > 0.0f) {
          for (std::size_t d = 0; d < width; ++d) row[d] += o.noise * gauss(rng);
        }
      }
    }
  };
  render(o.N, o.d_region, s.region_code, s.region_projection, s.data.regions);
  render(o.L, o.d_word, s.word_code, s.word_projection, s.data.words);

  s.data.pairs = o.pairs;
  s.data.N = o.N;
  s.data.L = o.L;
  s.data.d_region = o.d_region;
  s.data.d_word = o.d_word;
  return s;
}

fs::path write_dataset(const FeatureDataset& data, const fs::path& dir) {
  data.validate();
  fs::create_directories(dir / "features");
  const fs::path manifest = dir / "manifest.txt";
  std::ofstream out(manifest);
  if (!out) throw DatasetError("cannot write " + manifest.string());
  out << kManifestTag << "\n";
  out << "pairs " << data.pairs << "\n";
  out << "regions " << data.N << " " << data.d_region << "\n";
  out << "words " << data.L << " " << data.d_word << "\n";
  const std::size_t rs = data.N * data.d_region, ws = data.L * data.d_word;
  for (std::size_t p = 0; p < data.pairs; ++p) {
    std::ostringstream stem;
    stem << "features/" << std::setw(6) << std::setfill('0') << p;
    const std::string rname = stem.str() + ".region.f32", wname = stem.str() + ".word.f32";
    write_floats(dir / rname, data.regions.data() + p * rs, rs);
    write_floats(dir / wname, data.words.data() + p * ws, ws);
    out << rname << " " << wname << "\n";
  }
  if (!out) throw DatasetError("short write to " + manifest.string());
  return manifest;
}

FeatureDataset load_dataset(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw DatasetError("cannot open manifest " + manifest.string());
  std::string tag, key;
  FeatureDataset d;
  if (!(in >> tag) || tag != kManifestTag) throw DatasetError("not a cmsf feature manifest: " + manifest.string());
  if (!(in >> key >> d.pairs) || key != "pairs") throw DatasetError("manifest: expected 'pairs <count>'");
  if (!(in >> key >> d.N >> d.d_region) || key != "regions") {
    throw DatasetError("manifest: expected 'regions <N> <width>'");
  }
  if (!(in >> key >> d.L >> d.d_word) || key != "words") throw DatasetError("manifest: expected 'words <L> <width>'");
  if (d.pairs == 0 || d.N == 0 || d.L == 0 || d.d_region == 0 || d.d_word == 0) {
    throw DatasetError("manifest: all sizes must be positive");
  }
  const fs::path base = manifest.parent_path();
  std::vector<std::pair<fs::path, fs::path>> files;
  const std::uintmax_t rbytes = d.N * d.d_region * sizeof(float), wbytes = d.L * d.d_word * sizeof(float);
  for (std::size_t p = 0; p < d.pairs; ++p) {
    std::string r, w;
    if (!(in >> r >> w)) throw DatasetError("manifest lists fewer than " + std::to_string(d.pairs) + " pairs");
    files.emplace_back(base / r, base / w);
    for (const auto& [path, bytes] : {std::pair{base / r, rbytes}, std::pair{base / w, wbytes}}) {
      std::error_code ec;
      const auto size = fs::file_size(path, ec);
      if (ec) throw DatasetError("missing feature file " + path.string());
      if (size != bytes) {
        throw DatasetError(path.string() + " holds " + std::to_string(size) + " bytes, expected " +
                           std::to_string(bytes));
      }
    }
  }
  std::string extra;
  if (in >> extra) throw DatasetError("manifest lists more pairs than declared");
  d.regions.resize(d.pairs * d.N * d.d_region);
  d.words.resize(d.pairs * d.L * d.d_word);
  for (std::size_t p = 0; p < d.pairs; ++p) {
    read_floats(files[p].first, d.regions.data() + p * d.N * d.d_region, d.N * d.d_region);
    read_floats(files[p].second, d.words.data() + p * d.L * d.d_word, d.L * d.d_word);
  }
  return d;
}

Split split_pairs(std::size_t pairs, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("validation fraction must lie in [0, 1)");
  std::vector<std::size_t> order(pairs);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed ^ 0x5eed5a1175ULL);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = std::size_t(std::llround(fraction * double(pairs)));
  if (fraction > 0.0 && pairs >= 2) n_val = std::max<std::size_t>(n_val, 1);
  n_val = std::min(n_val, pairs == 0 ? 0 : pairs - 1);
  Split s;
  s.validation.assign(order.begin(), order.begin() + std::ptrdiff_t(n_val));
  s.train.assign(order.begin() + std::ptrdiff_t(n_val), order.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

}  // namespace cmsf

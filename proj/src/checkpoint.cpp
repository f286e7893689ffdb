#include "cmsf/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "cmsf/errors.hpp"

namespace cmsf {

namespace fs = std::filesystem;

namespace {

constexpr const char* kTag = "cmsf-checkpoint v1";

struct ArrayRef {
  Shape shape;
  std::span<float> values;
};

std::string shape_token(const Shape& s) {
  if (s.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

Shape parse_shape(const std::string& token) {
  if (token == "scalar") return {};
  Shape s;
  std::stringstream in(token);
  std::string part;
  while (std::getline(in, part, 'x')) {
    try {
      s.push_back(std::stoull(part));
    } catch (const std::exception&) {
      throw CheckpointError("bad shape '" + token + "' in checkpoint index");
    }
  }
  return s;
}

std::uint32_t swap_if_big(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

// Every array the model (and optionally optimiser) persists, in a fixed
// order. Spans point into the live buffers.
std::vector<std::pair<std::string, ArrayRef>> collect(CmsfModel& model, AdamW* opt) {
  std::vector<std::pair<std::string, ArrayRef>> out;
  auto& store = model.params();
  for (const auto& p : store.params()) {
    Tensor t = p.tensor;
    out.push_back({"param/" + p.name, {t.shape(), t.mutable_data()}});
  }
  for (auto& s : store.stats()) {
    const Shape c{s.stats->mean.size()};
    out.push_back({"bn_mean/" + s.name, {c, s.stats->mean}});
    out.push_back({"bn_var/" + s.name, {c, s.stats->var}});
  }
  if (opt) {
    const auto& params = store.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      out.push_back({"adam_m/" + params[i].name, {params[i].tensor.shape(), opt->first_moments()[i]}});
      out.push_back({"adam_v/" + params[i].name, {params[i].tensor.shape(), opt->second_moments()[i]}});
    }
  }
  return out;
}

struct Parsed {
  CheckpointMeta meta;
  std::map<std::string, std::pair<Shape, std::size_t>> index;
  std::vector<float> blob;
};

std::string expect_line(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError("checkpoint truncated before '" + key + "'");
  if (line.rfind(key + " ", 0) != 0) throw CheckpointError("checkpoint: expected '" + key + "', got '" + line + "'");
  return line.substr(key.size() + 1);
}

Parsed parse(const fs::path& path, bool with_blob) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  Parsed p;
  std::string line;
  if (!std::getline(in, line) || line != kTag) throw CheckpointError(path.string() + " is not a cmsf checkpoint");
  try {
    p.meta.epoch = std::stoull(expect_line(in, "epoch"));
    p.meta.adam_steps = std::stoull(expect_line(in, "adam_steps"));
    std::istringstream dims(expect_line(in, "dims"));
    if (!(dims >> p.meta.d_region >> p.meta.d_word >> p.meta.N >> p.meta.L)) {
      throw CheckpointError("checkpoint: malformed dims line");
    }
    p.meta.best = std::stod(expect_line(in, "best"));
    const std::size_t config_bytes = std::stoull(expect_line(in, "config"));
    p.meta.config_text.resize(config_bytes);
    in.read(p.meta.config_text.data(), std::streamsize(config_bytes));
    const std::size_t arrays = std::stoull(expect_line(in, "arrays"));
    for (std::size_t i = 0; i < arrays; ++i) {
      if (!std::getline(in, line)) throw CheckpointError("checkpoint index truncated");
      std::istringstream row(line);
      std::string name, shape;
      std::size_t offset = 0;
      if (!(row >> name >> shape >> offset)) throw CheckpointError("malformed index row '" + line + "'");
      p.index[name] = {parse_shape(shape), offset};
    }
    const std::size_t count = std::stoull(expect_line(in, "data"));
    for (const auto& [name, entry] : p.index) {
      if (entry.second + shape_numel(entry.first) > count) {
        throw CheckpointError("array " + name + " extends past the data blob");
      }
    }
    if (with_blob) {
      std::vector<std::uint32_t> raw(count);
      in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(count * sizeof(float)));
      if (!in) throw CheckpointError("checkpoint data blob truncated");
      p.blob.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t v = swap_if_big(raw[i]);
        std::memcpy(&p.blob[i], &v, sizeof v);
      }
    }
  } catch (const std::invalid_argument&) {
    throw CheckpointError("checkpoint header has a malformed number");
  } catch (const std::out_of_range&) {
    throw CheckpointError("checkpoint header number out of range");
  }
  return p;
}

}  // namespace

void save_checkpoint(const fs::path& path, CmsfModel& model, AdamW* optimizer, const CheckpointMeta& meta) {
  auto arrays = collect(model, optimizer);
  std::ostringstream head;
  char best[64];
  std::snprintf(best, sizeof best, "%.17g", meta.best);
  head << kTag << "\n"
       << "epoch " << meta.epoch << "\n"
       << "adam_steps " << (optimizer ? optimizer->steps() : meta.adam_steps) << "\n"
       << "dims " << meta.d_region << " " << meta.d_word << " " << meta.N << " " << meta.L << "\n"
       << "best " << best << "\n"
       << "config " << meta.config_text.size() << "\n"
       << meta.config_text << "arrays " << arrays.size() << "\n";
  std::size_t offset = 0;
  for (const auto& [name, ref] : arrays) {
    head << name << " " << shape_token(ref.shape) << " " << offset << "\n";
    offset += ref.values.size();
  }
  head << "data " << offset << "\n";

  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    const std::string h = head.str();
    out.write(h.data(), std::streamsize(h.size()));
    for (const auto& [name, ref] : arrays) {
      std::vector<std::uint32_t> raw(ref.values.size());
      std::memcpy(raw.data(), ref.values.data(), raw.size() * sizeof(float));
      for (auto& v : raw) v = swap_if_big(v);
      out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size() * sizeof(float)));
    }
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

CheckpointMeta read_checkpoint_meta(const fs::path& path) { return parse(path, false).meta; }

CheckpointMeta load_checkpoint(const fs::path& path, CmsfModel& model, AdamW* optimizer) {
  Parsed p = parse(path, true);
  auto arrays = collect(model, optimizer);
  // Check everything before touching the model.
  for (const auto& [name, ref] : arrays) {
    auto it = p.index.find(name);
    if (it == p.index.end()) throw CheckpointError("checkpoint lacks array " + name);
    if (it->second.first != ref.shape) {
      throw CheckpointError("array " + name + " has shape " + shape_str(it->second.first) + ", model expects " +
                            shape_str(ref.shape));
    }
  }
  for (auto& [name, ref] : arrays) {
    const std::size_t off = p.index.at(name).second;
    std::copy_n(p.blob.begin() + std::ptrdiff_t(off), ref.values.size(), ref.values.begin());
  }
  for (auto& s : model.params().stats()) s.stats->initialized = true;
  if (optimizer) optimizer->set_steps(p.meta.adam_steps);
  return p.meta;
}

}  // namespace cmsf

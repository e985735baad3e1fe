#include "lvprune/io/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace lvprune {

namespace {

constexpr std::array<char, 4> kMagic = {'L', 'V', 'P', 'R'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    if (!out_) throw CheckpointError("cannot open " + path + " for writing");
  }
  template <typename T>
  void put(T v) {
    v = to_little(v);
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void bytes(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }
  void close() {
    out_.close();
    if (!out_) throw CheckpointError("failed writing " + path_);
  }

 private:
  std::ofstream out_;
  std::string path_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw CheckpointError("cannot open checkpoint " + path);
  }
  template <typename T>
  T get() {
    T v{};
    bytes(reinterpret_cast<char*>(&v), sizeof v);
    return to_little(v);
  }
  void bytes(char* p, std::size_t n) {
    in_.read(p, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw CheckpointError(path_ + ": truncated checkpoint");
  }
  bool at_end() { return in_.peek() == std::ifstream::traits_type::eof(); }

 private:
  std::ifstream in_;
  std::string path_;
};

CheckpointHeader read_header(Reader& r, const std::string& path) {
  std::array<char, 4> magic{};
  r.bytes(magic.data(), magic.size());
  if (magic != kMagic) throw CheckpointError(path + ": not a checkpoint (bad magic)");
  CheckpointHeader h;
  h.version = r.get<std::uint32_t>();
  if (h.version != kCheckpointVersion) {
    throw CheckpointError(path + ": unsupported checkpoint version " + std::to_string(h.version));
  }
  h.fingerprint = r.get<std::uint64_t>();
  h.rng_seed = r.get<std::uint64_t>();
  h.rng_stream = r.get<std::uint64_t>();
  h.rng_draws = r.get<std::uint64_t>();
  return h;
}

}  // namespace

void save_checkpoint(const std::string& path, const ToyMllm& model, const SeededRng& rng) {
  Writer w(path);
  w.bytes(kMagic.data(), kMagic.size());
  w.put(kCheckpointVersion);
  w.put(model.fingerprint());
  w.put(rng.seed());
  w.put(rng.stream());
  w.put(rng.draws());
  std::uint32_t count = 0;
  model.visit([&count](const std::string&, const Tensor&) { ++count; });
  w.put(count);
  model.visit([&w](const std::string& name, const Tensor& t) {
    w.put(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.put(static_cast<std::uint64_t>(t.rows()));
    w.put(static_cast<std::uint64_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.cols(); ++j) w.put(t(i, j));
    }
  });
  w.close();
}

CheckpointHeader read_checkpoint_header(const std::string& path) {
  Reader r(path);
  return read_header(r, path);
}

SeededRng load_checkpoint(const std::string& path, ToyMllm& model) {
  Reader r(path);
  const CheckpointHeader h = read_header(r, path);
  if (h.fingerprint != model.fingerprint()) {
    throw CheckpointError(path + ": architecture fingerprint mismatch (checkpoint " + std::to_string(h.fingerprint) +
                          ", config " + std::to_string(model.fingerprint()) + ")");
  }
  std::uint32_t expected = 0;
  model.visit([&expected](const std::string&, Tensor&) { ++expected; });
  const auto count = r.get<std::uint32_t>();
  if (count != expected) {
    throw CheckpointError(path + ": " + std::to_string(count) + " tensors, expected " + std::to_string(expected));
  }
  // Read into copies so a failure halfway leaves the model untouched.
  ToyMllm loaded = model;
  loaded.visit([&r, &path](const std::string& name, Tensor& t) {
    const auto len = r.get<std::uint32_t>();
    if (len > 4096) throw CheckpointError(path + ": corrupt tensor name length");
    std::string stored(len, '\0');
    r.bytes(stored.data(), len);
    if (stored != name) throw CheckpointError(path + ": expected tensor " + name + ", found " + stored);
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (rows != static_cast<std::uint64_t>(t.rows()) || cols != static_cast<std::uint64_t>(t.cols())) {
      throw CheckpointError(path + ": tensor " + name + " has shape " + std::to_string(rows) + "x" +
                            std::to_string(cols) + ", expected " + shape_string(t));
    }
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.cols(); ++j) t(i, j) = r.get<double>();
    }
  });
  if (!r.at_end()) throw CheckpointError(path + ": trailing bytes after the last tensor");
  model = std::move(loaded);
  SeededRng rng(h.rng_seed, h.rng_stream);
  rng.discard(h.rng_draws);
  return rng;
}

}  // namespace lvprune

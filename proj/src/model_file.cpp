#include "bgru/model_file.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "bgru/errors.hpp"

namespace bgru {

std::string to_string(ModelMode mode) {
  switch (mode) {
    case ModelMode::Real: return "real";
    case ModelMode::Compressed: return "compressed";
    case ModelMode::Packed: return "packed";
  }
  return "unknown";
}

std::size_t ModelFile::input_dim() const {
  return mode == ModelMode::Packed ? packed.input_dim() : net.input_dim();
}

std::vector<std::size_t> ModelFile::units() const {
  std::vector<std::size_t> u;
  if (mode == ModelMode::Packed) {
    for (const auto& l : packed.layers) u.push_back(l.units());
  } else {
    for (const auto& l : net.layers) u.push_back(l.units());
  }
  return u;
}

std::size_t ModelFile::bins() const {
  return mode == ModelMode::Packed ? packed.bins() : net.bins();
}

namespace {

constexpr char kMagic[4] = {'B', 'G', 'R', 'U'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  void need(std::size_t n) const {
    if (pos_ + n > s_.size()) throw IoError("model file truncated");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(s_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte(pos_ + i)) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte(pos_ + i)) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t pos() const { return pos_; }

 private:
  unsigned char byte(std::size_t i) const { return static_cast<unsigned char>(s_[i]); }
  const std::string& s_;
  std::size_t pos_ = 0;
};

// Matrix shapes in canonical order.
std::vector<std::pair<std::size_t, std::size_t>> matrix_shapes(
    std::size_t input_dim, const std::vector<std::size_t>& units, std::size_t bins) {
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  std::size_t prev = input_dim;
  for (std::size_t k : units) {
    for (std::size_t i = 0; i < GruLayer::kMatrices; ++i) shapes.emplace_back(k, i % 2 == 0 ? prev : k);
    prev = k;
  }
  shapes.emplace_back(bins, prev);
  return shapes;
}

std::size_t header_size(std::size_t layers) {
  return 4 + 4 + 1 + 4 + 4 + 4 * layers + 4 + 8 * (kQadLevels + kQadLevels - 1);
}

void write_packed(Writer& w, const PackedTernaryMatrix& m) {
  if (!m.canonical()) throw DomainError("refusing to save a non-canonical packed matrix");
  w.f64(m.mu);
  for (Word x : m.sign) w.u64(x);
  for (Word x : m.nonzero) w.u64(x);
}

PackedTernaryMatrix read_packed(Reader& r, std::size_t rows, std::size_t cols) {
  PackedTernaryMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.mu = r.f64();
  const std::size_t n = rows * m.words_per_row();
  m.sign.resize(n);
  m.nonzero.resize(n);
  for (auto& x : m.sign) x = r.u64();
  for (auto& x : m.nonzero) x = r.u64();
  if (!m.canonical()) throw IoError("model file: packed matrix is not in canonical form");
  return m;
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v == 0 || v > 0xffffffffu) throw DomainError(std::string("model dimension out of range: ") + what);
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::size_t model_file_size(ModelMode mode, std::size_t input_dim,
                            const std::vector<std::size_t>& units, std::size_t bins) {
  std::size_t size = header_size(units.size());
  for (const auto& [rows, cols] : matrix_shapes(input_dim, units, bins)) {
    if (mode == ModelMode::Packed) {
      size += 8 + 2 * 8 * rows * words_for(cols);
    } else {
      size += 8 * rows * cols;
    }
  }
  return size;
}

std::string serialize_model(const ModelFile& m) {
  if (m.codebook.levels.size() != kQadLevels || m.codebook.thresholds.size() != kQadLevels - 1) {
    throw StateError("model codebook must hold 16 levels and 15 thresholds");
  }
  if (m.mode == ModelMode::Packed) {
    m.packed.validate();
  } else {
    m.net.validate();
  }
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kModelFormatVersion);
  w.u8(static_cast<std::uint8_t>(m.mode));
  const auto units = m.units();
  w.u32(checked_u32(units.size(), "layer count"));
  w.u32(checked_u32(m.input_dim(), "input dim"));
  for (std::size_t k : units) w.u32(checked_u32(k, "units"));
  w.u32(checked_u32(m.bins(), "bins"));
  for (double v : m.codebook.levels) w.f64(v);
  for (double v : m.codebook.thresholds) w.f64(v);
  if (m.mode == ModelMode::Packed) {
    for (const auto& layer : m.packed.layers) {
      for (const auto& mat : layer.w) write_packed(w, mat);
    }
    write_packed(w, m.packed.out);
  } else {
    for (const Mat* p : m.net.parameters()) {
      for (std::size_t i = 0; i < p->size(); ++i) w.f64((*p)[i]);
    }
  }
  return w.take();
}

ModelFile deserialize_model(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IoError("not a BGRU model file (bad magic)");
  }
  Reader r(bytes);
  for (int i = 0; i < 4; ++i) r.u8();
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion) {
    throw IoError("unsupported model format version " + std::to_string(version));
  }
  const std::uint8_t mode = r.u8();
  if (mode > 2) throw IoError("unknown model mode " + std::to_string(mode));
  ModelFile m;
  m.mode = static_cast<ModelMode>(mode);
  const std::uint32_t layers = r.u32();
  if (layers == 0 || layers > 1024) throw IoError("implausible layer count " + std::to_string(layers));
  const std::size_t input_dim = r.u32();
  std::vector<std::size_t> units(layers);
  for (auto& k : units) k = r.u32();
  const std::size_t bins = r.u32();
  if (input_dim == 0 || bins == 0) throw IoError("model file declares a zero dimension");
  for (std::size_t k : units) {
    if (k == 0) throw IoError("model file declares a zero-unit layer");
  }
  const std::size_t expected = model_file_size(m.mode, input_dim, units, bins);
  if (bytes.size() != expected) {
    throw IoError("model file size " + std::to_string(bytes.size()) + " does not match the " +
                  std::to_string(expected) + " bytes its header declares");
  }
  m.codebook.levels.resize(kQadLevels);
  m.codebook.thresholds.resize(kQadLevels - 1);
  for (auto& v : m.codebook.levels) v = r.f64();
  for (auto& v : m.codebook.thresholds) v = r.f64();
  if (!m.codebook.valid()) throw IoError("model file codebook is not ascending");

  const auto shapes = matrix_shapes(input_dim, units, bins);
  if (m.mode == ModelMode::Packed) {
    std::size_t idx = 0;
    m.packed.layers.resize(layers);
    for (auto& layer : m.packed.layers) {
      for (auto& mat : layer.w) {
        mat = read_packed(r, shapes[idx].first, shapes[idx].second);
        ++idx;
      }
    }
    m.packed.out = read_packed(r, shapes[idx].first, shapes[idx].second);
    m.packed.validate();
  } else {
    m.net.layers.resize(layers);
    std::size_t idx = 0;
    auto params = m.net.parameters();
    for (Mat* p : params) {
      Mat mat(shapes[idx].first, shapes[idx].second);
      for (std::size_t i = 0; i < mat.size(); ++i) {
        mat[i] = r.f64();
        if (!std::isfinite(mat[i])) throw IoError("model file holds a non-finite weight");
      }
      *p = std::move(mat);
      ++idx;
    }
    m.net.validate();
  }
  return m;
}

void save_model(const std::filesystem::path& path, const ModelFile& m) {
  const std::string bytes = serialize_model(m);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

ModelFile load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_model(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace bgru

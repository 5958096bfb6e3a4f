// Little-endian binary formats.
//
// State sidecar:
//   "LCST" | version u32 | dim u32 | count u64
//   per record: id_len u32 | id bytes | enc_count u32 | dec_count u32 |
//               (enc_count + dec_count) * dim f32, encoder rows first
//
// Calibrator checkpoint:
//   "LCCK" | version u32 | input_dim u32 | blob_count u64
//   per blob: name_len u32 | name | n u64 | n * f64
//   config_len u64 | config JSON

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lincal/calibrator.hpp"

namespace lincal {
namespace {

constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    if (!out_) throw DataError("cannot write " + path);
  }
  void bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }
  template <typename T>
  void le(T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(buf, sizeof(T));
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void finish() {
    out_.flush();
    if (!out_) throw DataError("write failed for " + path_);
  }

 private:
  std::ofstream out_;
  std::string path_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    data_ = ss.str();
  }
  void bytes(void* dst, std::size_t n) {
    if (pos_ + n > data_.size()) throw DataError(path_ + ": truncated file");
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T le() {
    unsigned char buf[sizeof(T)];
    bytes(buf, sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(buf[i]) << (8 * i));
    return v;
  }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str(std::size_t n) {
    if (pos_ + n > data_.size()) throw DataError(path_ + ": truncated file");
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::string data_;
  std::size_t pos_ = 0;
};

void expect_magic(Reader& r, const char* magic) {
  if (r.str(4) != magic) throw DataError(r.path() + ": bad magic, expected " + magic);
  const auto version = r.le<std::uint32_t>();
  if (version != kVersion) throw DataError(r.path() + ": unsupported version " + std::to_string(version));
}

}  // namespace

void write_state_sidecar(const std::string& path, const StateStore& states) {
  std::uint32_t dim = 0;
  for (const auto& [id, b] : states) {
    if (dim == 0) dim = static_cast<std::uint32_t>(b.dim);
    if (b.dim != dim) throw DataError("state sidecar records disagree on dimension");
  }
  Writer w(path);
  w.bytes("LCST", 4);
  w.le<std::uint32_t>(kVersion);
  w.le<std::uint32_t>(dim);
  w.le<std::uint64_t>(states.size());
  for (const auto& [id, b] : states) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(id.size()));
    w.bytes(id.data(), id.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(b.enc_count()));
    w.le<std::uint32_t>(static_cast<std::uint32_t>(b.dec_count()));
    for (double v : b.enc) w.f32(static_cast<float>(v));
    for (double v : b.dec) w.f32(static_cast<float>(v));
  }
  w.finish();
}

StateStore read_state_sidecar(const std::string& path) {
  Reader r(path);
  expect_magic(r, "LCST");
  const auto dim = r.le<std::uint32_t>();
  const auto count = r.le<std::uint64_t>();
  StateStore store;
  for (std::uint64_t n = 0; n < count; ++n) {
    const auto id_len = r.le<std::uint32_t>();
    std::string id = r.str(id_len);
    StateBundle b;
    b.dim = dim;
    const auto enc = r.le<std::uint32_t>();
    const auto dec = r.le<std::uint32_t>();
    b.enc.resize(static_cast<std::size_t>(enc) * dim);
    b.dec.resize(static_cast<std::size_t>(dec) * dim);
    for (double& v : b.enc) v = r.f32();
    for (double& v : b.dec) v = r.f32();
    if (!store.emplace(std::move(id), std::move(b)).second) throw DataError(path + ": duplicate record id");
  }
  if (!r.at_end()) throw DataError(path + ": trailing bytes after " + std::to_string(count) + " records");
  return store;
}

void CalibratorModel::save(const std::string& path) const {
  std::vector<std::pair<std::string, const std::vector<double>*>> blobs;
  auto blocks = params_.blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) blobs.emplace_back(CalibratorParams::kNames[i], blocks[i]);
  if (embedding_) blobs.emplace_back("embedding", &embedding_->table());

  Writer w(path);
  w.bytes("LCCK", 4);
  w.le<std::uint32_t>(kVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(config_.input_dim));
  w.le<std::uint64_t>(blobs.size());
  for (const auto& [name, data] : blobs) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.le<std::uint64_t>(data->size());
    for (double v : *data) w.f64(v);
  }
  const std::string config = config_.to_json().dump();
  w.le<std::uint64_t>(config.size());
  w.bytes(config.data(), config.size());
  w.finish();
}

CalibratorModel CalibratorModel::load(const std::string& path) {
  Reader r(path);
  expect_magic(r, "LCCK");
  const auto input_dim = r.le<std::uint32_t>();
  const auto blob_count = r.le<std::uint64_t>();
  std::map<std::string, std::vector<double>> blobs;
  for (std::uint64_t i = 0; i < blob_count; ++i) {
    std::string name = r.str(r.le<std::uint32_t>());
    std::vector<double> data(r.le<std::uint64_t>());
    for (double& v : data) v = r.f64();
    blobs[std::move(name)] = std::move(data);
  }
  const auto config_len = r.le<std::uint64_t>();
  Json cj = Json::parse(r.str(config_len), nullptr, false);
  if (cj.is_discarded()) throw DataError(path + ": malformed config trailer");

  CalibratorModel model;
  model.config_ = CalibratorConfig::from_json(cj);
  model.config_.validate();
  if (model.config_.input_dim != input_dim) throw DataError(path + ": header and config disagree on input_dim");
  const std::size_t h = model.config_.hidden_dim;
  const std::array<std::size_t, 6> sizes = {input_dim * h, h, h * h, h, h * 2, 2};
  auto blocks = model.params_.blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto it = blobs.find(CalibratorParams::kNames[i]);
    if (it == blobs.end()) throw DataError(path + ": missing parameter blob " + CalibratorParams::kNames[i]);
    if (it->second.size() != sizes[i]) throw DataError(path + ": wrong size for " + CalibratorParams::kNames[i]);
    *blocks[i] = std::move(it->second);
  }
  if (auto it = blobs.find("embedding"); it != blobs.end()) {
    if (it->second.size() != HashedEmbedding::kBuckets * input_dim) throw DataError(path + ": wrong embedding size");
    model.embedding_.emplace(input_dim, 0);
    model.embedding_->table() = std::move(it->second);
  }
  return model;
}

}  // namespace lincal

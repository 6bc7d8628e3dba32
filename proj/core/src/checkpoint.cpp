#include "dpl/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dpl {

namespace {

constexpr std::array<unsigned char, 8> kMagic = {'D', 'P', 'L', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    out_.insert(out_.end(), p, p + n);
  }

  template <typename T>
  void scalar(T value) {
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    bytes(raw, sizeof(T));
  }

  void u32(std::uint32_t v) { scalar(v); }
  void u64(std::uint64_t v) { scalar(v); }
  void f64(double v) { scalar(v); }

  std::vector<unsigned char> take() { return std::move(out_); }

 private:
  std::vector<unsigned char> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& in) : in_(in) {}

  void bytes(void* dst, std::size_t n) {
    if (pos_ + n > in_.size()) throw IoError("checkpoint truncated");
    std::memcpy(dst, in_.data() + pos_, n);
    pos_ += n;
  }

  template <typename T>
  T scalar() {
    unsigned char raw[sizeof(T)];
    bytes(raw, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

  std::uint32_t u32() { return scalar<std::uint32_t>(); }
  std::uint64_t u64() { return scalar<std::uint64_t>(); }
  double f64() { return scalar<double>(); }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<unsigned char>& in_;
  std::size_t pos_ = 0;
};

void write_model(Writer& w, const EncoderModel& model) {
  w.bytes(kMagic.data(), kMagic.size());
  w.u32(kCheckpointVersion);
  w.u32(model.form() == ClassifierForm::joint ? 0 : 1);
  w.u32(model.extended() ? 1 : 0);
  const auto& d = model.dims();
  for (int v : {d.input, d.hidden, d.embedding, d.n_ind, d.n_ood}) w.u32(static_cast<std::uint32_t>(v));
  w.f64(model.dropout_rate());
  w.u32(14);
  model.parameters().visit([&](std::string_view, const auto& t) {
    w.u64(static_cast<std::uint64_t>(t.size()));
    for (Eigen::Index i = 0; i < t.size(); ++i) w.f64(t.data()[i]);
  });
}

}  // namespace

std::vector<unsigned char> serialize_checkpoint(const EncoderModel& model, const PrototypeBank* bank) {
  Writer w;
  write_model(w, model);
  w.u32(bank ? 1 : 0);
  if (bank) {
    w.u32(static_cast<std::uint32_t>(bank->n_classes()));
    w.u32(static_cast<std::uint32_t>(bank->dim()));
    w.u32(static_cast<std::uint32_t>(bank->n_ind()));
    w.f64(bank->gamma());
    const auto& rows = bank->rows();
    for (Eigen::Index i = 0; i < rows.size(); ++i) w.f64(rows.data()[i]);
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
  Reader r(bytes);
  std::array<unsigned char, 8> magic{};
  r.bytes(magic.data(), magic.size());
  if (magic != kMagic) throw IoError("not a dpl checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto form = r.u32() == 0 ? ClassifierForm::joint : ClassifierForm::two_head;
  const bool extended = r.u32() != 0;
  EncoderDims dims;
  dims.input = static_cast<int>(r.u32());
  dims.hidden = static_cast<int>(r.u32());
  dims.embedding = static_cast<int>(r.u32());
  dims.n_ind = static_cast<int>(r.u32());
  dims.n_ood = static_cast<int>(r.u32());
  const double dropout = r.f64();
  if (r.u32() != 14) throw IoError("checkpoint tensor count mismatch");

  const int h = dims.hidden;
  const int head_rows = form == ClassifierForm::joint && extended ? dims.n_ind + dims.n_ood : dims.n_ind;
  const bool ood_head = form == ClassifierForm::two_head && extended;
  Parameters p;
  p.enc_w1.resize(h, dims.input);
  p.enc_b1.resize(h);
  p.enc_w2.resize(h, h);
  p.enc_b2.resize(h);
  p.proj_w1.resize(h, h);
  p.proj_b1.resize(h);
  p.proj_w2.resize(dims.embedding, h);
  p.proj_b2.resize(dims.embedding);
  p.cls_w.resize(head_rows, h);
  p.cls_b.resize(head_rows);
  p.ood_w1.resize(ood_head ? h : 0, ood_head ? h : 0);
  p.ood_b1.resize(ood_head ? h : 0);
  p.ood_w2.resize(ood_head ? dims.n_ood : 0, ood_head ? h : 0);
  p.ood_b2.resize(ood_head ? dims.n_ood : 0);
  p.visit([&](std::string_view name, auto& t) {
    const auto count = r.u64();
    if (count != static_cast<std::uint64_t>(t.size())) {
      throw IoError("checkpoint tensor " + std::string(name) + " has unexpected size");
    }
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = r.f64();
  });

  Checkpoint ckpt{EncoderModel(dims, dropout, form, extended, std::move(p)), std::nullopt};
  if (r.u32() != 0) {
    const auto rows = static_cast<Eigen::Index>(r.u32());
    const auto cols = static_cast<Eigen::Index>(r.u32());
    const int n_ind = static_cast<int>(r.u32());
    const double gamma = r.f64();
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64();
    ckpt.bank.emplace(std::move(m), n_ind, gamma);
  }
  if (!r.done()) throw IoError("trailing bytes after checkpoint payload");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const EncoderModel& model,
                     const PrototypeBank* bank) {
  const auto bytes = serialize_checkpoint(model, bank);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

std::uint64_t model_digest(const EncoderModel& model) {
  Writer w;
  write_model(w, model);
  const auto bytes = w.take();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace dpl

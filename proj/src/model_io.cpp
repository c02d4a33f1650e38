#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "copilot/classifier.hpp"

namespace copilot {

namespace {

constexpr char kMagic[4] = {'T', 'C', 'L', 'M'};
constexpr std::uint32_t kVersion = 1;

// Everything little-endian regardless of host.
class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void u32(std::uint32_t v) { bytes(v, 4); }
  void u64(std::uint64_t v) { bytes(v, 8); }
  void f64(double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    u64(v);
  }
  void f32(float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    u32(v);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void raw(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }

 private:
  void bytes(std::uint64_t v, int n) {
    char buf[8];
    for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out_.write(buf, n);
  }
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
  std::uint64_t u64() { return bytes(8); }
  double f64() {
    const std::uint64_t v = u64();
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
  float f32() {
    const std::uint32_t v = u32();
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  std::string str() {
    const auto n = u32();
    if (n > 4096) fail("string field too long");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  void raw(char* p, std::size_t n) {
    in_.read(p, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated model file");
    offset_ += n;
  }
  [[noreturn]] void fail(const std::string& what) const { throw IoError(what, offset_); }

 private:
  std::uint64_t bytes(int n) {
    unsigned char buf[8];
    raw(reinterpret_cast<char*>(buf), static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = n - 1; i >= 0; --i) v = (v << 8) | buf[i];
    return v;
  }
  std::istream& in_;
  std::size_t offset_ = 0;
};

}  // namespace

void save_model(std::ostream& out, const ClassifierModel& m) {
  if (m.weights.size() != kFeatureDim) throw InvalidArgument("model has wrong feature dimension");
  Writer w(out);
  w.raw(kMagic, 4);
  w.u32(kVersion);
  w.str(m.label);
  w.u64(m.hash_seed);
  w.u32(kFeatureBits);
  w.f64(m.threshold);
  w.f64(m.bias);
  w.f64(m.hyper.beta);
  w.f64(m.hyper.learning_rate);
  w.f64(m.hyper.l2);
  w.u32(static_cast<std::uint32_t>(m.hyper.epochs));
  w.u32(static_cast<std::uint32_t>(m.hyper.batch_size));
  w.u64(m.train_seed);
  w.f64(m.validation_loss);
  w.f64(m.test_f1);
  std::uint32_t nnz = 0;
  for (float x : m.weights) nnz += x != 0.0f;
  w.u32(nnz);
  for (std::uint32_t i = 0; i < kFeatureDim; ++i) {
    if (m.weights[i] == 0.0f) continue;
    w.u32(i);
    w.f32(m.weights[i]);
  }
  if (!out) throw IoError("failed writing model '" + m.label + "'", 0);
}

ClassifierModel load_model(std::istream& in) {
  Reader r(in);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) r.fail("not a classifier model (bad magic)");
  if (const auto v = r.u32(); v != kVersion) r.fail("unsupported model version " + std::to_string(v));
  ClassifierModel m;
  m.label = r.str();
  if (!is_known_label(m.label)) r.fail("unknown label '" + m.label + "'");
  m.hash_seed = r.u64();
  if (const auto bits = r.u32(); bits != kFeatureBits) {
    r.fail("model uses " + std::to_string(bits) + " feature bits, expected " + std::to_string(kFeatureBits));
  }
  m.threshold = r.f64();
  m.bias = r.f64();
  m.hyper.beta = r.f64();
  m.hyper.learning_rate = r.f64();
  m.hyper.l2 = r.f64();
  m.hyper.epochs = static_cast<int>(r.u32());
  m.hyper.batch_size = r.u32();
  m.train_seed = r.u64();
  m.validation_loss = r.f64();
  m.test_f1 = r.f64();
  const auto nnz = r.u32();
  if (nnz > kFeatureDim) r.fail("too many weights");
  m.weights.assign(kFeatureDim, 0.0f);
  for (std::uint32_t k = 0; k < nnz; ++k) {
    const auto i = r.u32();
    if (i >= kFeatureDim) r.fail("weight index out of range");
    m.weights[i] = r.f32();
  }
  return m;
}

void save_models(const std::filesystem::path& dir, const ModelSet& set) {
  std::filesystem::create_directories(dir);
  for (const auto& m : set.models()) {
    const auto path = dir / (m.label + ".tclm");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string(), 0);
    save_model(out, m);
  }
}

ModelSet load_models(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("no model directory " + dir.string(), 0);
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".tclm") files.push_back(entry.path());
  }
  // Taxonomy order, not directory order.
  const auto& names = all_label_names();
  std::sort(files.begin(), files.end(), [&](const auto& a, const auto& b) {
    const auto ia = std::find(names.begin(), names.end(), a.stem().string());
    const auto ib = std::find(names.begin(), names.end(), b.stem().string());
    return ia != ib ? ia < ib : a < b;
  });
  ModelSet set;
  for (const auto& path : files) {
    std::ifstream in(path, std::ios::binary);
    try {
      set.add(load_model(in));
    } catch (const Error& e) {
      throw Error(path.string() + ": " + e.what());
    }
  }
  if (set.size() == 0) throw IoError("no .tclm models in " + dir.string(), 0);
  return set;
}

}  // namespace copilot

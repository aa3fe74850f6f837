#include "coughgan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "coughgan/error.hpp"

namespace coughgan {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'A', 'C', 'G', 'N'};

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    T value;
    std::memcpy(&value, take(sizeof(T), what), sizeof(T));
    return value;
  }

  const char* take(std::size_t n, const char* what) {
    if (n > bytes_.size() - pos_) throw FormatError(std::string("checkpoint truncated while reading ") + what);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* ModelCheckpoint::find(const std::string& name) const {
  for (const auto& [n, t] : entries)
    if (n == name) return &t;
  return nullptr;
}

const Tensor& ModelCheckpoint::at(const std::string& name) const {
  if (const Tensor* t = find(name)) return *t;
  throw FormatError("checkpoint has no entry '" + name + "'");
}

std::string serialize_checkpoint(const ModelCheckpoint& ckpt) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string meta = ckpt.metadata.dump();
  put<std::uint64_t>(out, meta.size());
  out += meta;
  put<std::uint64_t>(out, ckpt.entries.size());
  for (const auto& [name, t] : ckpt.entries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.ptr()), t.size() * sizeof(double));
  }
  return out;
}

ModelCheckpoint parse_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(4, "magic"), kMagic, 4) != 0) throw FormatError("not an ACGN checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));

  ModelCheckpoint ckpt;
  const auto meta_len = r.get<std::uint64_t>("metadata length");
  const char* meta = r.take(meta_len, "metadata");
  try {
    ckpt.metadata = nlohmann::json::parse(meta, meta + meta_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }

  const auto count = r.get<std::uint64_t>("entry count");
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto name_len = r.get<std::uint32_t>("entry name length");
    std::string name(r.take(name_len, "entry name"), name_len);
    const auto rank = r.get<std::uint32_t>("entry rank");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.get<std::uint64_t>("entry dims");
      if (d != 0 && n > (bytes.size() / sizeof(double)) / d) throw FormatError("entry '" + name + "' is too large");
      n *= d;
    }
    std::vector<double> values(n);
    std::memcpy(values.data(), r.take(n * sizeof(double), "entry data"), n * sizeof(double));
    ckpt.entries.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw FormatError("trailing bytes after the last checkpoint entry");
  return ckpt;
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

void store_network(ModelCheckpoint& ckpt, nn::Network& net) {
  for (const auto& p : net.parameters()) ckpt.add(p.name, *p.value);
  for (const auto& b : net.buffers()) ckpt.add(b.name, *b.value);
}

namespace {
void assign(const ModelCheckpoint& ckpt, const std::string& name, Tensor& dst) {
  const Tensor& src = ckpt.at(name);
  if (src.shape() != dst.shape())
    throw FormatError("checkpoint entry '" + name + "' has shape " + shape_string(src.shape()) + ", model expects " +
                      shape_string(dst.shape()));
  dst = src;
}
}  // namespace

void restore_network(const ModelCheckpoint& ckpt, nn::Network& net) {
  for (const auto& p : net.parameters()) assign(ckpt, p.name, *p.value);
  for (const auto& b : net.buffers()) assign(ckpt, b.name, *b.value);
}

void store_adam(ModelCheckpoint& ckpt, const std::string& prefix, const nn::AdamState& state,
                std::span<const nn::ParamRef> params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    ckpt.add(prefix + ".m." + params[i].name, state.m[i]);
    ckpt.add(prefix + ".v." + params[i].name, state.v[i]);
  }
  ckpt.add(prefix + ".step", Tensor({1}, static_cast<double>(state.step)));
}

void restore_adam(const ModelCheckpoint& ckpt, const std::string& prefix, nn::AdamState& state,
                  std::span<const nn::ParamRef> params) {
  state.m.resize(params.size());
  state.v.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = Tensor::zeros_like(*params[i].value);
    state.v[i] = Tensor::zeros_like(*params[i].value);
    assign(ckpt, prefix + ".m." + params[i].name, state.m[i]);
    assign(ckpt, prefix + ".v." + params[i].name, state.v[i]);
  }
  state.step = static_cast<std::uint64_t>(ckpt.at(prefix + ".step")[0]);
}

}  // namespace coughgan

#include "mmssl/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <utility>

namespace mmssl {

void ArchConfig::validate() const {
  if (image_hidden <= 0 || enc_dim <= 0 || token_dim <= 0 || proj_hidden <= 0 || embed_dim <= 0 || heads <= 0) {
    throw ConfigError("architecture sizes must be positive");
  }
  if (embed_dim % heads != 0) throw ConfigError("embedding dimension must be divisible by the head count");
}

Model::Model(const DatasetDims& d, const ArchConfig& a)
    : data(d),
      arch((a.validate(), a)),
      image(d.grid, a.image_hidden, a.enc_dim),
      text(d.vocab, a.token_dim, a.enc_dim),
      image_head(a.enc_dim, a.proj_hidden, a.embed_dim),
      text_head(a.enc_dim, a.proj_hidden, a.embed_dim),
      coattention(a.embed_dim, a.heads) {}

void Model::init(std::uint64_t seed) {
  image.init(derive_seed(seed, "model.image"));
  text.init(derive_seed(seed, "model.text"));
  image_head.init(derive_seed(seed, "model.image_head"));
  text_head.init(derive_seed(seed, "model.text_head"));
  coattention.init(derive_seed(seed, "model.coattention"));
}

void Model::freeze_encoders(bool frozen) {
  image.set_frozen(frozen);
  text.set_frozen(frozen);
}

bool Model::encoders_frozen() const {
  bool all = true;
  visit_encoders([&](const std::string&, const Parameter& p) { all = all && p.frozen; });
  return all;
}

void Model::visit(const ParameterVisitor& f) {
  image.visit("image.", f);
  text.visit("text.", f);
  image_head.visit("image_head.", f);
  text_head.visit("text_head.", f);
  coattention.visit("coattention.", f);
}

void Model::visit(const ConstParameterVisitor& f) const {
  image.visit("image.", f);
  text.visit("text.", f);
  image_head.visit("image_head.", f);
  text_head.visit("text_head.", f);
  coattention.visit("coattention.", f);
}

void Model::visit_encoders(const ConstParameterVisitor& f) const {
  image.visit("image.", f);
  text.visit("text.", f);
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  visit(ParameterVisitor([&](const std::string&, Parameter& p) { out.push_back(&p); }));
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  visit(ConstParameterVisitor([&](const std::string&, const Parameter& p) { n += static_cast<std::size_t>(p.value.size()); }));
  return n;
}

std::vector<unsigned char> Model::encoder_bytes() const {
  std::vector<unsigned char> bytes;
  visit_encoders([&](const std::string&, const Parameter& p) {
    auto d = p.value.data();
    const auto* b = reinterpret_cast<const unsigned char*>(d.data());
    bytes.insert(bytes.end(), b, b + d.size_bytes());
  });
  return bytes;
}

// ---------------------------------------------------------------------------
// Checkpoint IO

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr char kMagic[8] = {'M', 'M', 'S', 'S', 'L', 'C', 'K', 'P'};

class HashingWriter {
 public:
  explicit HashingWriter(std::ostream& out) : out_(out) {}

  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= b[i];
      hash_ *= 0x100000001b3ULL;
    }
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  template <typename T>
  void pod(T v) {
    bytes(&v, sizeof v);
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  std::uint64_t hash() const noexcept { return hash_; }

 private:
  std::ostream& out_;
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

class HashingReader {
 public:
  explicit HashingReader(std::istream& in) : in_(in) {}

  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError("checkpoint truncated");
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= b[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str(std::size_t max_len = 4096) {
    const auto n = pod<std::uint64_t>();
    if (n > max_len) throw FormatError("checkpoint string field too long (corrupted?)");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::uint64_t hash() const noexcept { return hash_; }

 private:
  std::istream& in_;
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

}  // namespace

void write_checkpoint(std::ostream& out, const Model& model) {
  HashingWriter w(out);
  w.bytes(kMagic, sizeof kMagic);
  w.pod<std::uint32_t>(kCheckpointFormatVersion);
  w.str(model.method);
  const auto& d = model.data;
  for (Index v : {d.grid.height, d.grid.width, d.grid.channels, d.vocab, d.seq_len, d.classes}) w.pod<std::int64_t>(v);
  const auto& a = model.arch;
  for (Index v : {a.image_hidden, a.enc_dim, a.token_dim, a.proj_hidden, a.embed_dim, a.heads}) w.pod<std::int64_t>(v);

  std::uint64_t count = 0;
  model.visit(ConstParameterVisitor([&](const std::string&, const Parameter&) { ++count; }));
  w.pod<std::uint64_t>(count);
  model.visit(ConstParameterVisitor([&](const std::string& name, const Parameter& p) {
    w.str(name);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(p.value.rank()));
    for (Index e : p.value.shape()) w.pod<std::int64_t>(e);
    auto data = p.value.data();
    w.bytes(data.data(), data.size_bytes());
  }));
  const std::uint64_t checksum = w.hash();
  out.write(reinterpret_cast<const char*>(&checksum), sizeof checksum);
  if (!out) throw IoError("checkpoint write failed");
}

Model read_checkpoint(std::istream& in) {
  HashingReader r(in);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw FormatError("not a checkpoint file (bad magic)");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointFormatVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::string method = r.str();
  DatasetDims d;
  d.grid.height = r.pod<std::int64_t>();
  d.grid.width = r.pod<std::int64_t>();
  d.grid.channels = r.pod<std::int64_t>();
  d.vocab = r.pod<std::int64_t>();
  d.seq_len = r.pod<std::int64_t>();
  d.classes = r.pod<std::int64_t>();
  ArchConfig a;
  a.image_hidden = r.pod<std::int64_t>();
  a.enc_dim = r.pod<std::int64_t>();
  a.token_dim = r.pod<std::int64_t>();
  a.proj_hidden = r.pod<std::int64_t>();
  a.embed_dim = r.pod<std::int64_t>();
  a.heads = r.pod<std::int64_t>();
  constexpr Index kMaxExtent = Index{1} << 24;
  for (Index v : {d.grid.height, d.grid.width, d.grid.channels, d.vocab, d.seq_len, d.classes, a.image_hidden,
                  a.enc_dim, a.token_dim, a.proj_hidden, a.embed_dim, a.heads}) {
    if (v <= 0 || v > kMaxExtent) throw FormatError("checkpoint dimensions are corrupted");
  }

  Model model = [&] {
    try {
      return Model(d, a);
    } catch (const ConfigError& e) {
      throw FormatError(std::string("checkpoint architecture invalid: ") + e.what());
    }
  }();
  model.method = method;

  std::uint64_t expected = 0;
  std::as_const(model).visit(ConstParameterVisitor([&](const std::string&, const Parameter&) { ++expected; }));
  if (r.pod<std::uint64_t>() != expected) throw FormatError("checkpoint parameter count mismatch");
  model.visit(ParameterVisitor([&](const std::string& name, Parameter& p) {
    if (r.str() != name) throw FormatError("checkpoint parameter order mismatch at " + name);
    const auto rank = r.pod<std::uint32_t>();
    if (rank != static_cast<std::uint32_t>(p.value.rank())) throw FormatError("rank mismatch for " + name);
    for (Index e : p.value.shape()) {
      if (r.pod<std::int64_t>() != e) throw FormatError("shape mismatch for " + name);
    }
    auto data = p.value.data();
    r.bytes(data.data(), data.size_bytes());
  }));
  const std::uint64_t computed = r.hash();
  std::uint64_t stored = 0;
  in.read(reinterpret_cast<char*>(&stored), sizeof stored);
  if (in.gcount() != sizeof stored) throw FormatError("checkpoint truncated (missing checksum)");
  if (stored != computed) throw FormatError("checkpoint checksum mismatch (corrupted file)");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint");
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  write_checkpoint(out, model);
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace mmssl

#include "mmssl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "mmssl/rng.hpp"

namespace mmssl {

void GenSpec::validate() const {
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in [0, 1]");
  if (latent_dim <= 0 || classes <= 1 || grid.height <= 0 || grid.width <= 0 || grid.channels <= 0 ||
      seq_len <= 0) {
    throw ConfigError("generator dimensions must be positive (and at least two classes)");
  }
  if (vocab < 2) throw ConfigError("vocabulary must contain padding plus at least one token");
}

std::vector<Index> Dataset::labels() const {
  std::vector<Index> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

Token synonym_partner(Token t) { return t >= 2 ? (t ^ 1U) : t; }

namespace {

Matrix gaussian_matrix(Index rows, Index cols, double sd, Rng& rng) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

SyntheticWorld::SyntheticWorld(const GenSpec& spec) : spec_(spec) {
  spec.validate();
  const Index k = spec.latent_dim;
  auto rng = make_rng(spec.seed, "world");
  image_map_ = gaussian_matrix(spec.grid.flat(), k, 1.0 / std::sqrt(static_cast<double>(k)), rng);
  class_map_ = gaussian_matrix(spec.classes, k, 1.0, rng);
  // Synonym pairs share a base direction.
  vocab_map_ = Matrix::Zero(spec.vocab, k);
  Matrix base = gaussian_matrix(spec.vocab, k, 1.0 / std::sqrt(static_cast<double>(k)), rng);
  Matrix jitter = gaussian_matrix(spec.vocab, k, 0.1 / std::sqrt(static_cast<double>(k)), rng);
  for (Index t = 1; t < spec.vocab; ++t) {
    const auto root = static_cast<Index>(std::min(static_cast<Token>(t), synonym_partner(static_cast<Token>(t))));
    vocab_map_.row(t) = 2.0 * base.row(root) + jitter.row(t);
  }
}

Eigen::VectorXd SyntheticWorld::draw_latent(Rng& rng) const {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd z(spec_.latent_dim);
  for (Index i = 0; i < z.size(); ++i) z(i) = n(rng);
  return z;
}

Index SyntheticWorld::label(const Eigen::VectorXd& z) const {
  Eigen::VectorXd scores = class_map_ * z;
  Index best = 0;
  for (Index c = 1; c < scores.size(); ++c) {
    if (scores(c) > scores(best)) best = c;
  }
  return best;
}

Tensor SyntheticWorld::image(const Eigen::VectorXd& z, Rng& noise_rng) const {
  const GridDims& g = spec_.grid;
  Eigen::VectorXd clean = image_map_ * z;
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(g.height, g.width * g.channels);
  for (Index i = 0; i < clean.size(); ++i) {
    const double noise = n(noise_rng);
    m.data()[i] = (1.0 - spec_.eta) * clean(i) + spec_.eta * noise;
  }
  return Tensor({g.height, g.width, g.channels}, std::move(m));
}

Eigen::VectorXd SyntheticWorld::token_distribution(const Eigen::VectorXd& z) const {
  const Index v = spec_.vocab;
  Eigen::VectorXd logits = vocab_map_.bottomRows(v - 1) * z;
  Eigen::VectorXd p = (logits.array() - logits.maxCoeff()).exp();
  p /= p.sum();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(v);
  out.tail(v - 1) = (1.0 - spec_.eta) * p.array() + spec_.eta / static_cast<double>(v - 1);
  return out;
}

std::vector<Token> SyntheticWorld::tokens(const Eigen::VectorXd& z, Rng& rng) const {
  const Eigen::VectorXd p = token_distribution(z);
  std::discrete_distribution<Token> pick(p.data(), p.data() + p.size());
  const Index lo = std::max<Index>(1, (spec_.seq_len + 1) / 2);
  const auto len = std::uniform_int_distribution<Index>(lo, spec_.seq_len)(rng);
  std::vector<Token> out(static_cast<std::size_t>(spec_.seq_len), kPadToken);
  for (Index i = 0; i < len; ++i) out[static_cast<std::size_t>(i)] = pick(rng);
  return out;
}

PairedSample SyntheticWorld::sample(std::int64_t id) const {
  auto rng = make_rng(spec_.seed, "sample", {static_cast<std::uint64_t>(id)});
  PairedSample s;
  s.id = id;
  const Eigen::VectorXd z = draw_latent(rng);
  s.label = label(z);
  s.image = image(z, rng);
  s.tokens = tokens(z, rng);
  return s;
}

Dataset generate(const GenSpec& spec) {
  SyntheticWorld world(spec);
  Dataset d;
  d.dims = DatasetDims{spec.grid, spec.vocab, spec.seq_len, spec.classes};
  d.samples.reserve(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) d.samples.push_back(world.sample(static_cast<std::int64_t>(i)));
  return d;
}

// ---------------------------------------------------------------------------
// Text format
//
//   mmssl-dataset 1
//   dims height=H width=W channels=C vocab=V seq_len=L classes=K count=N
//   sample id=I label=Y tokens=t,t,... image=x,x,...     (N lines)
//   end

namespace {

constexpr const char* kMagic = "mmssl-dataset";

void append_double(std::string& out, double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, p);
}

template <typename T>
T parse_number(std::string_view s, std::size_t line, const char* what) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw ParseError(std::string("invalid ") + what + " '" + std::string(s) + "'", line);
  }
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  while (true) {
    const auto pos = s.find(sep);
    out.push_back(s.substr(0, pos));
    if (pos == std::string_view::npos) break;
    s.remove_prefix(pos + 1);
  }
  return out;
}

/// Splits "tag k1=v1 k2=v2" and checks the tag and key order.
std::vector<std::string_view> fields(std::string_view line_text, std::size_t line, std::string_view tag,
                                     std::initializer_list<std::string_view> keys) {
  auto parts = split(line_text, ' ');
  if (parts.size() != keys.size() + 1 || parts[0] != tag) {
    throw ParseError("expected '" + std::string(tag) + "' record with " + std::to_string(keys.size()) + " fields",
                     line);
  }
  std::vector<std::string_view> values;
  std::size_t i = 1;
  for (auto key : keys) {
    auto part = parts[i++];
    if (part.size() <= key.size() || part.substr(0, key.size()) != key || part[key.size()] != '=') {
      throw ParseError("expected field '" + std::string(key) + "='", line);
    }
    values.push_back(part.substr(key.size() + 1));
  }
  return values;
}

}  // namespace

void write_dataset(std::ostream& out, const Dataset& data) {
  const auto& d = data.dims;
  out << kMagic << ' ' << kDatasetFormatVersion << '\n';
  out << "dims height=" << d.grid.height << " width=" << d.grid.width << " channels=" << d.grid.channels
      << " vocab=" << d.vocab << " seq_len=" << d.seq_len << " classes=" << d.classes << " count=" << data.size()
      << '\n';
  std::string line;
  for (const auto& s : data.samples) {
    line.clear();
    line += "sample id=" + std::to_string(s.id) + " label=" + std::to_string(s.label) + " tokens=";
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      if (i) line += ',';
      line += std::to_string(s.tokens[i]);
    }
    line += " image=";
    auto values = s.image.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) line += ',';
      append_double(line, values[i]);
    }
    out << line << '\n';
  }
  out << "end\n";
}

Dataset read_dataset(std::istream& in) {
  std::string text;
  std::size_t line = 0;
  auto next = [&]() -> bool {
    if (!std::getline(in, text)) return false;
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    return true;
  };

  if (!next()) throw FormatError("empty dataset file");
  {
    auto parts = split(text, ' ');
    if (parts.size() != 2 || parts[0] != kMagic) throw FormatError("not a dataset file (bad header)");
    const int version = parse_number<int>(parts[1], line, "version");
    if (version != kDatasetFormatVersion) {
      throw FormatError("unsupported dataset format version " + std::to_string(version));
    }
  }

  if (!next()) throw ParseError("missing dims record", line + 1);
  auto dv = fields(text, line, "dims", {"height", "width", "channels", "vocab", "seq_len", "classes", "count"});
  Dataset data;
  data.dims.grid.height = parse_number<Index>(dv[0], line, "height");
  data.dims.grid.width = parse_number<Index>(dv[1], line, "width");
  data.dims.grid.channels = parse_number<Index>(dv[2], line, "channels");
  data.dims.vocab = parse_number<Index>(dv[3], line, "vocab");
  data.dims.seq_len = parse_number<Index>(dv[4], line, "seq_len");
  data.dims.classes = parse_number<Index>(dv[5], line, "classes");
  const auto count = parse_number<std::size_t>(dv[6], line, "count");
  const auto& g = data.dims.grid;
  if (g.height <= 0 || g.width <= 0 || g.channels <= 0 || data.dims.vocab <= 0 || data.dims.seq_len <= 0 ||
      data.dims.classes <= 0) {
    throw ParseError("dimensions must be positive", line);
  }

  data.samples.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    if (!next()) throw ParseError("file truncated: expected " + std::to_string(count) + " samples, got " + std::to_string(n), line + 1);
    auto sv = fields(text, line, "sample", {"id", "label", "tokens", "image"});
    PairedSample s;
    s.id = parse_number<std::int64_t>(sv[0], line, "id");
    s.label = parse_number<Index>(sv[1], line, "label");
    if (s.label < 0 || s.label >= data.dims.classes) throw ParseError("label out of range", line);
    for (auto t : split(sv[2], ',')) {
      const auto tok = parse_number<Token>(t, line, "token");
      if (tok >= static_cast<Token>(data.dims.vocab)) throw ParseError("token id outside vocabulary", line);
      s.tokens.push_back(tok);
    }
    if (static_cast<Index>(s.tokens.size()) != data.dims.seq_len) throw ParseError("token sequence has wrong length", line);
    auto values = split(sv[3], ',');
    if (static_cast<Index>(values.size()) != g.flat()) throw ParseError("image has wrong number of values", line);
    Matrix m(g.height, g.width * g.channels);
    for (std::size_t i = 0; i < values.size(); ++i) m.data()[i] = parse_number<double>(values[i], line, "image value");
    s.image = Tensor({g.height, g.width, g.channels}, std::move(m));
    data.samples.push_back(std::move(s));
  }
  if (!next() || text != "end") throw ParseError("missing 'end' record (file truncated?)", line + 1);
  return data;
}

void save(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset " + path.string());
  write_dataset(out, data);
  if (!out) throw IoError("write failed for " + path.string());
}

Dataset load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path.string());
  return read_dataset(in);
}

Dataset subset(const Dataset& data, std::span<const std::size_t> indices) {
  Dataset out;
  out.dims = data.dims;
  out.samples.reserve(indices.size());
  for (std::size_t i : indices) out.samples.push_back(data.samples.at(i));
  return out;
}

IndexSplit stratified_split(std::span<const Index> labels, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("label fraction must lie in (0, 1]");
  std::map<Index, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  IndexSplit split;
  for (auto& [label, members] : by_class) {
    auto rng = make_rng(seed, "stratify", {static_cast<std::uint64_t>(label)});
    std::shuffle(members.begin(), members.end(), rng);
    const auto take = fraction == 1.0 ? members.size()
                                      : static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
    if (take == 0) {
      throw StratificationError("fraction " + std::to_string(fraction) + " selects no sample of class " +
                                std::to_string(label) + " (" + std::to_string(members.size()) + " available)");
    }
    split.selected.insert(split.selected.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    split.rest.insert(split.rest.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
  }
  std::sort(split.selected.begin(), split.selected.end());
  std::sort(split.rest.begin(), split.rest.end());
  return split;
}

FractionSplit label_fraction_split(const Dataset& data, double fraction, std::uint64_t seed) {
  const auto labels = data.labels();
  const auto split = stratified_split(labels, fraction, seed);
  return {subset(data, split.selected), subset(data, split.rest)};
}

}  // namespace mmssl

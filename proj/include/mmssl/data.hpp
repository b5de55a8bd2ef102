#pragma once

// Synthetic paired image/token data with a tunable amount of shared signal,
// its text file format, and stratified label-fraction sampling.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "mmssl/encoders.hpp"
#include "mmssl/rng.hpp"
#include "mmssl/tensor.hpp"

namespace mmssl {

inline constexpr int kDatasetFormatVersion = 1;

struct GenSpec {
  std::size_t n_samples = 2000;
  Index latent_dim = 8;
  Index classes = 2;
  GridDims grid{8, 8, 1};
  Index vocab = 64;
  Index seq_len = 12;
  /// 0 = both modalities are functions of the latent, 1 = both are pure noise.
  double eta = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DatasetDims {
  GridDims grid;
  Index vocab = 64;
  Index seq_len = 12;
  Index classes = 2;

  friend bool operator==(const DatasetDims&, const DatasetDims&) = default;
};

struct PairedSample {
  std::int64_t id = 0;
  Tensor image;               ///< [H x W x C]
  std::vector<Token> tokens;  ///< length seq_len, 0-padded
  Index label = 0;

  friend bool operator==(const PairedSample&, const PairedSample&) = default;
};

struct Dataset {
  DatasetDims dims;
  std::vector<PairedSample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  std::vector<Index> labels() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// The fixed random maps behind one generator seed.
class SyntheticWorld {
 public:
  explicit SyntheticWorld(const GenSpec& spec);

  Eigen::VectorXd draw_latent(Rng& rng) const;
  Index label(const Eigen::VectorXd& z) const;
  /// (1 - eta) * A z + eta * noise, reshaped to the grid.
  Tensor image(const Eigen::VectorXd& z, Rng& noise_rng) const;
  /// (1 - eta) * softmax(B z) + eta * uniform, over ids 1..V-1; id 0 has mass 0.
  Eigen::VectorXd token_distribution(const Eigen::VectorXd& z) const;
  std::vector<Token> tokens(const Eigen::VectorXd& z, Rng& rng) const;
  PairedSample sample(std::int64_t id) const;

 private:
  GenSpec spec_;
  Matrix image_map_;   // [HWC x k]
  Matrix class_map_;   // [classes x k]
  Matrix vocab_map_;   // [V x k], row 0 unused
};

/// Shipped lexicon structure: ids 2m and 2m+1 (m >= 1) are synonyms, i.e.
/// their vocabulary directions differ only by a small perturbation.
Token synonym_partner(Token t);

Dataset generate(const GenSpec& spec);

void write_dataset(std::ostream& out, const Dataset& data);
Dataset read_dataset(std::istream& in);
void save(const Dataset& data, const std::filesystem::path& path);
Dataset load(const std::filesystem::path& path);

Dataset subset(const Dataset& data, std::span<const std::size_t> indices);

/// Stratified selection of round(fraction * n_c) samples of every class c.
/// The per-class order is a fixed permutation for the seed, so smaller
/// fractions select subsets of larger ones. Both index lists are ascending.
struct IndexSplit {
  std::vector<std::size_t> selected;
  std::vector<std::size_t> rest;
};
IndexSplit stratified_split(std::span<const Index> labels, double fraction, std::uint64_t seed);

struct FractionSplit {
  Dataset labeled;
  Dataset heldout;
};
FractionSplit label_fraction_split(const Dataset& data, double fraction, std::uint64_t seed);

}  // namespace mmssl

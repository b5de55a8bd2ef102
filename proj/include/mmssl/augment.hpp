#pragma once

// Stochastic view generation. Every function is pure given its `draw` value;
// the caller owns the random stream and hands out draws.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <span>
#include <unordered_map>
#include <vector>

#include "mmssl/encoders.hpp"
#include "mmssl/tensor.hpp"

namespace mmssl {

struct AugmentPolicy {
  double noise_sigma = 0.1;
  double noise_prob = 1.0;
  /// Fraction of grid cells covered by the zeroed patch.
  double mask_fraction = 0.25;
  double mask_prob = 1.0;
  double rescale_min = 0.8;
  double rescale_max = 1.2;
  double rescale_prob = 1.0;
  /// Per-token synonym replacement probability.
  double synonym_p = 0.3;

  static AugmentPolicy identity() { return {0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0}; }

  void validate() const;
};

/// Directed token substitution table.
class SynonymLexicon {
 public:
  SynonymLexicon() = default;

  /// Parses `token<TAB>sub[,sub...]` lines; `#` starts a comment line.
  static SynonymLexicon parse(std::istream& in);
  static SynonymLexicon load(const std::filesystem::path& path);

  void add(Token token, std::vector<Token> substitutes);
  const std::vector<Token>* substitutes(Token token) const;
  bool empty() const noexcept { return table_.empty(); }
  std::size_t size() const noexcept { return table_.size(); }

  /// Throws IndexError if any id is outside [0, vocab).
  void validate(Index vocab) const;

 private:
  std::unordered_map<Token, std::vector<Token>> table_;
};

/// Gaussian noise, then a zeroed contiguous patch, then a global rescale.
Tensor augment_image(const Tensor& grid, const AugmentPolicy& policy, std::uint64_t draw);

/// Replaces each non-padding token that has substitutes with probability p by
/// a uniformly chosen substitute.
std::vector<Token> augment_text(std::span<const Token> tokens, const SynonymLexicon& lexicon, double p,
                                std::uint64_t draw);

}  // namespace mmssl

#include "mmssl/augment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <string>

#include "mmssl/rng.hpp"

namespace mmssl {

void AugmentPolicy::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!(noise_sigma >= 0)) throw ConfigError("augment: noise sigma must be non-negative");
  if (!prob(noise_prob) || !prob(mask_prob) || !prob(rescale_prob) || !prob(synonym_p)) {
    throw ConfigError("augment: probabilities must lie in [0, 1]");
  }
  if (!(mask_fraction >= 0 && mask_fraction < 1)) throw ConfigError("augment: mask fraction must lie in [0, 1)");
  if (!(rescale_min > 0 && rescale_max >= rescale_min)) throw ConfigError("augment: rescale range must be positive");
}

namespace {

Token parse_token(std::string_view s, std::size_t line) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  Token v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    throw ParseError("invalid token id '" + std::string(s) + "'", line);
  }
  return v;
}

}  // namespace

SynonymLexicon SynonymLexicon::parse(std::istream& in) {
  SynonymLexicon lex;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.empty() || text.front() == '#') continue;
    const auto tab = text.find('\t');
    if (tab == std::string::npos) throw ParseError("expected 'token<TAB>substitutes'", line);
    const Token key = parse_token(std::string_view(text).substr(0, tab), line);
    std::vector<Token> subs;
    std::string_view rest = std::string_view(text).substr(tab + 1);
    while (true) {
      const auto comma = rest.find(',');
      subs.push_back(parse_token(rest.substr(0, comma), line));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    lex.add(key, std::move(subs));
  }
  return lex;
}

SynonymLexicon SynonymLexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open lexicon " + path.string());
  return parse(in);
}

void SynonymLexicon::add(Token token, std::vector<Token> substitutes) {
  auto& list = table_[token];
  list.insert(list.end(), substitutes.begin(), substitutes.end());
}

const std::vector<Token>* SynonymLexicon::substitutes(Token token) const {
  auto it = table_.find(token);
  return it == table_.end() || it->second.empty() ? nullptr : &it->second;
}

void SynonymLexicon::validate(Index vocab) const {
  for (const auto& [key, subs] : table_) {
    if (key >= static_cast<Token>(vocab)) throw IndexError("lexicon: token " + std::to_string(key) + " outside vocabulary");
    for (Token s : subs) {
      if (s >= static_cast<Token>(vocab)) {
        throw IndexError("lexicon: substitute " + std::to_string(s) + " outside vocabulary");
      }
    }
  }
}

Tensor augment_image(const Tensor& grid, const AugmentPolicy& policy, std::uint64_t draw) {
  Tensor out = grid;
  Rng rng(draw);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Fixed draw order keeps views reproducible whatever the policy.
  const bool do_noise = unit(rng) < policy.noise_prob;
  const bool do_mask = unit(rng) < policy.mask_prob;
  const bool do_rescale = unit(rng) < policy.rescale_prob;

  if (do_noise && policy.noise_sigma > 0) {
    std::normal_distribution<double> noise(0.0, policy.noise_sigma);
    for (double& v : out.data()) v += noise(rng);
  }

  const Index h = grid.rank() >= 1 ? grid.shape()[0] : 1;
  const Index w = grid.rank() >= 2 ? grid.shape()[1] : 1;
  const Index c = grid.size() / (h * w);
  const auto cells = static_cast<Index>(std::floor(policy.mask_fraction * static_cast<double>(h * w)));
  if (do_mask && cells > 0) {
    const Index ph = std::min(h, static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(cells)))));
    const Index pw = std::min(w, (cells + ph - 1) / ph);
    const Index top = std::uniform_int_distribution<Index>(0, h - ph)(rng);
    const Index left = std::uniform_int_distribution<Index>(0, w - pw)(rng);
    auto data = out.data();
    for (Index r = top; r < top + ph; ++r) {
      for (Index col = left; col < left + pw; ++col) {
        for (Index ch = 0; ch < c; ++ch) data[static_cast<std::size_t>((r * w + col) * c + ch)] = 0.0;
      }
    }
  }

  if (do_rescale && policy.rescale_max > policy.rescale_min) {
    const double s = std::uniform_real_distribution<double>(policy.rescale_min, policy.rescale_max)(rng);
    out.matrix() *= s;
  } else if (do_rescale && policy.rescale_min != 1.0) {
    out.matrix() *= policy.rescale_min;
  }
  return out;
}

std::vector<Token> augment_text(std::span<const Token> tokens, const SynonymLexicon& lexicon, double p,
                                std::uint64_t draw) {
  std::vector<Token> out(tokens.begin(), tokens.end());
  if (p <= 0 || lexicon.empty()) return out;
  Rng rng(draw);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Token& t : out) {
    if (t == kPadToken) continue;
    const auto* subs = lexicon.substitutes(t);
    if (!subs) continue;
    if (unit(rng) < p) {
      t = (*subs)[std::uniform_int_distribution<std::size_t>(0, subs->size() - 1)(rng)];
    }
  }
  return out;
}

}  // namespace mmssl

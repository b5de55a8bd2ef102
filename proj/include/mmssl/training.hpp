#pragma once

// Pre-training loops, linear probing and label-fraction fine-tuning.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmssl/augment.hpp"
#include "mmssl/data.hpp"
#include "mmssl/losses.hpp"
#include "mmssl/metrics.hpp"
#include "mmssl/model.hpp"
#include "mmssl/optim.hpp"

namespace mmssl {

enum class Method { simclr, mod_simclr, vse, vse_pp, mm_simclr, ext_pie_net };

inline constexpr Method kAllMethods[] = {Method::simclr, Method::mod_simclr, Method::vse,
                                         Method::vse_pp, Method::mm_simclr,  Method::ext_pie_net};

/// Hyphenated name, e.g. "mm-simclr".
std::string method_name(Method m);
/// Accepts hyphens or underscores; throws ConfigError otherwise.
Method parse_method(std::string_view name);

struct TrainConfig {
  Method method = Method::mm_simclr;
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  AdamConfig optimizer{};
  std::uint64_t seed = 0;
  LossConfig loss{};
  AugmentPolicy augment{};
  ArchConfig arch{};

  void validate() const;
};

struct PretrainResult {
  Model model;
  RunMetrics metrics;  ///< one "train" row per epoch
  double final_loss = 0.0;
};

/// Splits 0..n-1 into ceil(n / batch_size) batches whose sizes differ by at
/// most one, after a shuffle drawn from `rng`.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng);

/// Pre-training objective of `cfg.method` on one batch. `draw` seeds every
/// augmentation in the batch.
Var batch_loss(const TrainConfig& cfg, const Model& model, Binder& bind,
               std::span<const PairedSample* const> batch, const SynonymLexicon& lexicon, std::uint64_t draw);

/// The batch partition is fixed per seed; the visiting order and all views
/// are redrawn every epoch.
PretrainResult pretrain(const TrainConfig& cfg, const Dataset& data, const SynonymLexicon& lexicon);

/// The lexicon pairing ids 2m and 2m+1 for m >= 1.
SynonymLexicon default_lexicon(Index vocab);

/// Encoder outputs for every sample, [n x (image_dim + text_dim)].
Matrix encode_features(const Model& model, const Dataset& data);

struct ProbeConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  double learning_rate = 5e-4;
  /// Share of every class kept for training; the rest is the test split.
  double train_share = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Linear classifier on frozen (image_rep ; text_rep) features. Emits a
/// train and a test row per epoch. Throws ContractError if the encoders are
/// not frozen or change during the run.
RunMetrics linear_probe(const Model& model, const Dataset& data, const ProbeConfig& cfg);

struct SweepConfig {
  std::vector<double> fractions{0.01, 0.10, 0.20, 0.50};
  ProbeConfig head{};
  /// Width of the per-modality linear maps; 0 means arch.embed_dim.
  Index common_dim = 0;
  Index hidden = 64;

  void validate() const;
};

/// One RunMetrics block per fraction, in the given order. Labeled subsets are
/// nested and drawn from the training share; every block is scored on the
/// same test split.
std::vector<RunMetrics> finetune_sweep(const Model& model, const Dataset& data, const SweepConfig& cfg);

}  // namespace mmssl

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nasb/cell.hpp"
#include "nasb/checkpoint.hpp"
#include "nasb/dataset.hpp"
#include "nasb/optim.hpp"

namespace nasb::train {

struct SgdSettings {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

struct AdamSettings {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct TrainConfig {
  std::int64_t epochs = 10;
  std::int64_t batch_size = 32;
  SgdSettings weights;     // model weights (search + pretrain)
  AdamSettings arch;       // architecture parameters (search)
  AdamSettings finetune;   // finetune stage; weight decay must stay 0
  std::uint64_t seed = 1;
  // Epochs of weight-only training before the first architecture update;
  // uniform gate sampling meanwhile.
  std::int64_t arch_warmup_epochs = 0;
  bool augment_crop = true;
  bool augment_flip = true;
  std::int64_t crop_padding = 2;
  // When nonzero, stages rewrite checkpoint_path every this many epochs.
  std::int64_t checkpoint_every = 0;
  std::string checkpoint_path;
  // Test hooks for the alternation contract.
  bool freeze_arch = false;
  bool freeze_weights = false;

  void validate() const;
};

struct EpochRecord {
  std::int64_t epoch = 0;
  std::string split;
  double loss = 0;
  double top1 = 0;
};

struct StageLog {
  std::string stage;
  std::vector<EpochRecord> records;
  // Per-epoch snapshots of every edge's alpha vector (search stage only).
  std::vector<std::vector<std::vector<double>>> alpha_history;
  double wall_seconds = 0;

  // epoch,split,loss,top1 rows; no wall-clock so reruns are byte-identical.
  std::string to_csv() const;
  // Summary with final metrics; wall-clock lives here only.
  std::string summary_json() const;
};

// Algorithm stage 1: alternate architecture updates on validation batches
// (Adam via the gate gradient estimator) with weight updates on training
// batches (momentum SGD). Gates are resampled every step; alphas train in
// place inside the supernet.
StageLog search_stage(cell::SuperNet& net, const data::Dataset& d,
                      const TrainConfig& cfg,
                      std::vector<std::uint64_t>* gate_rng_state = nullptr);

// Stage 2: trains a full-precision derived model from scratch.
StageLog pretrain_stage(cell::Network& mp, const data::Dataset& dprime,
                        const TrainConfig& cfg);

// Stage 3: trains the binarized model with Adam (weight decay 0). The model
// is expected to be initialized from the pretrained weights.
StageLog finetune_stage(cell::Network& mf, const data::Dataset& dprime,
                        const TrainConfig& cfg);

struct EvalResult {
  double top1 = 0;
  double topk = 0;
  std::int64_t k = 1;
  std::int64_t count = 0;
};

// Deterministic single-crop evaluation with running BN statistics.
EvalResult evaluate(cell::Network& net, const data::Dataset& ds, std::int64_t topk = 5);

// Scoring core of evaluate(): argmax ties go to the lowest class index.
EvalResult evaluate_logits(const Tensor& logits, const std::vector<std::int64_t>& labels,
                           std::int64_t topk);

// ---- checkpoint plumbing ---------------------------------------------------

ckpt::Checkpoint supernet_checkpoint(cell::SuperNet& net,
                                     const std::vector<std::uint64_t>& rng_state = {});
cell::SuperNet load_supernet(const ckpt::Checkpoint& c, std::uint64_t seed);

struct NetworkMeta {
  cell::Genotype genotype;
  cell::NetMode mode = cell::NetMode::Full;
  PrecisionPolicy policy;
  cell::NetConfig config;
};

std::string network_meta_json(const cell::Network& net);
NetworkMeta parse_network_meta(const std::string& meta_json);

ckpt::Checkpoint network_checkpoint(cell::Network& net);
cell::Network load_network(const ckpt::Checkpoint& c, std::uint64_t seed = 0);

}  // namespace nasb::train

#pragma once

#include "soar/encoding.hpp"
#include "soar/model.hpp"
#include "soar/skeleton.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace soar::training {

using ad::Tensor;
using model::Phase;

// Row-wise |a - n + eps|^2 for [B, d] inputs; returns [B].
Tensor pairwise_distance(Tensor const & a, Tensor const & n, double eps = 1e-6);

// mean(max(D(a, p) - D(a, n) + margin, 0)): zero once every negative is
// farther than its positive by at least the margin.
Tensor triplet_margin_loss(Tensor const & anchors, Tensor const & positives, Tensor const & negatives,
                           double margin = 0.2, double eps = 1e-6);

// Multi-class softmax cross-entropy averaged over the batch.
Tensor cross_entropy(Tensor const & logits, std::vector<std::size_t> const & labels);

// mean(1 - cos(e, e_star)) over rows.
Tensor lsc_loss(Tensor const & e, Tensor const & e_star);

struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
};

// One triplet per sample that has a same-class peer and at least one
// other-class sample. Random picks by default; with `embeddings` ([B, d]
// row-major) and hard = true, the farthest positive and nearest negative.
std::vector<Triplet> mine_triplets(std::span<std::uint32_t const> labels, std::mt19937_64 & rng, bool hard = false,
                                   std::span<double const> embeddings = {});

class PrototypeMemoryBank {
public:
  // Replaces every entry: per class, the mean of the given rows.
  void rebuild(std::span<std::uint32_t const> labels, std::vector<std::vector<double>> const & rows,
               std::size_t epoch);

  bool populated() const { return !prototypes_.empty(); }
  std::size_t epoch() const { return epoch_; }
  std::map<std::uint32_t, std::vector<double>> const & prototypes() const { return prototypes_; }
  std::map<std::uint32_t, std::size_t> const & counts() const { return counts_; }

  // [B, d'] prototype rows for a batch. Throws StateError for a missing
  // class. Every read is logged with the caller's epoch.
  Tensor lookup(std::span<std::uint32_t const> labels, std::size_t epoch) const;
  std::vector<std::size_t> const & read_epochs() const { return read_epochs_; }

private:
  std::map<std::uint32_t, std::vector<double>> prototypes_;
  std::map<std::uint32_t, std::size_t> counts_;
  std::size_t epoch_ = 0;
  mutable std::vector<std::size_t> read_epochs_;
};

struct TrainConfig {
  double learning_rate = 3.5e-5;
  double min_learning_rate = 0.0;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double w_triplet = 1.0;
  double w_cls = 0.4;
  double w_lsc = 0.1;
  double margin = 0.2;
  double eps = 1e-6;
  std::size_t warmup_epochs = 20;    // N_t
  std::size_t decenter_epochs = 10;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool hard_mining = false;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(std::string const & text);
};

Phase phase_for_epoch(std::size_t epoch, TrainConfig const & config);
// Cosine annealing from learning_rate at epoch 0 towards min_learning_rate.
double learning_rate_at(std::size_t epoch, TrainConfig const & config);

// Adam with decoupled weight decay.
class AdamW {
public:
  AdamW(std::vector<Tensor> params, TrainConfig const & config);
  void step(double learning_rate);
  std::size_t steps() const { return steps_; }

private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t steps_ = 0;
};

std::vector<encoding::EncodedSample> encode_all(std::span<SkeletonSequence const> samples,
                                                SkeletonTopology const & topology,
                                                model::ModelConfig const & config);

// Eval-mode pooled E_{N-1} rows, one per sample, in input order.
std::vector<std::vector<double>> pooled_features(model::Trans4Soar & net,
                                                 std::span<encoding::EncodedSample const> samples,
                                                 std::size_t batch_size);

PrototypeMemoryBank update_prototypes(model::Trans4Soar & net, std::span<encoding::EncodedSample const> samples,
                                      std::span<std::uint32_t const> labels, std::size_t epoch,
                                      std::size_t batch_size);

// E*_aug for given per-sample prototype rows (see forward_aux for phases).
Tensor augment_features(model::Trans4Soar & net, Tensor const & tokens, Tensor const & prototypes);

struct LossParts {
  Tensor triplet;
  Tensor cls;
  Tensor lsc;
  Tensor total;
  std::size_t triplets = 0;
};

// Losses of one batch. `head_labels` index the classification head;
// `labels` are the dataset class ids used for mining and prototypes.
LossParts batch_losses(model::Trans4Soar & net, std::span<encoding::EncodedSample const> batch,
                       std::span<std::uint32_t const> labels, std::vector<std::size_t> const & head_labels,
                       Phase phase, std::size_t epoch, PrototypeMemoryBank const & bank, TrainConfig const & config,
                       std::mt19937_64 & rng, ad::Mode mode = ad::Mode::train);

struct EpochLog {
  std::size_t epoch = 0;
  double triplet = 0.0;
  double cls = 0.0;
  double lsc = 0.0;
  double total = 0.0;
  Phase phase = Phase::warmup;
  double learning_rate = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  PrototypeMemoryBank bank;
  std::vector<std::uint32_t> classes;  // head index -> class id
};

// Called after the bank has been rebuilt at the end of every epoch.
using EpochCallback = std::function<void(EpochLog const &, model::Trans4Soar &, PrototypeMemoryBank const &)>;

// Trains on `samples` (base classes only). Throws NumericError naming the
// batch and loss components when the loss stops being finite.
TrainResult train(model::Trans4Soar & net, std::span<SkeletonSequence const> samples,
                  SkeletonTopology const & topology, TrainConfig const & config, EpochCallback const & on_epoch = {},
                  std::filesystem::path const & checkpoint_dir = {});

// epoch,L_TPL,L_CLS,L_LSC,total,phase,lr
void write_train_log(std::filesystem::path const & path, std::vector<EpochLog> const & log);

}  // namespace soar::training

#include "soar/training.hpp"

#include "soar/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

namespace soar::training {

using nlohmann::json;

Tensor pairwise_distance(Tensor const & a, Tensor const & n, double eps)
{
  if (a.rank() != 2 || a.shape() != n.shape())
    throw ConfigError("pairwise_distance expects two [B, d] tensors of equal shape");
  Tensor const diff = ad::add_scalar(ad::sub(a, n), eps);
  return ad::sum(ad::mul(diff, diff), 1);
}

Tensor triplet_margin_loss(Tensor const & anchors, Tensor const & positives, Tensor const & negatives, double margin,
                           double eps)
{
  Tensor const dap = pairwise_distance(anchors, positives, eps);
  Tensor const dan = pairwise_distance(anchors, negatives, eps);
  return ad::mean_all(ad::relu(ad::add_scalar(ad::sub(dap, dan), margin)));
}

Tensor cross_entropy(Tensor const & logits, std::vector<std::size_t> const & labels)
{
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw ConfigError("cross_entropy expects [B, C] logits and B labels");
  return ad::scale(ad::mean_all(ad::pick(ad::log_softmax(logits, 1), labels)), -1.0);
}

Tensor lsc_loss(Tensor const & e, Tensor const & e_star)
{
  return ad::mean_all(ad::add_scalar(ad::scale(ad::cosine_similarity(e, e_star), -1.0), 1.0));
}

std::vector<Triplet> mine_triplets(std::span<std::uint32_t const> labels, std::mt19937_64 & rng, bool hard,
                                   std::span<double const> embeddings)
{
  std::size_t const n = labels.size();
  std::size_t dim = 0;
  if (hard)
  {
    if (n == 0 || embeddings.size() % n != 0 || embeddings.empty())
      throw ConfigError("hard mining needs one embedding row per label");
    dim = embeddings.size() / n;
  }
  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k)
    {
      double const d = embeddings[i * dim + k] - embeddings[j * dim + k];
      s += d * d;
    }
    return s;
  };

  std::vector<Triplet> out;
  for (std::size_t i = 0; i < n; ++i)
  {
    std::vector<std::size_t> pos, neg;
    for (std::size_t j = 0; j < n; ++j)
    {
      if (j == i)
        continue;
      (labels[j] == labels[i] ? pos : neg).push_back(j);
    }
    if (pos.empty() || neg.empty())
      continue;
    Triplet t{i, 0, 0};
    if (hard)
    {
      t.positive = *std::max_element(pos.begin(), pos.end(),
                                     [&](std::size_t a, std::size_t b) { return dist(i, a) < dist(i, b); });
      t.negative = *std::min_element(neg.begin(), neg.end(),
                                     [&](std::size_t a, std::size_t b) { return dist(i, a) < dist(i, b); });
    }
    else
    {
      t.positive = pos[std::uniform_int_distribution<std::size_t>(0, pos.size() - 1)(rng)];
      t.negative = neg[std::uniform_int_distribution<std::size_t>(0, neg.size() - 1)(rng)];
    }
    out.push_back(t);
  }
  return out;
}

void PrototypeMemoryBank::rebuild(std::span<std::uint32_t const> labels, std::vector<std::vector<double>> const & rows,
                                  std::size_t epoch)
{
  if (labels.size() != rows.size())
    throw ConfigError("prototype rebuild needs one row per label");
  std::map<std::uint32_t, std::vector<double>> sums;
  std::map<std::uint32_t, std::size_t> counts;
  for (std::size_t i = 0; i < rows.size(); ++i)
  {
    auto & s = sums[labels[i]];
    if (s.empty())
      s.assign(rows[i].size(), 0.0);
    if (s.size() != rows[i].size())
      throw ConfigError("prototype rows differ in width");
    for (std::size_t k = 0; k < s.size(); ++k)
      s[k] += rows[i][k];
    ++counts[labels[i]];
  }
  for (auto & [label, s] : sums)
  {
    auto const count = static_cast<double>(counts[label]);
    for (auto & v : s)
    {
      v /= count;
      if (!std::isfinite(v))
        throw NumericError("non-finite prototype for class " + std::to_string(label));
    }
  }
  prototypes_ = std::move(sums);
  counts_ = std::move(counts);
  epoch_ = epoch;
}

Tensor PrototypeMemoryBank::lookup(std::span<std::uint32_t const> labels, std::size_t epoch) const
{
  if (prototypes_.empty())
    throw StateError("prototype memory bank read before it was populated");
  std::size_t const width = prototypes_.begin()->second.size();
  std::vector<double> values;
  values.reserve(labels.size() * width);
  for (auto label : labels)
  {
    auto it = prototypes_.find(label);
    if (it == prototypes_.end())
      throw StateError("no prototype for class " + std::to_string(label));
    values.insert(values.end(), it->second.begin(), it->second.end());
  }
  read_epochs_.push_back(epoch);
  return Tensor::from({labels.size(), width}, std::move(values));
}

void TrainConfig::validate() const
{
  auto fail = [](std::string const & what) { throw ConfigError("train config: " + what); };
  if (!(learning_rate > 0.0) || min_learning_rate < 0.0 || min_learning_rate > learning_rate)
    fail("learning rates must satisfy 0 <= min <= lr, lr > 0");
  if (epochs == 0 || batch_size < 2)
    fail("epochs must be positive and batch_size >= 2");
  if (w_triplet < 0.0 || w_cls < 0.0 || w_lsc < 0.0 || margin < 0.0 || eps < 0.0 || weight_decay < 0.0)
    fail("weights, margin, eps and weight decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0))
    fail("invalid optimizer constants");
}

std::string TrainConfig::to_json() const
{
  json j{
    {"learning_rate", learning_rate}, {"min_learning_rate", min_learning_rate},
    {"epochs", epochs},               {"batch_size", batch_size},
    {"w_triplet", w_triplet},         {"w_cls", w_cls},
    {"w_lsc", w_lsc},                 {"margin", margin},
    {"eps", eps},                     {"warmup_epochs", warmup_epochs},
    {"decenter_epochs", decenter_epochs}, {"weight_decay", weight_decay},
    {"beta1", beta1},                 {"beta2", beta2},
    {"adam_eps", adam_eps},           {"hard_mining", hard_mining},
    {"checkpoint_every", checkpoint_every}, {"seed", seed},
  };
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(std::string const & text)
{
  TrainConfig c;
  try
  {
    json const j = json::parse(text);
    auto read = [&](char const * key, auto & field) {
      if (j.contains(key))
        j.at(key).get_to(field);
    };
    read("learning_rate", c.learning_rate);
    read("min_learning_rate", c.min_learning_rate);
    read("epochs", c.epochs);
    read("batch_size", c.batch_size);
    read("w_triplet", c.w_triplet);
    read("w_cls", c.w_cls);
    read("w_lsc", c.w_lsc);
    read("margin", c.margin);
    read("eps", c.eps);
    read("warmup_epochs", c.warmup_epochs);
    read("decenter_epochs", c.decenter_epochs);
    read("weight_decay", c.weight_decay);
    read("beta1", c.beta1);
    read("beta2", c.beta2);
    read("adam_eps", c.adam_eps);
    read("hard_mining", c.hard_mining);
    read("checkpoint_every", c.checkpoint_every);
    read("seed", c.seed);
  }
  catch (json::exception const & e)
  {
    throw ConfigError(std::string("train config JSON: ") + e.what());
  }
  c.validate();
  return c;
}

Phase phase_for_epoch(std::size_t epoch, TrainConfig const & config)
{
  if (epoch < config.warmup_epochs)
    return Phase::warmup;
  if (epoch < config.warmup_epochs + config.decenter_epochs)
    return Phase::decenter;
  return Phase::prototype;
}

double learning_rate_at(std::size_t epoch, TrainConfig const & config)
{
  double const progress = static_cast<double>(epoch) / static_cast<double>(config.epochs);
  return config.min_learning_rate +
         0.5 * (config.learning_rate - config.min_learning_rate) * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(std::vector<Tensor> params, TrainConfig const & config)
  : params_(std::move(params)),
    beta1_(config.beta1),
    beta2_(config.beta2),
    eps_(config.adam_eps),
    weight_decay_(config.weight_decay)
{
  for (auto const & p : params_)
  {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamW::step(double lr)
{
  ++steps_;
  double const c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  double const c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i)
  {
    Tensor & p = params_[i];
    if (!p.has_grad())
      continue;
    auto w = p.mutable_values();
    auto g = p.grad();
    auto & m = m_[i];
    auto & v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k)
    {
      w[k] -= lr * weight_decay_ * w[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

std::vector<encoding::EncodedSample> encode_all(std::span<SkeletonSequence const> samples,
                                                SkeletonTopology const & topology, model::ModelConfig const & config)
{
  std::vector<encoding::EncodedSample> out;
  out.reserve(samples.size());
  for (auto const & s : samples)
  {
    if (s.dims() != config.in_channels)
      throw ConfigError("sample dimensionality does not match the model's in_channels");
    out.push_back(encoding::encode(s, topology, config.height, config.width, config.patch));
  }
  return out;
}

std::vector<std::vector<double>> pooled_features(model::Trans4Soar & net,
                                                 std::span<encoding::EncodedSample const> samples,
                                                 std::size_t batch_size)
{
  ad::NoGradGuard no_grad;
  std::vector<std::vector<double>> rows;
  rows.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += batch_size)
  {
    auto const batch = samples.subspan(start, std::min(batch_size, samples.size() - start));
    auto const out = net.forward(model::batch_images(batch), ad::Mode::eval);
    std::size_t const width = out.pooled_mid.dim(1);
    auto const v = out.pooled_mid.values();
    for (std::size_t i = 0; i < batch.size(); ++i)
      rows.emplace_back(v.begin() + static_cast<std::ptrdiff_t>(i * width),
                        v.begin() + static_cast<std::ptrdiff_t>((i + 1) * width));
  }
  return rows;
}

PrototypeMemoryBank update_prototypes(model::Trans4Soar & net, std::span<encoding::EncodedSample const> samples,
                                      std::span<std::uint32_t const> labels, std::size_t epoch,
                                      std::size_t batch_size)
{
  PrototypeMemoryBank bank;
  bank.rebuild(labels, pooled_features(net, samples, batch_size), epoch);
  return bank;
}

Tensor augment_features(model::Trans4Soar & net, Tensor const & tokens, Tensor const & prototypes)
{
  return net.augment(tokens, prototypes);
}

LossParts batch_losses(model::Trans4Soar & net, std::span<encoding::EncodedSample const> batch,
                       std::span<std::uint32_t const> labels, std::vector<std::size_t> const & head_labels,
                       Phase phase, std::size_t epoch, PrototypeMemoryBank const & bank, TrainConfig const & config,
                       std::mt19937_64 & rng, ad::Mode mode)
{
  auto const tokens = net.patch_embed(model::batch_images(batch), mode);
  Tensor const mixed = net.mafm(tokens, mode);
  auto const main = net.forward_main(mixed, mode);

  Tensor prototypes;
  if (phase == Phase::prototype)
  {
    if (epoch < config.warmup_epochs)
      throw StateError("prototype memory bank read at epoch " + std::to_string(epoch) + ", before the warm-up ends");
    prototypes = bank.lookup(labels, epoch);
  }
  Tensor const e_star = net.forward_aux(mixed, prototypes, phase, mode);

  LossParts parts;
  auto const triplets = mine_triplets(labels, rng, config.hard_mining, main.embedding.values());
  parts.triplets = triplets.size();
  if (triplets.empty())
    parts.triplet = Tensor::scalar(0.0);
  else
  {
    std::vector<std::size_t> a, p, n;
    for (auto const & t : triplets)
    {
      a.push_back(t.anchor);
      p.push_back(t.positive);
      n.push_back(t.negative);
    }
    parts.triplet = triplet_margin_loss(ad::index_select(main.embedding, 0, a), ad::index_select(main.embedding, 0, p),
                                        ad::index_select(main.embedding, 0, n), config.margin, config.eps);
  }
  parts.cls = cross_entropy(main.logits, head_labels);
  parts.lsc = lsc_loss(main.embedding, e_star);
  parts.total = ad::add(ad::add(ad::scale(parts.triplet, config.w_triplet), ad::scale(parts.cls, config.w_cls)),
                        ad::scale(parts.lsc, config.w_lsc));
  return parts;
}

namespace {

std::string checkpoint_extra(model::ModelConfig const & config, std::size_t epoch)
{
  json j{{"model", json::parse(config.to_json())}, {"epoch", epoch}};
  return j.dump();
}

}  // namespace

TrainResult train(model::Trans4Soar & net, std::span<SkeletonSequence const> samples,
                  SkeletonTopology const & topology, TrainConfig const & config, EpochCallback const & on_epoch,
                  std::filesystem::path const & checkpoint_dir)
{
  config.validate();
  if (samples.size() < 2)
    throw ConfigError("training needs at least two samples");

  TrainResult result;
  std::vector<std::uint32_t> labels;
  for (auto const & s : samples)
    labels.push_back(s.info.label);
  std::set<std::uint32_t> const unique(labels.begin(), labels.end());
  result.classes.assign(unique.begin(), unique.end());
  if (result.classes.size() > net.config().num_classes)
    throw ConfigError("training data has " + std::to_string(result.classes.size()) + " classes, the head has " +
                      std::to_string(net.config().num_classes));
  std::map<std::uint32_t, std::size_t> head_index;
  for (std::size_t i = 0; i < result.classes.size(); ++i)
    head_index[result.classes[i]] = i;

  auto const encoded = encode_all(samples, topology, net.config());
  AdamW optimizer(net.params().trainable(), config);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(samples.size());

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch)
  {
    EpochLog entry;
    entry.epoch = epoch;
    entry.phase = phase_for_epoch(epoch, config);
    entry.learning_rate = learning_rate_at(epoch, config);

    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size)
    {
      std::size_t const end = std::min(order.size(), start + config.batch_size);
      if (end - start < 2)
        continue;  // batch statistics need two samples
      std::vector<encoding::EncodedSample> batch;
      std::vector<std::uint32_t> batch_labels;
      std::vector<std::size_t> batch_heads;
      for (std::size_t i = start; i < end; ++i)
      {
        batch.push_back(encoded[order[i]]);
        batch_labels.push_back(labels[order[i]]);
        batch_heads.push_back(head_index.at(labels[order[i]]));
      }

      auto const parts = batch_losses(net, batch, batch_labels, batch_heads, entry.phase, epoch, result.bank, config,
                                      rng);
      double const total = parts.total.item();
      if (!std::isfinite(total))
      {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", batch " << batches << ": L_TPL=" << parts.triplet.item()
            << " L_CLS=" << parts.cls.item() << " L_LSC=" << parts.lsc.item() << " total=" << total;
        throw NumericError(msg.str());
      }
      net.params().zero_grad();
      ad::backward(parts.total);
      optimizer.step(entry.learning_rate);

      entry.triplet += parts.triplet.item();
      entry.cls += parts.cls.item();
      entry.lsc += parts.lsc.item();
      entry.total += total;
      ++batches;
    }
    net.params().zero_grad();
    if (batches > 0)
    {
      auto const n = static_cast<double>(batches);
      entry.triplet /= n;
      entry.cls /= n;
      entry.lsc /= n;
      entry.total /= n;
    }

    // Rebuilding in place keeps the bank's read log across epochs.
    result.bank.rebuild(labels, pooled_features(net, encoded, config.batch_size), epoch);
    result.log.push_back(entry);
    if (on_epoch)
      on_epoch(entry, net, result.bank);
    if (!checkpoint_dir.empty() && config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0)
      save_checkpoint(checkpoint_dir / ("epoch_" + std::to_string(epoch + 1)), net.params(),
                      checkpoint_extra(net.config(), epoch + 1));
  }
  return result;
}

void write_train_log(std::filesystem::path const & path, std::vector<EpochLog> const & log)
{
  std::ofstream out(path);
  if (!out)
    throw ConfigError("cannot write " + path.string());
  out << "epoch,L_TPL,L_CLS,L_LSC,total,phase,lr\n" << std::setprecision(17);
  for (auto const & e : log)
    out << e.epoch << ',' << e.triplet << ',' << e.cls << ',' << e.lsc << ',' << e.total << ','
        << model::to_string(e.phase) << ',' << e.learning_rate << '\n';
}

}  // namespace soar::training

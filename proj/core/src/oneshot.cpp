#include "soar/oneshot.hpp"

#include "soar/errors.hpp"
#include "soar/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

namespace soar::eval {

using nlohmann::json;

std::vector<std::vector<double>> embed(model::Trans4Soar & net, std::span<SkeletonSequence const> samples,
                                       SkeletonTopology const & topology, std::size_t batch_size)
{
  if (batch_size == 0)
    throw ConfigError("batch size must be positive");
  auto const encoded = training::encode_all(samples, topology, net.config());
  ad::NoGradGuard no_grad;
  std::vector<std::vector<double>> rows;
  rows.reserve(samples.size());
  std::span<encoding::EncodedSample const> all(encoded);
  for (std::size_t start = 0; start < all.size(); start += batch_size)
  {
    auto const batch = all.subspan(start, std::min(batch_size, all.size() - start));
    auto const out = net.forward(model::batch_images(batch), ad::Mode::eval);
    std::size_t const width = out.embedding.dim(1);
    auto const v = out.embedding.values();
    for (std::size_t i = 0; i < batch.size(); ++i)
      rows.emplace_back(v.begin() + static_cast<std::ptrdiff_t>(i * width),
                        v.begin() + static_cast<std::ptrdiff_t>((i + 1) * width));
  }
  return rows;
}

std::uint32_t classify_one_shot(std::span<double const> query, std::vector<std::vector<double>> const & support,
                                std::span<std::uint32_t const> support_labels, Matching matching)
{
  if (support.empty() || support.size() != support_labels.size())
    throw ConfigError("one-shot matching needs one label per support embedding");
  double qnorm = 0.0;
  for (double v : query)
    qnorm += v * v;
  qnorm = std::sqrt(qnorm);

  double best = -std::numeric_limits<double>::infinity();
  std::uint32_t best_label = 0;
  for (std::size_t i = 0; i < support.size(); ++i)
  {
    auto const & s = support[i];
    if (s.size() != query.size())
      throw ConfigError("support and query embeddings differ in width");
    double score = 0.0;
    if (matching == Matching::cosine)
    {
      double dot = 0.0, snorm = 0.0;
      for (std::size_t k = 0; k < s.size(); ++k)
      {
        dot += query[k] * s[k];
        snorm += s[k] * s[k];
      }
      score = dot / (qnorm * std::sqrt(snorm) + 1e-12);
    }
    else
    {
      for (std::size_t k = 0; k < s.size(); ++k)
        score -= (query[k] - s[k]) * (query[k] - s[k]);
    }
    if (score > best || (score == best && support_labels[i] < best_label))
    {
      best = score;
      best_label = support_labels[i];
    }
  }
  return best_label;
}

Metrics compute_metrics(std::span<std::uint32_t const> predictions, std::span<std::uint32_t const> labels,
                        std::span<std::uint32_t const> classes)
{
  if (predictions.size() != labels.size())
    throw ConfigError("metrics need one prediction per label");
  if (classes.empty())
    throw ConfigError("metrics need at least one class");
  Metrics m;
  m.n_test = labels.size();
  if (labels.empty())
    return m;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    correct += predictions[i] == labels[i];
  m.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());

  for (auto c : classes)
  {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
    {
      bool const p = predictions[i] == c;
      bool const l = labels[i] == c;
      tp += p && l;
      fp += p && !l;
      fn += !p && l;
    }
    double const precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    double const recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    double const f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    m.precision += precision;
    m.recall += recall;
    m.f1 += f1;
  }
  auto const n = static_cast<double>(classes.size());
  m.precision /= n;
  m.recall /= n;
  m.f1 /= n;
  return m;
}

Metrics evaluate(model::Trans4Soar & net, std::span<SkeletonSequence const> support,
                 std::span<SkeletonSequence const> test, SkeletonTopology const & topology, EvalOptions const & options)
{
  auto const support_rows = embed(net, support, topology, options.batch_size);
  auto const test_rows = embed(net, test, topology, options.batch_size);
  std::vector<std::uint32_t> support_labels, classes, labels, predictions;
  for (auto const & s : support)
    support_labels.push_back(s.info.label);
  classes = support_labels;
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  for (std::size_t i = 0; i < test.size(); ++i)
  {
    labels.push_back(test[i].info.label);
    predictions.push_back(classify_one_shot(test_rows[i], support_rows, support_labels, options.matching));
  }
  return compute_metrics(predictions, labels, classes);
}

std::vector<SkeletonSequence> add_gaussian_noise(std::span<SkeletonSequence const> samples, double sigma, double mu,
                                                 std::uint64_t seed)
{
  if (!(sigma >= 0.0) || !std::isfinite(mu))
    throw ConfigError("noise needs sigma >= 0 and finite mu");
  std::vector<SkeletonSequence> out(samples.begin(), samples.end());
  if (sigma == 0.0 && mu == 0.0)
    return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(mu, sigma > 0.0 ? sigma : 1.0);
  for (auto & s : out)
    for (std::size_t t = 0; t < s.frames(); ++t)
      for (std::size_t j = 0; j < s.joints(); ++j)
      {
        if (s.masked(t, j))
          continue;
        for (std::size_t b = 0; b < s.dims(); ++b)
        {
          double const n = sigma > 0.0 ? noise(rng) : mu;
          s.set(t, j, b, static_cast<float>(s.at(t, j, b) + n));
        }
      }
  return out;
}

Metrics gaussian_noise_eval(model::Trans4Soar & net, OneShotSplit const & split, SkeletonTopology const & topology,
                            double sigma, double mu, std::uint64_t seed, bool noisy_support,
                            EvalOptions const & options)
{
  auto const test = add_gaussian_noise(split.test, sigma, mu, seed);
  if (!noisy_support)
    return evaluate(net, split.support, test, topology, options);
  auto const support = add_gaussian_noise(split.support, sigma, mu, seed ^ 0x5bd1e995ULL);
  return evaluate(net, support, test, topology, options);
}

OcclusionMode parse_occlusion_mode(std::string const & name)
{
  if (name == "none")
    return OcclusionMode::none;
  if (name == "re3d")
    return OcclusionMode::re3d;
  if (name == "re2d")
    return OcclusionMode::re2d;
  if (name == "random")
    return OcclusionMode::random;
  if (name == "temporal")
    return OcclusionMode::temporal;
  if (name == "spatial")
    return OcclusionMode::spatial;
  throw ConfigError("unknown occlusion mode '" + name + "'");
}

std::string to_string(OcclusionMode mode)
{
  switch (mode)
  {
    case OcclusionMode::none:
      return "none";
    case OcclusionMode::re3d:
      return "re3d";
    case OcclusionMode::re2d:
      return "re2d";
    case OcclusionMode::random:
      return "random";
    case OcclusionMode::temporal:
      return "temporal";
    case OcclusionMode::spatial:
      return "spatial";
  }
  return "?";
}

std::vector<SweepCell> parse_sweep(std::string const & json_text)
{
  std::vector<SweepCell> cells;
  try
  {
    json const j = json::parse(json_text);
    if (!j.is_array())
      throw ConfigError("sweep grid must be a JSON list");
    for (auto const & item : j)
    {
      SweepCell c;
      c.mode = parse_occlusion_mode(item.at("mode").get<std::string>());
      c.name = item.value("name", to_string(c.mode));
      c.gamma = item.value("gamma", c.gamma);
      c.snr_min = item.value("snr_min", c.snr_min);
      c.snr_max = item.value("snr_max", c.snr_max);
      c.frames = item.value("frames", c.frames);
      c.joints = item.value("joints", c.joints);
      cells.push_back(c);
    }
  }
  catch (json::exception const & e)
  {
    throw ConfigError(std::string("sweep grid JSON: ") + e.what());
  }
  return cells;
}

std::vector<SkeletonSequence> apply_occlusion(std::span<SkeletonSequence const> samples, SweepCell const & cell,
                                              OcclusionContext const & context, std::uint64_t seed)
{
  std::vector<SkeletonSequence> out;
  out.reserve(samples.size());
  std::mt19937_64 rng(seed);
  switch (cell.mode)
  {
    case OcclusionMode::none:
      out.assign(samples.begin(), samples.end());
      break;
    case OcclusionMode::random:
      for (auto const & s : samples)
        out.push_back(occlusion::occlude_random(s, cell.gamma, rng));
      break;
    case OcclusionMode::temporal:
      for (auto const & s : samples)
        out.push_back(occlusion::occlude_temporal(s, cell.frames, rng));
      break;
    case OcclusionMode::spatial:
      for (auto const & s : samples)
        out.push_back(occlusion::occlude_spatial(s, cell.joints, rng));
      break;
    case OcclusionMode::re2d:
      if (context.occluders.empty())
        throw ConfigError("2D realistic occlusion needs at least one occluder");
      for (auto const & s : samples)
      {
        std::uniform_int_distribution<std::size_t> pick(0, context.occluders.size() - 1);
        out.push_back(occlusion::occlude_realistic_2d(s, context.occluders[pick(rng)], rng).sample);
      }
      break;
    case OcclusionMode::re3d: {
      if (context.dataset == nullptr)
        throw ConfigError("3D realistic occlusion needs dataset metadata");
      if (context.occluders.empty())
        throw ConfigError("3D realistic occlusion needs at least one occluder");
      Dataset subset = *context.dataset;
      subset.samples.assign(samples.begin(), samples.end());
      occlusion::OcclusionConfig config;
      config.snr_min = cell.snr_min;
      config.snr_max = cell.snr_max;
      config.n_frames = 0;
      config.n_joints = 0;
      config.seed = seed;
      out = occlusion::occlude_dataset_realistic_3d(subset, context.calibrations, context.occluders, config)
              .dataset.samples;
      break;
    }
  }
  return out;
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt)
{
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::vector<SweepRow> occlusion_sweep(model::Trans4Soar & net, OneShotSplit const & split,
                                      SkeletonTopology const & topology, std::span<SweepCell const> cells,
                                      OcclusionContext const & context, bool occlude_support, std::uint64_t seed,
                                      EvalOptions const & options)
{
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < cells.size(); ++i)
  {
    auto const test = apply_occlusion(split.test, cells[i], context, mix_seed(seed, 2 * i));
    auto const support = occlude_support ? apply_occlusion(split.support, cells[i], context, mix_seed(seed, 2 * i + 1))
                                         : split.support;
    rows.push_back({cells[i].name, evaluate(net, support, test, topology, options)});
  }
  return rows;
}

void write_metrics_csv(std::filesystem::path const & path, std::span<SweepRow const> rows)
{
  std::ofstream out(path);
  if (!out)
    throw ConfigError("cannot write " + path.string());
  out << "condition,accuracy,f1,precision,recall,n_test\n" << std::setprecision(10);
  for (auto const & r : rows)
    out << r.condition << ',' << r.metrics.accuracy << ',' << r.metrics.f1 << ',' << r.metrics.precision << ','
        << r.metrics.recall << ',' << r.metrics.n_test << '\n';
}

}  // namespace soar::eval

#pragma once

#include "soar/model.hpp"
#include "soar/occlusion.hpp"
#include "soar/skeleton.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace soar::eval {

// Eval-mode embeddings E, one row per sample, in input order.
std::vector<std::vector<double>> embed(model::Trans4Soar & net, std::span<SkeletonSequence const> samples,
                                       SkeletonTopology const & topology, std::size_t batch_size = 32);

enum class Matching { cosine, euclidean };

// Nearest support sample; ties go to the lowest class id.
std::uint32_t classify_one_shot(std::span<double const> query, std::vector<std::vector<double>> const & support,
                                std::span<std::uint32_t const> support_labels, Matching matching = Matching::cosine);

struct Metrics {
  double accuracy = 0.0;
  double f1 = 0.0;         // macro
  double precision = 0.0;  // macro; a class never predicted counts as 0
  double recall = 0.0;     // macro
  std::size_t n_test = 0;
};

// Macro averages run over `classes`.
Metrics compute_metrics(std::span<std::uint32_t const> predictions, std::span<std::uint32_t const> labels,
                        std::span<std::uint32_t const> classes);

struct EvalOptions {
  Matching matching = Matching::cosine;
  std::size_t batch_size = 32;
};

Metrics evaluate(model::Trans4Soar & net, std::span<SkeletonSequence const> support,
                 std::span<SkeletonSequence const> test, SkeletonTopology const & topology,
                 EvalOptions const & options = {});

// Adds i.i.d. N(mu, sigma) noise to every visible coordinate.
std::vector<SkeletonSequence> add_gaussian_noise(std::span<SkeletonSequence const> samples, double sigma, double mu,
                                                 std::uint64_t seed);

Metrics gaussian_noise_eval(model::Trans4Soar & net, OneShotSplit const & split, SkeletonTopology const & topology,
                            double sigma, double mu, std::uint64_t seed, bool noisy_support = false,
                            EvalOptions const & options = {});

enum class OcclusionMode { none, re3d, re2d, random, temporal, spatial };
OcclusionMode parse_occlusion_mode(std::string const & name);
std::string to_string(OcclusionMode mode);

struct SweepCell {
  std::string name;
  OcclusionMode mode = OcclusionMode::none;
  double gamma = 0.1;
  double snr_min = 0.05;
  double snr_max = 0.2;
  std::size_t frames = 10;
  std::size_t joints = 5;
};

// JSON list of {"name", "mode", and the mode's parameters}.
std::vector<SweepCell> parse_sweep(std::string const & json_text);

// What the RE operators need beyond the samples themselves.
struct OcclusionContext {
  Dataset const * dataset = nullptr;  // metadata (frames, joints, cameras)
  occlusion::CalibrationSet calibrations;
  std::vector<occlusion::OccluderModel> occluders;
};

// Applies one sweep cell to a sample list. Deterministic in `seed`.
std::vector<SkeletonSequence> apply_occlusion(std::span<SkeletonSequence const> samples, SweepCell const & cell,
                                              OcclusionContext const & context, std::uint64_t seed);

struct SweepRow {
  std::string condition;
  Metrics metrics;
};

// One row per cell; `occlude_support` also occludes the support set.
std::vector<SweepRow> occlusion_sweep(model::Trans4Soar & net, OneShotSplit const & split,
                                      SkeletonTopology const & topology, std::span<SweepCell const> cells,
                                      OcclusionContext const & context, bool occlude_support, std::uint64_t seed,
                                      EvalOptions const & options = {});

// condition,accuracy,f1,precision,recall,n_test
void write_metrics_csv(std::filesystem::path const & path, std::span<SweepRow const> rows);

}  // namespace soar::eval

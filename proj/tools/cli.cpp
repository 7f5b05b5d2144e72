#include "cli.hpp"

#include "soar/dataset_io.hpp"
#include "soar/errors.hpp"
#include "soar/model.hpp"
#include "soar/occlusion.hpp"
#include "soar/oneshot.hpp"
#include "soar/params.hpp"
#include "soar/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace soar::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string read_text(fs::path const & path)
{
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ofstream open_csv(fs::path const & path)
{
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out)
    throw ConfigError("cannot write " + path.string());
  return out;
}

bool parse_bool(std::string const & text)
{
  if (text == "true" || text == "1")
    return true;
  if (text == "false" || text == "0")
    return false;
  throw ConfigError("expected true or false, got '" + text + "'");
}

std::vector<occlusion::OccluderModel> occluders_for(std::string const & dir, std::uint64_t seed)
{
  if (!dir.empty())
    return occlusion::load_occluder_dir(dir);
  return occlusion::procedural_occluders(seed);
}

std::vector<std::uint32_t> class_ids(Dataset const & ds)
{
  std::vector<std::uint32_t> ids;
  for (auto const & s : ds.samples)
    ids.push_back(s.info.label);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

// ---- synth -------------------------------------------------------------------

struct SynthArgs {
  SynthConfig config;
  std::string out;
};

void run_synth(SynthArgs const & a)
{
  save_dataset(synth_dataset(a.config), a.out);
  std::cout << "wrote " << a.config.n_classes * a.config.samples_per_class * a.config.n_cameras << " samples to "
            << a.out << '\n';
}

// ---- occlude -----------------------------------------------------------------

struct OccludeArgs {
  std::string in, out, mode = "random", occluders, stats;
  eval::SweepCell cell;
  std::uint64_t seed = 0;
};

void run_occlude(OccludeArgs a)
{
  Dataset ds = load_dataset(a.in);
  a.cell.mode = eval::parse_occlusion_mode(a.mode);
  a.cell.name = a.mode;

  eval::OcclusionContext ctx;
  ctx.dataset = &ds;
  if (a.cell.mode == eval::OcclusionMode::re3d || a.cell.mode == eval::OcclusionMode::re2d)
    ctx.occluders = occluders_for(a.occluders, a.seed);
  if (a.cell.mode == eval::OcclusionMode::re3d && ds.camera_count > 1)
    ctx.calibrations = occlusion::estimate_calibrations(ds);

  auto samples = eval::apply_occlusion(ds.samples, a.cell, ctx, a.seed);
  ds.samples = std::move(samples);
  save_dataset(ds, a.out);

  if (!a.stats.empty())
  {
    auto out = open_csv(a.stats);
    out << "index,label,camera_id,group_id,snr\n" << std::setprecision(10);
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
    {
      auto const & s = ds.samples[i];
      out << i << ',' << s.info.label << ',' << s.info.camera_id << ',' << s.info.group_id << ','
          << occlusion::snr_of(s) << '\n';
    }
  }
  std::cout << "occluded " << ds.samples.size() << " samples (" << a.mode << ") into " << a.out << '\n';
}

// ---- train -------------------------------------------------------------------

struct TrainArgs {
  std::string data, config, train_config, out, log;
  std::size_t novel = 0;  // 0: a quarter of the classes
  std::uint64_t split_seed = 0;
};

void run_train(TrainArgs const & a)
{
  Dataset const ds = load_dataset(a.data);
  auto const classes = class_ids(ds);
  std::size_t const n_novel = a.novel > 0 ? a.novel : std::max<std::size_t>(1, classes.size() / 4);
  if (n_novel >= classes.size())
    throw ConfigError("--novel must leave at least one base class");
  std::vector<std::uint32_t> const base(classes.begin(), classes.end() - static_cast<std::ptrdiff_t>(n_novel));
  std::vector<std::uint32_t> const novel(classes.end() - static_cast<std::ptrdiff_t>(n_novel), classes.end());

  auto mc = a.config.empty() ? model::ModelConfig::toy() : model::ModelConfig::from_json(read_text(a.config));
  mc.num_classes = base.size();
  auto const tc = a.train_config.empty() ? training::TrainConfig{}
                                         : training::TrainConfig::from_json(read_text(a.train_config));

  auto const split = make_one_shot_split(ds, base, novel, a.split_seed);
  model::Trans4Soar net(mc, tc.seed);
  fs::create_directories(a.out);
  auto const result = training::train(net, split.train, ds.topology, tc, {}, a.out);

  json extra{{"model", json::parse(mc.to_json())},
             {"train", json::parse(tc.to_json())},
             {"split", {{"base", base}, {"novel", novel}, {"seed", a.split_seed}}},
             {"epoch", tc.epochs}};
  save_checkpoint(a.out, net.params(), extra.dump());
  if (!a.log.empty())
    training::write_train_log(a.log, result.log);

  if (!result.log.empty())
    std::cout << "trained " << tc.epochs << " epochs, final loss " << result.log.back().total << '\n';
  std::cout << "checkpoint written to " << a.out << '\n';
}

// ---- eval --------------------------------------------------------------------

struct EvalArgs {
  std::string data, checkpoint, sweep, metrics, occval = "false", occluders, matching = "cosine";
  double noise_sigma = 0.0;
  double noise_mu = 0.0;
  std::uint64_t seed = 0;
};

void run_eval(EvalArgs const & a)
{
  bool const occval = parse_bool(a.occval);
  Dataset const ds = load_dataset(a.data);
  json const extra = json::parse(read_checkpoint_extra(a.checkpoint));
  if (!extra.contains("model") || !extra.contains("split"))
    throw FormatError("checkpoint lacks model or split information");

  auto const mc = model::ModelConfig::from_json(extra.at("model").dump());
  model::Trans4Soar net(mc);
  load_checkpoint(a.checkpoint, net.params());

  auto const & sj = extra.at("split");
  auto const split = make_one_shot_split(ds, sj.at("base").get<std::vector<std::uint32_t>>(),
                                         sj.at("novel").get<std::vector<std::uint32_t>>(),
                                         sj.at("seed").get<std::uint64_t>());

  eval::EvalOptions options;
  options.matching = a.matching == "euclidean" ? eval::Matching::euclidean : eval::Matching::cosine;

  std::vector<eval::SweepCell> cells;
  if (!a.sweep.empty())
    cells = eval::parse_sweep(read_text(a.sweep));
  else
    cells.push_back({"clean", eval::OcclusionMode::none});

  eval::OcclusionContext ctx;
  ctx.dataset = &ds;
  bool const realistic = std::any_of(cells.begin(), cells.end(), [](auto const & c) {
    return c.mode == eval::OcclusionMode::re3d || c.mode == eval::OcclusionMode::re2d;
  });
  if (realistic)
  {
    ctx.occluders = occluders_for(a.occluders, a.seed);
    if (ds.camera_count > 1)
      ctx.calibrations = occlusion::estimate_calibrations(ds);
  }

  auto rows = eval::occlusion_sweep(net, split, ds.topology, cells, ctx, occval, a.seed, options);
  if (a.noise_sigma > 0.0)
  {
    std::ostringstream name;
    name << "gaussian_sigma_" << a.noise_sigma;
    rows.push_back({name.str(), eval::gaussian_noise_eval(net, split, ds.topology, a.noise_sigma, a.noise_mu,
                                                          a.seed, occval, options)});
  }

  for (auto const & r : rows)
    std::cout << std::left << std::setw(24) << r.condition << " acc " << std::fixed << std::setprecision(4)
              << r.metrics.accuracy << "  f1 " << r.metrics.f1 << "  prec " << r.metrics.precision << "  rec "
              << r.metrics.recall << "  n " << r.metrics.n_test << '\n';
  if (!a.metrics.empty())
  {
    fs::path const p(a.metrics);
    if (p.has_parent_path())
      fs::create_directories(p.parent_path());
    eval::write_metrics_csv(p, rows);
  }
}

// ---- stats -------------------------------------------------------------------

struct StatsArgs {
  std::string data, out;
  std::size_t bins = 10;
};

void run_stats(StatsArgs const & a)
{
  Dataset const ds = load_dataset(a.data);
  auto const edges = occlusion::uniform_bin_edges(a.bins);
  auto const counts = occlusion::snr_histogram(ds, edges);
  auto out = open_csv(a.out);
  out << "bin_lo,bin_hi,count\n" << std::setprecision(10);
  for (std::size_t i = 0; i < counts.size(); ++i)
    out << edges[i] << ',' << edges[i + 1] << ',' << counts[i] << '\n';
}

int report(char const * kind, std::exception const & e, int code)
{
  std::cerr << "soar: " << kind << ": " << e.what() << '\n';
  return code;
}

}  // namespace

int run(int argc, char const * const * argv)
{
  CLI::App app{"Occlusion-robust one-shot skeleton action recognition toolkit", "soar"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto * s = app.add_subcommand("synth", "Generate a synthetic multi-view skeleton dataset");
  s->add_option("--classes", synth.config.n_classes, "Number of action classes")->capture_default_str();
  s->add_option("--per-class", synth.config.samples_per_class, "Motion instances per class")->capture_default_str();
  s->add_option("--cameras", synth.config.n_cameras, "Views per motion instance")->capture_default_str();
  s->add_option("--frames", synth.config.frames, "Frames T")->capture_default_str();
  s->add_option("--joints", synth.config.joints, "Joints J")->capture_default_str();
  s->add_option("--dims", synth.config.dims, "Coordinate dims B (2 or 3)")->capture_default_str();
  s->add_option("--seed", synth.config.seed, "Generator seed")->capture_default_str();
  s->add_option("--out", synth.out, "Output dataset directory")->required();

  OccludeArgs occ;
  auto * o = app.add_subcommand("occlude", "Apply an occlusion operator to a dataset");
  o->add_option("--in", occ.in, "Input dataset directory")->required();
  o->add_option("--out", occ.out, "Output dataset directory")->required();
  o->add_option("--mode", occ.mode, "Occlusion operator")
    ->check(CLI::IsMember({"re3d", "re2d", "random", "temporal", "spatial"}))
    ->capture_default_str();
  o->add_option("--snr-min", occ.cell.snr_min, "RE lower SNR bound")->capture_default_str();
  o->add_option("--snr-max", occ.cell.snr_max, "RE upper SNR bound")->capture_default_str();
  o->add_option("--gamma", occ.cell.gamma, "RA masked-cell ratio")->capture_default_str();
  o->add_option("--frames", occ.cell.frames, "Frames masked by temporal occlusion")->capture_default_str();
  o->add_option("--joints", occ.cell.joints, "Joints masked per frame by spatial occlusion")->capture_default_str();
  o->add_option("--seed", occ.seed, "Occlusion seed")->capture_default_str();
  o->add_option("--occluders", occ.occluders, "Directory of occluder vertex files (default: procedural)");
  o->add_option("--stats", occ.stats, "Per-sample SNR CSV");

  TrainArgs tr;
  auto * t = app.add_subcommand("train", "Train on the base classes of a dataset");
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--config", tr.config, "Model config JSON (default: toy preset)");
  t->add_option("--train-config", tr.train_config, "Training config JSON");
  t->add_option("--out", tr.out, "Checkpoint directory")->required();
  t->add_option("--log", tr.log, "Per-epoch loss CSV");
  t->add_option("--novel", tr.novel, "Number of held-out novel classes (default: a quarter)");
  t->add_option("--split-seed", tr.split_seed, "Support-sample selection seed")->capture_default_str();

  EvalArgs ev;
  auto * e = app.add_subcommand("eval", "One-shot evaluation on the novel classes");
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
  e->add_option("--noise-sigma", ev.noise_sigma, "Gaussian noise sigma (0 disables)")->capture_default_str();
  e->add_option("--noise-mu", ev.noise_mu, "Gaussian noise mean")->capture_default_str();
  e->add_option("--occval", ev.occval, "Also corrupt the support set")
    ->check(CLI::IsMember({"true", "false"}))
    ->capture_default_str();
  e->add_option("--sweep", ev.sweep, "Occlusion grid JSON");
  e->add_option("--metrics", ev.metrics, "Metrics CSV");
  e->add_option("--occluders", ev.occluders, "Directory of occluder vertex files (default: procedural)");
  e->add_option("--matching", ev.matching, "Support matching rule")
    ->check(CLI::IsMember({"cosine", "euclidean"}))
    ->capture_default_str();
  e->add_option("--seed", ev.seed, "Corruption seed")->capture_default_str();

  StatsArgs st;
  auto * h = app.add_subcommand("stats", "SNR histogram of a dataset");
  h->add_option("--data", st.data, "Dataset directory")->required();
  h->add_option("--bins", st.bins, "Histogram bins over [0, 1]")->capture_default_str()->check(CLI::PositiveNumber);
  h->add_option("--out", st.out, "Histogram CSV")->required();

  try
  {
    app.parse(argc, argv);
  }
  catch (CLI::ParseError const & err)
  {
    int const code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try
  {
    if (s->parsed())
      run_synth(synth);
    else if (o->parsed())
      run_occlude(occ);
    else if (t->parsed())
      run_train(tr);
    else if (e->parsed())
      run_eval(ev);
    else if (h->parsed())
      run_stats(st);
  }
  catch (ConfigError const & err)
  {
    return report("usage error", err, 1);
  }
  catch (NumericError const & err)
  {
    return report("numeric error", err, 3);
  }
  catch (Error const & err)
  {
    return report("data error", err, 2);
  }
  catch (json::exception const & err)
  {
    return report("data error", err, 2);
  }
  catch (std::exception const & err)
  {
    return report("data error", err, 2);
  }
  return 0;
}

}  // namespace soar::cli

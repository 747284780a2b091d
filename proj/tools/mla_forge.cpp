// mla_forge: command-line front end for simulation, dataset assembly,
// training, evaluation and rendering.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 gradient check
// outside tolerance.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <string>

#include "mlaforge/datastore.hpp"
#include "mlaforge/evaluate.hpp"
#include "mlaforge/neural/gradcheck.hpp"
#include "mlaforge/render.hpp"

namespace fs = std::filesystem;
using namespace mlaforge;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitCheckFailed = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Default seed, replaced by MLA_FORGE_SEED when set.
std::uint64_t default_seed() {
  const char* env = std::getenv("MLA_FORGE_SEED");
  if (!env || !*env) return 0;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(env, &used);
    if (used != std::string(env).size()) throw std::invalid_argument(env);
    return v;
  } catch (const std::exception&) {
    throw UsageError(std::string("MLA_FORGE_SEED must be an unsigned integer, got '") + env + "'");
  }
}

/// Options shared by every command that needs an acquisition config.
struct ConfigArgs {
  std::string scale = "desk";
  std::string config_path;

  void add(CLI::App* cmd) {
    cmd->add_option("--scale", scale, "Preset the config starts from")->check(CLI::IsMember({"desk", "paper"}));
    cmd->add_option("--config", config_path, "JSON with optional sections: acquisition, net, train, dataset")
        ->check(CLI::ExistingFile);
  }

  json file() const { return config_path.empty() ? json::object() : read_json(config_path); }

  json section(const char* name) const {
    const auto j = file();
    return j.contains(name) ? j.at(name) : json::object();
  }

  AcquisitionConfig acquisition() const {
    auto cfg = scale == "paper" ? AcquisitionConfig::paper_scale() : AcquisitionConfig::desk_scale();
    from_json(section("acquisition"), cfg);
    return cfg;
  }
};

MlaConfig mla_for(const AcquisitionConfig& cfg, int m) {
  MlaConfig mla{m};
  if (cfg.line_count % m != 0) {
    throw UsageError("--m " + std::to_string(m) + " does not divide line_count " + std::to_string(cfg.line_count));
  }
  return mla;
}

fs::path rf_path(const fs::path& dir, int line) {
  char name[32];
  std::snprintf(name, sizeof name, "rf_%04d.mlat", line);
  return dir / name;
}

struct RfSet {
  AcquisitionConfig cfg;
  std::vector<IqChannels> events;
};

RfSet load_rf_set(const fs::path& dir, const std::vector<int>& lines_wanted = {}) {
  const auto meta = read_json(dir / "acquisition.json");
  RfSet s;
  from_json(meta.at("config"), s.cfg);
  std::vector<int> lines = lines_wanted;
  if (lines.empty())
    for (int l = 0; l < s.cfg.line_count; ++l) lines.push_back(l);
  for (int l : lines) {
    const auto frame = load_rf_frame(rf_path(dir, l));
    if (frame.tx_line_index != l) throw DataError(rf_path(dir, l).string() + ": transmit index mismatch");
    s.events.push_back(iq_demodulate(frame, s.cfg));
  }
  return s;
}

void write_outputs(const IqCube& cube, BeamformedImage img, const AcquisitionConfig& cfg, const MlaConfig& mla,
                   const std::string& cube_out, const std::string& image_out) {
  if (!cube_out.empty()) save_cube<double>(cube_out, cube, cfg, mla.factor);
  if (!image_out.empty()) {
    img.mla = mla;
    img.provenance = mla.factor == 1 ? Provenance::sla : Provenance::mla_uncorrected;
    save_image(image_out, img, config_stamp(cfg));
  }
}

void print_json(const json& j) { std::cout << j.dump(2) << "\n"; }

// ---- subcommands -------------------------------------------------------------

struct SimulateArgs {
  ConfigArgs config;
  std::string out, phantom = "random_speckle";
  std::optional<std::uint64_t> seed;
  double noise_sigma = 0.0;
};

int run_simulate(const SimulateArgs& a) {
  const auto cfg = a.config.acquisition();
  const auto seed = a.seed.value_or(default_seed());
  const auto kind = parse_phantom_kind(a.phantom);
  SimOptions sim;
  sim.noise_sigma = a.noise_sigma;
  sim.noise_seed = seed;
  const auto ph = make_phantom(cfg, kind, seed);
  fs::create_directories(a.out);
  for (const auto& f : simulate_sweep(cfg, ph, sim)) save_rf_frame(rf_path(a.out, f.tx_line_index), f, cfg);
  auto meta = config_stamp(cfg);
  meta["phantom"] = to_string(kind);
  meta["seed"] = seed;
  meta["scatterers"] = ph.scatterers.size();
  write_json(fs::path(a.out) / "acquisition.json", meta);
  std::cerr << "wrote " << cfg.line_count << " RF frames to " << a.out << "\n";
  return kExitOk;
}

struct BeamformArgs {
  std::string rf, cube_out, image_out;
  int m = 1;
};

int run_beamform(const BeamformArgs& a) {
  if (a.cube_out.empty() && a.image_out.empty()) throw UsageError("nothing to write: give --cube and/or --image");
  const auto meta = read_json(fs::path(a.rf) / "acquisition.json");
  AcquisitionConfig cfg;
  from_json(meta.at("config"), cfg);
  const auto mla = mla_for(cfg, a.m);
  // only the kept transmit events are needed, as on a real MLA scanner
  const auto s = load_rf_set(a.rf, mla_kept_events(cfg, mla));
  const auto cube = build_iq_cube(s.events, mla_line_plan(cfg, mla), cfg);
  write_outputs(cube, hann_beamform(cube), cfg, mla, a.cube_out, a.image_out);
  return kExitOk;
}

struct DatasetArgs {
  ConfigArgs config;
  std::string out, phantom;
  int m = 5;
  std::optional<int> frames;
  std::optional<std::uint64_t> seed_base;
  unsigned threads = 0;
};

struct DatasetSettings {
  int frames = 116;
  std::uint64_t seed_base = 0;
  std::string phantom = "random_speckle";
};

DatasetSettings dataset_settings(const ConfigArgs& c, std::optional<int> frames, std::optional<std::uint64_t> seed_base,
                                 const std::string& phantom) {
  DatasetSettings s;
  s.seed_base = default_seed();
  const auto section = c.section("dataset");
  for (const auto& [key, value] : section.items()) {
    if (key == "frames") s.frames = value.get<int>();
    else if (key == "seed_base") s.seed_base = value.get<std::uint64_t>();
    else if (key == "phantom") s.phantom = value.get<std::string>();
    else throw DataError("dataset config: unknown key '" + key + "'");
  }
  if (frames) s.frames = *frames;
  if (seed_base) s.seed_base = *seed_base;
  if (!phantom.empty()) s.phantom = phantom;
  if (s.frames < 3) throw UsageError("a dataset needs at least 3 frames");
  return s;
}

DatasetManifest make_dataset(const AcquisitionConfig& cfg, const MlaConfig& mla, const DatasetSettings& s,
                             const fs::path& out, unsigned threads) {
  DatasetOptions opt;
  opt.phantom = parse_phantom_kind(s.phantom);
  opt.threads = threads;
  opt.progress = [](int done, int total) { std::cerr << "\rsimulated " << done << "/" << total << std::flush; };
  auto m = build_dataset(cfg, mla, s.frames, s.seed_base, out, opt);
  std::cerr << "\n";
  return m;
}

int run_dataset(const DatasetArgs& a) {
  const auto cfg = a.config.acquisition();
  const auto mla = mla_for(cfg, a.m);
  const auto s = dataset_settings(a.config, a.frames, a.seed_base, a.phantom);
  const auto m = make_dataset(cfg, mla, s, a.out, a.threads);
  std::cerr << "train " << m.of(Split::train).size() << ", val " << m.of(Split::val).size() << ", test "
            << m.of(Split::test).size() << "\n";
  return kExitOk;
}

struct TrainArgs {
  ConfigArgs config;
  std::string data, out;
  int m = 5;
  std::optional<int> frames, epochs, batch, base_channels;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
};

int run_train(const TrainArgs& a) {
  const auto cfg = a.config.acquisition();
  const auto mla = mla_for(cfg, a.m);
  const fs::path dir = a.data;
  DatasetManifest manifest;
  if (fs::exists(dir / "dataset.json")) {
    manifest = load_manifest(dir);
    if (manifest.mla != mla.factor) {
      throw DataError("dataset in " + dir.string() + " was built for m = " + std::to_string(manifest.mla));
    }
    if (manifest.config_hash != config_hash_hex(cfg)) {
      throw DataError("dataset in " + dir.string() + " was built with a different acquisition config");
    }
  } else {
    manifest = make_dataset(cfg, mla, dataset_settings(a.config, a.frames, std::nullopt, ""), dir, a.threads);
  }

  auto net = neural::net_config_from_json(a.config.section("net"));
  net.element_count = cfg.element_count;
  if (a.base_channels) net.base_channels = *a.base_channels;
  net.max_channels = std::max(net.max_channels, net.base_channels);
  const auto train_section = a.config.section("train");
  auto tc = neural::train_config_from_json(train_section);
  if (!train_section.contains("seed")) tc.seed = default_seed();
  if (a.epochs) tc.max_epochs = *a.epochs;
  if (a.batch) tc.batch_size = *a.batch;
  if (a.lr) tc.learning_rate = *a.lr;
  if (a.seed) tc.seed = *a.seed;
  net.validate();
  tc.validate();

  const auto train_set = load_samples<float>(manifest, dir, Split::train);
  const auto val_set = load_samples<float>(manifest, dir, Split::val);
  std::cerr << "training on " << train_set.size() << " frames, validating on " << val_set.size() << "\n";
  neural::TrainHooks hooks;
  hooks.on_epoch = [](const neural::EpochRecord& r) {
    std::cerr << "epoch " << r.epoch << " train " << r.train_loss << " val " << r.val_loss << "\n";
  };
  const auto result = neural::train(train_set, val_set, net, tc, neural::init_params<float>(net, {.seed = tc.seed}), hooks);

  json history = json::array();
  for (const auto& r : result.history) history.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}});
  json extra{{"train_config", neural::to_json(tc)},
             {"mla", mla.factor},
             {"dataset_config_hash", manifest.config_hash},
             {"best_epoch", result.best_epoch},
             {"initial_val_loss", result.initial_val_loss},
             {"history", history}};
  save_checkpoint(a.out, result.best, net, extra);
  std::cerr << "best epoch " << result.best_epoch << ", checkpoint " << a.out << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, data, split = "test", cube, original, corrected, reference, out;
  std::optional<int> m;
};

int run_eval(const EvalArgs& a) {
  std::optional<Checkpoint> ck;
  if (!a.checkpoint.empty()) ck = load_checkpoint(a.checkpoint);
  EvalReport report;

  if (!a.data.empty()) {
    if (!ck) throw UsageError("--data needs --checkpoint");
    const auto manifest = load_manifest(a.data);
    if (a.m && *a.m != manifest.mla) throw DataError("dataset was built for m = " + std::to_string(manifest.mla));
    report = evaluate_split(manifest, a.data, ck->params, ck->config, parse_split(a.split));
  } else {
    if (a.reference.empty()) throw UsageError("give --data, or --reference with --cube or --original/--corrected");
    const auto reference = load_image(a.reference);
    BeamformedImage original, corrected;
    if (!a.cube.empty()) {
      if (!ck) throw UsageError("--cube needs --checkpoint");
      const auto cube = load_cube(a.cube);
      const auto side = read_json(sidecar_path(a.cube));
      const MlaConfig mla{a.m.value_or(side.value("mla", 1))};
      original = hann_beamform(cube);
      original.mla = mla;
      corrected = correct_cube(cube, ck->params, ck->config, mla);
    } else {
      if (a.original.empty() || a.corrected.empty()) throw UsageError("give --cube, or both --original and --corrected");
      original = load_image(a.original);
      corrected = load_image(a.corrected);
    }
    report = evaluate_images(original, corrected, reference, MlaConfig{a.m.value_or(original.mla.factor)});
  }

  const auto j = to_json(report);
  if (!a.out.empty()) write_json(a.out, j);
  print_json(j);
  return kExitOk;
}

struct RenderArgs {
  std::string image, out;
  std::optional<int> m;
  double dynamic_range = 60.0;
};

int run_render(const RenderArgs& a) {
  const auto img = load_image(a.image);
  const auto gray = render_bmode(img, MlaConfig{a.m.value_or(img.mla.factor)}, a.dynamic_range);
  atomic_write(a.out, encode_png(gray));
  std::cerr << "wrote " << gray.width << "x" << gray.height << " " << a.out << "\n";
  return kExitOk;
}

struct GradCheckArgs {
  int elements = 4, depth = 16, lines = 16;
  std::size_t coordinates = 200;
  std::optional<std::uint64_t> seed;
  std::string loss = "l1";
  double tolerance = 1e-4;
};

int run_gradcheck(const GradCheckArgs& a) {
  const auto seed = a.seed.value_or(default_seed());
  const auto cfg = neural::NetConfig::tiny(a.elements);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  neural::Sample<double> s{neural::Tensor<double>({std::size_t(2 * a.elements), std::size_t(a.depth), std::size_t(a.lines)}),
                           neural::Tensor<double>({2, std::size_t(a.depth), std::size_t(a.lines)})};
  for (auto& v : s.cube.values()) v = g(rng);
  for (auto& v : s.target.values()) v = g(rng);
  const auto p = neural::init_params<double>(cfg, {.seed = seed, .zero_final_decoder = false});
  neural::GradCheckOptions opt;
  opt.coordinates = a.coordinates;
  opt.seed = seed;
  opt.loss = a.loss == "l1" ? neural::GradCheckLoss::l1 : neural::GradCheckLoss::projection;
  const auto r = neural::grad_check(cfg, p, s, opt);
  const bool pass = r.max_rel_error < a.tolerance;
  print_json({{"max_rel_error", r.max_rel_error},
              {"checked", r.checked},
              {"skipped_kinks", r.skipped_kinks},
              {"worst_parameter", r.worst_parameter},
              {"tolerance", a.tolerance},
              {"pass", pass}});
  return pass ? kExitOk : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phased-array MLA simulation, correction network and evaluation", "mla_forge"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Phantom plus full SLA transmit sweep, written as RF frames");
  sim.config.add(c_sim);
  c_sim->add_option("--out", sim.out, "Output directory")->required();
  c_sim->add_option("--phantom", sim.phantom)->check(CLI::IsMember({"grid_of_points", "random_speckle", "cyst"}));
  c_sim->add_option("--seed", sim.seed, "Phantom seed (default MLA_FORGE_SEED or 0)");
  c_sim->add_option("--noise-sigma", sim.noise_sigma)->check(CLI::NonNegativeNumber);

  BeamformArgs bf;
  auto* c_bf = app.add_subcommand("beamform", "RF frames to SLA cube and Hann image");
  c_bf->add_option("--rf", bf.rf, "Directory written by simulate")->required()->check(CLI::ExistingDirectory);
  c_bf->add_option("--cube", bf.cube_out, "Output cube (.mlat)");
  c_bf->add_option("--image", bf.image_out, "Output image (.mlat)");

  BeamformArgs dec;
  auto* c_dec = app.add_subcommand("decimate", "RF frames to an MLA cube from every m-th transmit");
  c_dec->add_option("--rf", dec.rf, "Directory written by simulate")->required()->check(CLI::ExistingDirectory);
  c_dec->add_option("--m", dec.m, "MLA factor")->required()->check(CLI::IsMember({3, 5, 7, 9, 11}));
  c_dec->add_option("--cube", dec.cube_out, "Output cube (.mlat)");
  c_dec->add_option("--image", dec.image_out, "Output uncorrected Hann image (.mlat)");

  DatasetArgs ds;
  auto* c_ds = app.add_subcommand("dataset", "Simulate paired (MLA cube, SLA target) frames with a split manifest");
  ds.config.add(c_ds);
  c_ds->add_option("--out", ds.out, "Output directory")->required();
  c_ds->add_option("--m", ds.m, "MLA factor")->check(CLI::IsMember({1, 3, 5, 7, 9, 11}));
  c_ds->add_option("--frames", ds.frames)->check(CLI::Range(3, 1000000));
  c_ds->add_option("--seed-base", ds.seed_base, "First phantom seed (default MLA_FORGE_SEED or 0)");
  c_ds->add_option("--phantom", ds.phantom)->check(CLI::IsMember({"grid_of_points", "random_speckle", "cyst"}));
  c_ds->add_option("--threads", ds.threads, "Worker threads, 0 for all cores");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train the correction network; builds the dataset if missing");
  tr.config.add(c_tr);
  c_tr->add_option("--m", tr.m, "MLA factor")->required()->check(CLI::IsMember({3, 5, 7, 9, 11}));
  c_tr->add_option("--data", tr.data, "Dataset directory")->required();
  c_tr->add_option("--out", tr.out, "Checkpoint path (.mlat)")->required();
  c_tr->add_option("--frames", tr.frames, "Frames when building the dataset")->check(CLI::Range(3, 1000000));
  c_tr->add_option("--epochs", tr.epochs)->check(CLI::NonNegativeNumber);
  c_tr->add_option("--batch", tr.batch)->check(CLI::PositiveNumber);
  c_tr->add_option("--lr", tr.lr)->check(CLI::NonNegativeNumber);
  c_tr->add_option("--base-channels", tr.base_channels)->check(CLI::PositiveNumber);
  c_tr->add_option("--seed", tr.seed, "Init and shuffle seed (default MLA_FORGE_SEED or 0)");
  c_tr->add_option("--threads", tr.threads, "Simulation threads, 0 for all cores");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "D_c and SSIM of original and corrected images, as JSON");
  c_ev->add_option("--checkpoint", ev.checkpoint)->check(CLI::ExistingFile);
  c_ev->add_option("--data", ev.data, "Dataset directory, averages over --split")->check(CLI::ExistingDirectory);
  c_ev->add_option("--split", ev.split)->check(CLI::IsMember({"train", "val", "test"}));
  c_ev->add_option("--cube", ev.cube, "MLA cube to correct with --checkpoint")->check(CLI::ExistingFile);
  c_ev->add_option("--original", ev.original, "Uncorrected image")->check(CLI::ExistingFile);
  c_ev->add_option("--corrected", ev.corrected, "Corrected image")->check(CLI::ExistingFile);
  c_ev->add_option("--reference", ev.reference, "SLA image")->check(CLI::ExistingFile);
  c_ev->add_option("--m", ev.m, "MLA factor (default from the image sidecar)")->check(CLI::PositiveNumber);
  c_ev->add_option("--out", ev.out, "Also write the report here");

  RenderArgs rd;
  auto* c_rd = app.add_subcommand("render", "B-mode PNG with the adjacent-line correlation profile");
  c_rd->add_option("--image", rd.image)->required()->check(CLI::ExistingFile);
  c_rd->add_option("--out", rd.out, "PNG path")->required();
  c_rd->add_option("--m", rd.m, "Group size for boundary ticks (default from the image sidecar)")->check(CLI::PositiveNumber);
  c_rd->add_option("--dynamic-range", rd.dynamic_range, "dB")->check(CLI::PositiveNumber);

  GradCheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of the tiny network in double precision");
  c_gc->add_option("--elements", gc.elements)->check(CLI::Range(2, 64));
  c_gc->add_option("--depth", gc.depth)->check(CLI::Range(1, 512));
  c_gc->add_option("--lines", gc.lines)->check(CLI::Range(1, 512));
  c_gc->add_option("--coordinates", gc.coordinates)->check(CLI::PositiveNumber);
  c_gc->add_option("--seed", gc.seed);
  c_gc->add_option("--loss", gc.loss)->check(CLI::IsMember({"l1", "projection"}));
  c_gc->add_option("--tolerance", gc.tolerance)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*c_sim) return run_simulate(sim);
    if (*c_bf) return run_beamform(bf);
    if (*c_dec) return run_beamform(dec);
    if (*c_ds) return run_dataset(ds);
    if (*c_tr) return run_train(tr);
    if (*c_ev) return run_eval(ev);
    if (*c_rd) return run_render(rd);
    if (*c_gc) return run_gradcheck(gc);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

// nhsplat: synth | train | render | eval
#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "nhsplat/data_io.hpp"
#include "nhsplat/error.hpp"
#include "nhsplat/optim.hpp"
#include "nhsplat/parallel.hpp"
#include "nhsplat/version.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace nhsplat;

namespace {

enum Exit { kOk = 0, kConfig = 2, kIo = 3, kNumerical = 4 };

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void dump(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  if (!out || !(out << text)) throw IoError("cannot write " + p.string());
}

// Refuses to reuse a non-empty directory unless forced.
void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw ConfigError(dir.string() + " exists and is not empty (use --force to overwrite)");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

Rgb parse_rgb(const std::string& s) {
  Rgb c{};
  char tail;
  if (std::sscanf(s.c_str(), "%lf,%lf,%lf%c", &c[0], &c[1], &c[2], &tail) != 3) {
    throw ConfigError("--background expects r,g,b, got '" + s + "'");
  }
  for (double v : c) {
    if (!(v >= 0.0)) throw ConfigError("--background components must be >= 0");
  }
  return c;
}

void write_ppm(const BasicImage<uint8_t>& img, const fs::path& p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()), std::streamsize(img.data.size()));
  if (!out) throw IoError("cannot write " + p.string());
}

struct SynthArgs {
  std::string spec, out, mode = "hdr";
  bool force = false;
  int threads = 0;
};

int cmd_synth(const SynthArgs& a) {
  const SceneSpec spec = SceneSpec::load(a.spec);
  const Supervision mode = parse_supervision(a.mode);
  prepare_out_dir(a.out, a.force);
  const SynthResult r = synthesize_dataset(spec, mode, a.threads);
  save_dataset(r.dataset, a.out, &r.ground_truth);
  dump(fs::path(a.out) / "spec.json", spec.to_json());
  std::printf("wrote %zu train + %zu test views (%dx%d, %s) to %s\n", r.dataset.train.size(),
              r.dataset.test.size(), spec.width, spec.height,
              std::string(to_string(mode)).c_str(), a.out.c_str());
  return kOk;
}

struct TrainArgs {
  std::string data, out, config;
  bool force = false;
  int threads = 0;
  CLI::App* app = nullptr;
  double lambda = 0, mu = 0, lr_luminance = 0;
  std::string luminance_space, color_model, background, bayer_pattern;
  int sh_degree = 0, iterations = 0, checkpoint_every = 0, log_every = 0;
  size_t num_gaussians = 0;
  uint64_t seed = 0;
  bool sh_warmup = false, adc = false;
};

bool given(CLI::App* app, const char* name) { return app->count(name) > 0; }

TrainConfig resolve_config(const TrainArgs& a, const Dataset& data) {
  TrainConfig cfg;
  cfg.supervision = data.supervision;
  bool config_threads = false;
  if (!a.config.empty()) {
    const std::string text = slurp(a.config);
    config_threads = json::parse(text, nullptr, false).contains("threads");
    cfg = TrainConfig::from_json(text, cfg);
  }
  CLI::App* app = a.app;
  if (given(app, "--lambda")) cfg.loss.lambda = a.lambda;
  if (given(app, "--mu")) cfg.loss.mu = a.mu;
  if (given(app, "--lr-luminance")) cfg.lr.luminance = a.lr_luminance;
  if (given(app, "--luminance-space")) cfg.luminance_space = parse_luminance_space(a.luminance_space);
  if (given(app, "--color-model")) cfg.color_model = parse_color_model(a.color_model);
  if (given(app, "--sh-degree")) cfg.sh_degree = a.sh_degree;
  if (given(app, "--iterations")) cfg.iterations = a.iterations;
  if (given(app, "--checkpoint-every")) cfg.checkpoint_every = a.checkpoint_every;
  if (given(app, "--log-every")) cfg.log_every = a.log_every;
  if (given(app, "--num-gaussians")) cfg.num_gaussians = a.num_gaussians;
  if (given(app, "--seed")) cfg.seed = a.seed;
  if (given(app, "--sh-warmup")) cfg.sh_warmup = a.sh_warmup;
  if (given(app, "--adc")) cfg.adc.enabled = a.adc;
  if (given(app, "--background")) cfg.background = parse_rgb(a.background);
  if (given(app, "--bayer-pattern")) {
    try {
      cfg.bayer_pattern = parse_bayer_pattern(a.bayer_pattern);
    } catch (const FormatError& e) {
      throw ConfigError(e.what());
    }
  }
  if (given(app, "--threads") || !config_threads) cfg.threads = a.threads;
  cfg.validate();
  return cfg;
}

int cmd_train(const TrainArgs& a) {
  const Dataset data = load_dataset(a.data);
  const TrainConfig cfg = resolve_config(a, data);
  prepare_out_dir(a.out, a.force);
  const fs::path out(a.out);

  json manifest;
  manifest["version"] = kVersion;
  manifest["config"] = json::parse(cfg.to_json());
  manifest["seed"] = cfg.seed;
  manifest["threads"] = cfg.threads;
  manifest["data_dir"] = fs::absolute(a.data).lexically_normal().string();
  const fs::path spec_path = fs::path(a.data) / "spec.json";
  if (fs::exists(spec_path)) {
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(SceneSpec::load(spec_path).hash()));
    manifest["scene_spec_hash"] = hex;
  } else {
    manifest["scene_spec_hash"] = nullptr;
  }
  manifest["outputs"] = {{"metrics", "metrics.ndjson"},
                         {"checkpoints", "checkpoints/"},
                         {"cloud", "cloud.nhgc"}};
  dump(out / "manifest.json", manifest.dump(2) + "\n");

  std::ofstream log(out / "metrics.ndjson", std::ios::trunc);
  if (!log) throw IoError("cannot write metrics log");
  TrainCallbacks cb;
  cb.on_log = [&](const MetricsRecord& r) {
    log << r.to_json() << "\n";
    log.flush();
  };
  cb.on_checkpoint = [&](int iter, const GaussianCloud& c) {
    char name[32];
    std::snprintf(name, sizeof name, "iter_%06d.nhgc", iter);
    fs::create_directories(out / "checkpoints");
    save_cloud(c, out / "checkpoints" / name);
  };
  const TrainResult r = train(data, cfg, cb);
  save_cloud(r.cloud, out / "cloud.nhgc");
  std::printf("trained %d iterations in %.1f s, %zu gaussians -> %s\n", cfg.iterations,
              r.seconds, r.cloud.size(), (out / "cloud.nhgc").c_str());
  return kOk;
}

struct RenderArgs {
  std::string cloud, poses, out, background;
  bool preview = false, force = false;
  int threads = 0;
};

int cmd_render(const RenderArgs& a) {
  const GaussianCloud cloud = load_cloud(a.cloud);
  const auto frames = load_pose_frames(a.poses);
  RenderSettings rs;
  if (!a.background.empty()) rs.background = parse_rgb(a.background);
  rs.threads = a.threads;
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw IoError("cannot create " + a.out + ": " + ec.message());
  for (const auto& f : frames) {
    const std::string stem = fs::path(f.file).stem().string();
    const HdrImage img = render(cloud, f.camera, rs).image;
    write_hdr_image(img, fs::path(a.out) / (stem + ".pfm"));
    if (a.preview) write_ppm(tonemap_preview(img), fs::path(a.out) / (stem + ".ppm"));
  }
  std::printf("rendered %zu views to %s\n", frames.size(), a.out.c_str());
  return kOk;
}

struct EvalArgs {
  std::string cloud, data, split = "test", json_out;
  int threads = 0;
};

int cmd_eval(const EvalArgs& a) {
  const GaussianCloud cloud = load_cloud(a.cloud);
  const Dataset data = load_dataset(a.data);
  RenderSettings rs;
  rs.threads = a.threads;
  const EvalResult r = evaluate(cloud, data, a.split, rs);
  std::fputs(r.table().c_str(), stdout);
  const fs::path out = a.json_out.empty() ? fs::path(a.cloud).parent_path() /
                                                ("eval_" + a.split + ".json")
                                          : fs::path(a.json_out);
  dump(out, r.to_json());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HDR Gaussian splatting: synthesize, train, render, evaluate"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));
  const int env_threads = threads_from_env(1);

  SynthArgs sa;
  sa.threads = env_threads;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset from a scene spec");
  synth->add_option("spec", sa.spec, "Scene spec JSON")->required();
  synth->add_option("out", sa.out, "Output dataset directory")->required();
  synth->add_option("--mode", sa.mode, "hdr or bayer");
  synth->add_flag("--force", sa.force, "Overwrite a non-empty output directory");
  synth->add_option("--threads", sa.threads, "Worker threads")->check(CLI::Range(1, 1024));

  TrainArgs ta;
  ta.threads = env_threads;
  auto* tr = app.add_subcommand("train", "Optimize a Gaussian cloud on a dataset");
  ta.app = tr;
  tr->add_option("data", ta.data, "Dataset directory")->required();
  tr->add_option("out", ta.out, "Run output directory")->required();
  tr->add_option("--config", ta.config, "Training config JSON");
  tr->add_option("--lambda", ta.lambda, "L1 weight in the objective");
  tr->add_option("--mu", ta.mu, "mu-law compression factor");
  tr->add_option("--lr-luminance", ta.lr_luminance, "Luminance learning rate");
  tr->add_option("--luminance-space", ta.luminance_space, "log or linear");
  tr->add_option("--color-model", ta.color_model, "decomposed or entangled");
  tr->add_option("--sh-degree", ta.sh_degree, "SH degree (0-5)");
  tr->add_option("--iterations", ta.iterations, "Iteration count");
  tr->add_option("--num-gaussians", ta.num_gaussians, "Initial Gaussian count");
  tr->add_option("--seed", ta.seed, "Random seed");
  tr->add_option("--checkpoint-every", ta.checkpoint_every, "Checkpoint interval (0 = off)");
  tr->add_option("--log-every", ta.log_every, "Metrics log interval");
  tr->add_option("--background", ta.background, "Background radiance r,g,b");
  tr->add_option("--bayer-pattern", ta.bayer_pattern, "Expected Bayer pattern");
  tr->add_flag("--sh-warmup", ta.sh_warmup, "Grow the SH degree progressively");
  tr->add_flag("--adc", ta.adc, "Enable adaptive density control");
  tr->add_flag("--force", ta.force, "Overwrite a non-empty output directory");
  tr->add_option("--threads", ta.threads, "Worker threads")->check(CLI::Range(1, 1024));

  RenderArgs ra;
  ra.threads = env_threads;
  auto* rd = app.add_subcommand("render", "Render a cloud at every pose of a pose file");
  rd->add_option("cloud", ra.cloud, "Cloud file")->required();
  rd->add_option("poses", ra.poses, "poses.json")->required();
  rd->add_option("out", ra.out, "Output directory")->required();
  rd->add_flag("--preview", ra.preview, "Also write tone-mapped 8-bit PPM previews");
  rd->add_option("--background", ra.background, "Background radiance r,g,b");
  rd->add_option("--threads", ra.threads, "Worker threads")->check(CLI::Range(1, 1024));

  EvalArgs ea;
  ea.threads = env_threads;
  auto* ev = app.add_subcommand("eval", "Evaluate a cloud on a dataset split");
  ev->add_option("cloud", ea.cloud, "Cloud file")->required();
  ev->add_option("data", ea.data, "Dataset directory")->required();
  ev->add_option("--split", ea.split, "train or test");
  ev->add_option("--json", ea.json_out, "Metrics JSON path (default: next to the cloud)");
  ev->add_option("--threads", ea.threads, "Worker threads")->check(CLI::Range(1, 1024));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*synth) return cmd_synth(sa);
    if (*tr) return cmd_train(ta);
    if (*rd) return cmd_render(ra);
    if (*ev) return cmd_eval(ea);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kIo;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kNumerical;
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "invalid argument: %s\n", e.what());
    return kConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kIo;
  }
  return kOk;
}

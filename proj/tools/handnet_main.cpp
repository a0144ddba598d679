#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "handnet/bench.hpp"
#include "handnet/checkpoint.hpp"
#include "handnet/data.hpp"
#include "handnet/errors.hpp"
#include "handnet/eval.hpp"
#include "handnet/gradcheck.hpp"
#include "handnet/image_io.hpp"
#include "handnet/network.hpp"
#include "handnet/train.hpp"

namespace fs = std::filesystem;
using namespace handnet;

namespace {

// Options shared by most subcommands.
struct Common {
  std::string network = "shallow";
  std::string out;
};

void add_network(CLI::App* app, Common& c) {
  app->add_option("--network", c.network, "shallow or deep")->capture_default_str();
}

void add_out(CLI::App* app, Common& c, const std::string& what) {
  app->add_option("--out", c.out, what + " (default: a fresh timestamped directory under runs/)");
}

void add_hyperparams(CLI::App* app, Hyperparams& h) {
  app->add_option("--seed", h.seed)->capture_default_str();
  app->add_option("--lr", h.base_lr, "base learning rate")->capture_default_str();
  app->add_option("--lr-decay", h.lr_decay, "per-epoch learning-rate factor")->capture_default_str();
  app->add_option("--dropout", h.dropout_rate)->capture_default_str();
  app->add_option("--batch-size", h.batch_size)->capture_default_str();
  app->add_option("--epochs", h.epochs)->capture_default_str();
  app->add_option("--iters", h.iters_per_epoch, "iterations per epoch")->capture_default_str();
  app->add_option("--adam-beta1", h.adam_beta1)->capture_default_str();
  app->add_option("--adam-beta2", h.adam_beta2)->capture_default_str();
  app->add_option("--adam-eps", h.adam_eps)->capture_default_str();
  app->add_option("--init-std", h.init_std)->capture_default_str();
}

// CLI11 only reads config files for the top-level app, so subcommand files
// are spliced into argv before parsing (see expand_config).
void add_config(CLI::App* app) {
  app->add_option("--config", "key=value file; command-line flags take precedence");
}

std::string unquote(std::string v) {
  const auto trim = [](std::string& t) {
    t.erase(0, t.find_first_not_of(" \t\r"));
    t.erase(t.find_last_not_of(" \t\r") + 1);
  };
  trim(v);
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) v = v.substr(1, v.size() - 2);
  return v;
}

// Every key=value line of the --config file becomes --key=value unless the
// key was given on the command line. Arrays ([a, b]) repeat the flag.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string file;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) file = args[i + 1];
    if (args[i].starts_with("--config=")) file = args[i].substr(9);
  }
  if (file.empty()) return args;
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file " + file);

  auto given = [&](const std::string& key) {
    const std::string flag = "--" + key;
    for (const auto& a : args)
      if (a == flag || a.starts_with(flag + "=")) return true;
    return false;
  };
  std::vector<std::string> extra;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    const std::string t = unquote(line);
    if (t.empty() || t[0] == '#' || t[0] == ';' || t[0] == '[') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(file + " line " + std::to_string(no) + ": expected key=value");
    const std::string key = unquote(t.substr(0, eq));
    const std::string value = unquote(t.substr(eq + 1));
    if (key == "config" || value.empty() || given(key)) continue;
    if (value.size() >= 2 && value.front() == '[' && value.back() == ']') {
      std::stringstream items(value.substr(1, value.size() - 2));
      for (std::string item; std::getline(items, item, ',');) extra.push_back("--" + key + "=" + unquote(item));
    } else {
      extra.push_back("--" + key + "=" + value);
    }
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

// Creates the output directory. Without --out a new runs/<cmd>-<time>
// directory is used so earlier results are never touched.
fs::path prepare_out(const CLI::App* app, Common& c) {
  if (c.out.empty()) {
    fs::path base = fs::path("runs") / (app->get_name() + "-" + timestamp());
    fs::path dir = base;
    for (int i = 1; fs::exists(dir); ++i) dir = base.string() + "-" + std::to_string(i);
    c.out = dir.string();
  }
  const fs::path dir(c.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw Error("cannot write " + path.string());
}

void echo_config(const CLI::App* app, const fs::path& dir) {
  std::istringstream all(app->config_to_str(/*default_also=*/true, /*write_description=*/false));
  std::string echo;
  for (std::string line; std::getline(all, line);)
    if (!line.starts_with("config=")) echo += line + '\n';
  write_text(dir / "config.echo", echo);
}

std::vector<Sample> samples_from(const std::string& manifest, const std::string& root, std::size_t size) {
  const auto entries = load_manifest(manifest);
  const fs::path base = root.empty() ? fs::path(manifest).parent_path() : fs::path(root);
  return load_samples(entries, base, size);
}

TensorF image_tensor(const std::string& path, std::size_t size) {
  return decode_and_prepare(ManifestEntry{path, Label::kHand}, fs::path(), size).pixels;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hand / no-hand CNN engine"};
  app.require_subcommand(1);

  // train
  Common train_c;
  Hyperparams train_h;
  std::string train_manifest, train_root;
  int train_precision = 32;
  auto* train_cmd = app.add_subcommand("train", "train one network and save model.hfck + loss.csv");
  add_config(train_cmd);
  add_network(train_cmd, train_c);
  add_out(train_cmd, train_c, "output directory");
  add_hyperparams(train_cmd, train_h);
  train_cmd->add_option("--manifest", train_manifest, "CSV manifest (path,label)")->required();
  train_cmd->add_option("--data-root", train_root, "image root (default: manifest directory)");
  train_cmd->add_option("--precision", train_precision, "arithmetic width for training: 32 or 64")
      ->check(CLI::IsMember({32, 64}))
      ->capture_default_str();

  // crossval
  Common cv_c;
  Hyperparams cv_h;
  std::string cv_manifest, cv_root;
  std::size_t cv_k = 10, cv_jobs = 1;
  auto* cv_cmd = app.add_subcommand("crossval", "stratified k-fold cross-validation");
  add_config(cv_cmd);
  add_network(cv_cmd, cv_c);
  add_out(cv_cmd, cv_c, "output directory");
  add_hyperparams(cv_cmd, cv_h);
  cv_cmd->add_option("--manifest", cv_manifest)->required();
  cv_cmd->add_option("--data-root", cv_root);
  cv_cmd->add_option("--k", cv_k, "number of folds")->capture_default_str();
  cv_cmd->add_option("--jobs", cv_jobs, "folds trained in parallel")->capture_default_str();

  // positive
  Common pos_c;
  std::string pos_manifest, pos_root;
  std::vector<std::string> pos_checkpoints;
  auto* pos_cmd = app.add_subcommand("positive", "true-positive rate of one or more models on an all-hand set");
  add_config(pos_cmd);
  add_network(pos_cmd, pos_c);
  add_out(pos_cmd, pos_c, "output directory");
  pos_cmd->add_option("--manifest", pos_manifest)->required();
  pos_cmd->add_option("--data-root", pos_root);
  pos_cmd->add_option("--checkpoint", pos_checkpoints, "model file, repeatable")->required()->expected(1, -1);

  // bench
  Common bench_c;
  std::string bench_checkpoint, bench_profile, bench_their_profile;
  std::size_t bench_warmup = 10, bench_runs = 100;
  std::uint64_t bench_seed = 0;
  double bench_our_ms = 0, bench_their_ms = 0, bench_search_w = 0, bench_search_h = 0;
  bool bench_paper_compat = false;
  auto* bench_cmd = app.add_subcommand("bench", "single-image latency, FLOPs and hardware-normalized comparison");
  add_config(bench_cmd);
  add_network(bench_cmd, bench_c);
  add_out(bench_cmd, bench_c, "output directory");
  bench_cmd->add_option("--checkpoint", bench_checkpoint, "model file (default: fresh weights from --seed)");
  bench_cmd->add_option("--seed", bench_seed)->capture_default_str();
  bench_cmd->add_option("--warmup", bench_warmup)->capture_default_str();
  bench_cmd->add_option("--runs", bench_runs)->capture_default_str();
  bench_cmd->add_option("--profile", bench_profile, "hardware profile of this machine");
  bench_cmd->add_option("--their-profile", bench_their_profile, "hardware profile of the compared system");
  bench_cmd->add_option("--their-ms", bench_their_ms, "reported time of the compared system");
  bench_cmd->add_option("--search-w", bench_search_w, "divide --their-ms by this search width");
  bench_cmd->add_option("--search-h", bench_search_h, "divide --their-ms by this search height");
  bench_cmd->add_option("--our-ms", bench_our_ms, "use this time instead of the measured mean");
  bench_cmd->add_flag("--paper-compat", bench_paper_compat, "round intermediates as the published chain does");

  // gradcheck
  Common gc_c;
  std::string gc_network = "both";
  std::uint64_t gc_seed = 0;
  std::size_t gc_seeds = 5;
  GradCheckOptions gc_opts;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every analytic gradient");
  add_config(gc_cmd);
  gc_cmd->add_option("--network", gc_network, "shallow, deep or both")
      ->check(CLI::IsMember({"shallow", "deep", "both"}))
      ->capture_default_str();
  gc_cmd->add_option("--out", gc_c.out, "also write the tables here");
  gc_cmd->add_option("--seed", gc_seed, "first seed")->capture_default_str();
  gc_cmd->add_option("--seeds", gc_seeds, "number of consecutive seeds")->capture_default_str();
  gc_cmd->add_option("--tolerance", gc_opts.tolerance)->capture_default_str();
  gc_cmd->add_option("--max-elements", gc_opts.max_elements)->capture_default_str();

  // predict
  Common pred_c;
  std::string pred_checkpoint, pred_image;
  auto* pred_cmd = app.add_subcommand("predict", "classify one image");
  add_config(pred_cmd);
  add_network(pred_cmd, pred_c);
  pred_cmd->add_option("--checkpoint", pred_checkpoint)->required();
  pred_cmd->add_option("--image", pred_image)->required();

  // dump-activations
  Common dump_c;
  std::string dump_checkpoint, dump_image;
  auto* dump_cmd = app.add_subcommand("dump-activations", "write the last convolution's maps as PGM files");
  add_config(dump_cmd);
  add_network(dump_cmd, dump_c);
  add_out(dump_cmd, dump_c, "output directory");
  dump_cmd->add_option("--checkpoint", dump_checkpoint)->required();
  dump_cmd->add_option("--image", dump_image)->required();

  // make-synth
  Common synth_c;
  std::size_t synth_n = 32, synth_size = kInputSize;
  std::uint64_t synth_seed = 0;
  std::string synth_format = "png";
  auto* synth_cmd = app.add_subcommand("make-synth", "write a separable synthetic dataset and its manifest");
  add_config(synth_cmd);
  add_out(synth_cmd, synth_c, "output directory");
  synth_cmd->add_option("--n", synth_n, "number of images (even)")->capture_default_str();
  synth_cmd->add_option("--seed", synth_seed)->capture_default_str();
  synth_cmd->add_option("--size", synth_size, "image side")->capture_default_str();
  synth_cmd->add_option("--format", synth_format)->check(CLI::IsMember({"png", "jpeg"}))->capture_default_str();

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
    app.parse(args);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_codes::kConfig;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::FileError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_codes::kConfig;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_codes::kUsage;
  }

  try {
    if (train_cmd->parsed()) {
      const auto t0 = std::chrono::steady_clock::now();
      const NetworkSpec spec = build_network(parse_network_id(train_c.network));
      train_h.validate();
      const auto samples = samples_from(train_manifest, train_root, spec.input_shape[0]);
      const fs::path dir = prepare_out(train_cmd, train_c);
      echo_config(train_cmd, dir);
      ModelState<float> model;
      LossTrace trace;
      if (train_precision == 64) {
        auto r = train<double>(spec, samples, train_h);
        model = r.model.cast<float>();
        trace = std::move(r.trace);
      } else {
        auto r = train<float>(spec, samples, train_h);
        model = std::move(r.model);
        trace = std::move(r.trace);
      }
      save_checkpoint(model, dir / "model.hfck");
      write_trace_csv(dir / "loss.csv", trace);
      std::printf("final_loss=%.6f\nwall_time_s=%.2f\nout=%s\n", trace.empty() ? 0.0 : trace.back().loss,
                  seconds_since(t0), dir.string().c_str());
    } else if (cv_cmd->parsed()) {
      const auto t0 = std::chrono::steady_clock::now();
      const NetworkSpec spec = build_network(parse_network_id(cv_c.network));
      cv_h.validate();
      const auto samples = samples_from(cv_manifest, cv_root, spec.input_shape[0]);
      const fs::path dir = prepare_out(cv_cmd, cv_c);
      echo_config(cv_cmd, dir);
      CrossValOptions opts;
      opts.jobs = cv_jobs;
      opts.on_fold_done = [&](const FoldResult& f, const ModelState<float>& m) {
        save_checkpoint(m, dir / ("fold_" + std::to_string(f.fold) + ".hfck"));
        std::printf("fold %zu accuracy=%.6f\n", f.fold, f.accuracy);
        std::fflush(stdout);
      };
      const EvalReport report = cross_validate(samples, spec, cv_h, cv_k, opts);
      write_text(dir / "report.txt", format_report(report));
      write_text(dir / "folds.csv", folds_csv(report));
      std::printf("mean_accuracy=%.6f\nstd_accuracy=%.6f\nwall_time_s=%.2f\nout=%s\n", report.mean, report.std,
                  seconds_since(t0), dir.string().c_str());
    } else if (pos_cmd->parsed()) {
      const NetworkSpec spec = build_network(parse_network_id(pos_c.network));
      const auto samples = samples_from(pos_manifest, pos_root, spec.input_shape[0]);
      std::vector<ModelState<float>> models;
      for (const auto& path : pos_checkpoints) models.push_back(load_checkpoint(path, spec));
      const PositiveReport report = positive_test(models, samples);
      const fs::path dir = prepare_out(pos_cmd, pos_c);
      echo_config(pos_cmd, dir);
      const std::string text = format_positive_report(report, pos_checkpoints);
      write_text(dir / "report.txt", text);
      std::fputs(text.c_str(), stdout);
    } else if (bench_cmd->parsed()) {
      const NetworkSpec spec = build_network(parse_network_id(bench_c.network));
      if (bench_runs == 0) throw ConfigError("--runs must be at least 1");
      std::optional<HardwareProfile> ours, theirs;
      if (!bench_profile.empty()) ours = load_profile(bench_profile);
      if (!bench_their_profile.empty()) theirs = load_profile(bench_their_profile);
      if (theirs && !ours) throw ConfigError("--their-profile needs --profile for this machine");
      if (theirs && !(bench_their_ms > 0)) throw ConfigError("--their-profile needs a positive --their-ms");
      if ((bench_search_w > 0) != (bench_search_h > 0)) {
        throw ConfigError("--search-w and --search-h go together");
      }
      const ModelState<float> model =
          bench_checkpoint.empty() ? init_params<float>(spec, bench_seed) : load_checkpoint(bench_checkpoint, spec);
      const fs::path dir = prepare_out(bench_cmd, bench_c);
      echo_config(bench_cmd, dir);
      const BenchReport report = measure_latency(model, bench_warmup, bench_runs);
      std::string text = format_bench_report(report);
      write_text(dir / "latencies.csv", latencies_csv(report));
      if (ours && theirs) {
        double their_ms = bench_their_ms;
        if (bench_search_w > 0) {
          their_ms = best_case_time(bench_their_ms, bench_search_w, bench_search_h, bench_paper_compat);
        }
        const double our_ms = bench_our_ms > 0 ? bench_our_ms : report.mean_ms;
        const Comparison c = normalize_comparison(our_ms, *ours, their_ms, *theirs, bench_paper_compat);
        const std::string table = format_comparison(c, our_ms, *ours, their_ms, *theirs, bench_paper_compat);
        write_text(dir / "comparison.txt", table);
        text += '\n' + table;
      }
      write_text(dir / "bench.txt", text);
      std::fputs(text.c_str(), stdout);
    } else if (gc_cmd->parsed()) {
      std::vector<NetworkId> ids;
      if (gc_network != "deep") ids.push_back(NetworkId::kShallow);
      if (gc_network != "shallow") ids.push_back(NetworkId::kDeep);
      std::string text;
      bool all_passed = true;
      for (NetworkId id : ids) {
        const NetworkSpec spec = gradcheck_spec(id);
        for (std::uint64_t s = gc_seed; s < gc_seed + gc_seeds; ++s) {
          const GradCheckResult r = check_network(spec, s, gc_opts);
          const std::string block =
              "network=" + std::string(to_string(id)) + " seed=" + std::to_string(s) + '\n' + format_gradcheck(r) + '\n';
          std::fputs(block.c_str(), stdout);
          std::fflush(stdout);
          text += block;
          all_passed = all_passed && r.passed;
        }
      }
      if (!gc_c.out.empty()) {
        const fs::path dir = prepare_out(gc_cmd, gc_c);
        echo_config(gc_cmd, dir);
        write_text(dir / "gradcheck.txt", text);
      }
      std::puts(all_passed ? "gradcheck: PASS" : "gradcheck: FAIL");
      return all_passed ? exit_codes::kOk : exit_codes::kFailure;
    } else if (pred_cmd->parsed()) {
      const NetworkSpec spec = build_network(parse_network_id(pred_c.network));
      const ModelState<float> model = load_checkpoint(pred_checkpoint, spec);
      const TensorF image = image_tensor(pred_image, spec.input_shape[0]);
      const TensorF probs = predict(model, image.reshaped(Shape{1, spec.input_shape[0], spec.input_shape[1], 3}));
      const Label label = label_of(probs.reshaped(Shape{kNumClasses}));
      std::printf("%s nohand=%.6f hand=%.6f\n", to_string(label), probs[0], probs[1]);
    } else if (dump_cmd->parsed()) {
      const NetworkSpec spec = build_network(parse_network_id(dump_c.network));
      const ModelState<float> model = load_checkpoint(dump_checkpoint, spec);
      const TensorF image = image_tensor(dump_image, spec.input_shape[0]);
      const auto maps = export_activation_maps(model, image);
      const fs::path dir = prepare_out(dump_cmd, dump_c);
      echo_config(dump_cmd, dir);
      write_activation_maps(dir, maps);
      std::printf("maps=%zu\nout=%s\n", maps.size(), dir.string().c_str());
    } else if (synth_cmd->parsed()) {
      const auto samples = synth_dataset(synth_n, synth_seed, synth_size);
      const fs::path dir = prepare_out(synth_cmd, synth_c);
      echo_config(synth_cmd, dir);
      fs::create_directories(dir / "images");
      std::vector<ManifestEntry> entries;
      char name[64];
      const char* ext = synth_format == "png" ? "png" : "jpg";
      for (std::size_t i = 0; i < samples.size(); ++i) {
        RgbImage img{synth_size, synth_size, {}};
        img.rgb.reserve(samples[i].pixels.size());
        for (float v : samples[i].pixels.data()) img.rgb.push_back(std::round(v * 255.0f));
        std::snprintf(name, sizeof name, "images/%05zu.%s", i, ext);
        if (synth_format == "png") {
          write_png(dir / name, img);
        } else {
          write_jpeg(dir / name, img);
        }
        entries.push_back({name, label_of(samples[i].label)});
      }
      write_manifest(dir / "manifest.csv", entries);
      std::printf("images=%zu\nmanifest=%s\n", entries.size(), (dir / "manifest.csv").string().c_str());
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_codes::kFailure;
  }
  return exit_codes::kOk;
}

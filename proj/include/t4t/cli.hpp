#pragma once

#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "t4t/checkpoint.hpp"
#include "t4t/checks.hpp"
#include "t4t/complexity.hpp"
#include "t4t/latency.hpp"
#include "t4t/runtime.hpp"
#include "t4t/session.hpp"
#include "t4t/train.hpp"

namespace t4t::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitInternal = 2;

struct ModelFlags {
  std::string variant = "tiny";
  int tpm_channels = 64;
  bool dual = true;

  void attach(CLI::App* sub) {
    sub->add_option("--variant", variant, "Model size: nano, tiny, small or medium")->capture_default_str();
    sub->add_option("--tpm-channels", tpm_channels, "Shared decoder width (64, 128, 256, 512)")->capture_default_str();
    sub->add_flag("--dual-head,!--single-head", dual, "Build both heads (default) or only the general head");
  }
  ModelConfig config() const { return ModelConfig::preset(parse_variant(variant), dual, tpm_channels); }
};

// 64-bit FNV-1a over the id sequence.
inline std::string mask_digest(std::span<const std::int32_t> mask) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::int32_t v : mask) {
    auto u = static_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) {
      h ^= (u >> (8 * b)) & 0xFF;
      h *= 1099511628211ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string frame_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return buf;
}

inline void write_labelled(const std::string& dir, const std::vector<SynthSample>& data) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    const std::string base = (std::filesystem::path(dir) / frame_stem(i)).string();
    write_ppm(base + ".ppm", tensor_to_image(s.image));
    write_pgm(base + ".general.pgm", mask_to_pgm(s.general_mask, s.height, s.width));
    write_pgm(base + ".trans.pgm", mask_to_pgm(s.trans_mask, s.height, s.width));
  }
}

// NNNN.ppm with NNNN.general.pgm and NNNN.trans.pgm ground truth.
inline std::vector<SynthSample> read_labelled(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ValidationError(dir + " is not a directory");
  std::vector<std::string> stems;
  static const std::regex kStem(R"((\d{4,})\.ppm)");
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    std::smatch m;
    if (std::regex_match(name, m, kStem)) stems.push_back(m[1].str());
  }
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) throw ValidationError(dir + ": no NNNN.ppm images found");
  std::vector<SynthSample> out;
  for (const auto& stem : stems) {
    const std::string base = (fs::path(dir) / stem).string();
    const auto rgb = read_ppm(base + ".ppm");
    SynthSample s;
    s.height = rgb.height;
    s.width = rgb.width;
    s.image = reshape(image_to_tensor<float>(rgb), Shape{3, rgb.height, rgb.width});
    s.general_mask = mask_from_pgm(read_pgm(base + ".general.pgm"));
    s.trans_mask = mask_from_pgm(read_pgm(base + ".trans.pgm"));
    if (s.general_mask.size() != rgb.height * rgb.width || s.trans_mask.size() != s.general_mask.size())
      throw ValidationError(base + ": mask extents differ from the image");
    out.push_back(std::move(s));
  }
  return out;
}

inline Trans4Trans<float> model_from(const std::string& checkpoint, const ModelFlags& flags, std::uint64_t seed) {
  if (!checkpoint.empty()) return load_checkpoint<float>(checkpoint);
  return Trans4Trans<float>(flags.config(), seed);
}

class Dispatcher {
 public:
  Dispatcher(std::ostream& out, std::ostream& err) : out_(out), err_(err) { build(); }

  int run(int argc, const char* const* argv) {
    try {
      app_.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      out_ << app_.help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out_ << app_.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      err_ << "error: " << e.what() << "\n\n" << app_.help();
      return kExitValidation;
    }
    try {
      init_runtime(deterministic_);
      handler_();
      return kExitOk;
    } catch (const ValidationError& e) {
      return fail(e.what(), kExitValidation);
    } catch (const ConfigError& e) {
      return fail(e.what(), kExitValidation);
    } catch (const ParseError& e) {
      return fail(e.what(), kExitValidation);
    } catch (const ShapeError& e) {
      return fail(e.what(), kExitValidation);
    } catch (const CheckFailed& e) {
      return fail(e.what(), kExitValidation);
    } catch (const NumericError& e) {
      return fail(std::string("numeric failure: ") + e.what(), kExitInternal);
    } catch (const std::exception& e) {
      return fail(std::string("internal: ") + e.what(), kExitInternal);
    }
  }

 private:
  struct CheckFailed : std::runtime_error {
    using std::runtime_error::runtime_error;
  };

  int fail(const std::string& msg, int code) {
    err_ << "error: " << msg << '\n';
    return code;
  }

  std::uint64_t seed_or(std::uint64_t fallback) const { return seed_.value_or(fallback); }

  void build() {
    app_.name("t4t");
    app_.description("Dual-head transparency-aware segmentation and navigation toolkit");
    app_.require_subcommand(1);
    app_.fallthrough();
    app_.set_config("--config", "", "TOML/INI file of option defaults; [subcommand] sections apply to that subcommand");
    app_.add_option("--seed", seed_, "Random seed (default depends on the subcommand)");
    app_.add_flag("--deterministic", deterministic_, "Single-threaded BLAS for bitwise-repeatable runs");
    add_shapes();
    add_params();
    add_flops();
    add_gradcheck();
    add_synth();
    add_train();
    add_eval();
    add_infer();
    add_latency();
    add_navsim();
  }

  CLI::App* sub(const std::string& name, const std::string& desc) { return app_.add_subcommand(name, desc); }

  void add_shapes() {
    auto* s = sub("shapes", "Run one forward pass and print the pyramid and logits shapes");
    auto* f = new_flags();
    f->attach(s);
    s->add_option("--size", size_, "Square input extent (multiple of 32)")->capture_default_str();
    s->callback([this, f] {
      handler_ = [this, f] {
        Trans4Trans<float> model(f->config(), seed_or(0));
        std::mt19937_64 rng(seed_or(0));
        std::uniform_real_distribution<float> u(0, 1);
        Array<float> img(Shape{1, 3, static_cast<std::size_t>(size_), static_cast<std::size_t>(size_)});
        for (auto& v : img.data()) v = u(rng);
        NoGradScope<float> ng;
        const auto pyr = model.encode(img);
        for (std::size_t i = 0; i < 4; ++i)
          out_ << "F" << i + 1 << "  stride " << std::setw(2) << ModelConfig::stride(static_cast<int>(i)) << "  "
               << to_string(pyr[i].shape()) << '\n';
        for (std::size_t h = 0; h < model.config().outputs.size(); ++h)
          out_ << "head " << model.config().outputs[h].name << "  "
               << to_string(model.decode_head(pyr, h, img.dim(2), img.dim(3)).shape()) << '\n';
      };
    });
  }

  void add_report(const std::string& name, const std::string& desc, bool flops) {
    auto* s = sub(name, desc);
    auto* f = new_flags();
    f->attach(s);
    s->add_option("--size", size_, "Square input extent used for the FLOP count")->capture_default_str();
    s->add_flag("--per-layer", per_layer_, "List every layer row");
    s->add_option("--format", format_, "text or jsonl")->check(CLI::IsMember({"text", "jsonl"}))->capture_default_str();
    s->callback([this, f, flops] {
      handler_ = [this, f, flops] {
        const auto cfg = f->config();
        const auto r = flops ? count_flops(cfg, size_, size_) : count_params(cfg);
        if (format_ == "jsonl") {
          print_report_jsonl(out_, r);
        } else {
          out_ << to_string(cfg.variant) << (cfg.dual_head() ? " dual-head" : " single-head") << ", tpm "
               << cfg.tpm_channels << '\n';
          print_report_text(out_, r, per_layer_);
        }
      };
    });
  }
  void add_params() { add_report("params", "Analytic parameter count", false); }
  void add_flops() { add_report("flops", "Analytic FLOP count (one multiply-accumulate = 2 FLOPs)", true); }

  void add_gradcheck() {
    auto* s = sub("gradcheck", "Whole-model 64-bit gradient check of the nano config against central differences");
    s->add_option("--size", gc_size_, "Square input extent")->capture_default_str();
    s->add_option("--eps", gc_eps_, "Finite-difference step")->capture_default_str();
    s->add_option("--tolerance", gc_tol_, "Maximum accepted relative error")->capture_default_str();
    s->callback([this] {
      handler_ = [this] {
        const auto r = model_gradient_check(ModelConfig::preset(Variant::Nano), seed_or(0),
                                            static_cast<std::size_t>(gc_size_), gc_eps_);
        out_ << "coordinates " << r.coordinates << "\nmax rel err " << std::scientific << std::setprecision(3)
             << r.max_rel_error << std::defaultfloat << " (input " << r.worst_input << ", index " << r.worst_index
             << ")\n";
        if (!(r.max_rel_error < gc_tol_)) throw CheckFailed("gradient check exceeded tolerance");
        out_ << "pass\n";
      };
    });
  }

  void add_synth() {
    auto* s = sub("synth", "Write a synthetic labelled dataset (NNNN.ppm, NNNN.general.pgm, NNNN.trans.pgm)");
    s->add_option("--out", out_dir_, "Output directory")->required();
    s->add_option("--count", count_, "Number of samples")->capture_default_str();
    s->add_option("--size", data_size_, "Square extent (multiple of 32)")->capture_default_str();
    s->callback([this] {
      handler_ = [this] {
        const auto data = generate_synth_dataset(seed_or(7), static_cast<std::size_t>(count_),
                                                 static_cast<std::size_t>(data_size_), static_cast<std::size_t>(data_size_));
        write_labelled(out_dir_, data);
        out_ << "wrote " << data.size() << " samples to " << out_dir_ << '\n';
      };
    });
  }

  void add_train() {
    auto* s = sub("train-toy", "Overfit the nano dual-head model on a small synthetic set");
    s->add_option("--data", data_dir_, "Labelled directory; synthetic data is generated when omitted");
    s->add_option("--data-seed", data_seed_, "Seed of the generated dataset")->capture_default_str();
    s->add_option("--count", count_, "Generated samples")->capture_default_str();
    s->add_option("--size", data_size_, "Generated sample extent")->capture_default_str();
    s->add_option("--epochs", epochs_, "Training epochs")->capture_default_str();
    s->add_option("--lr", lr_, "Base learning rate of the poly schedule")->capture_default_str();
    s->add_option("--batch", batch_, "Batch size")->capture_default_str();
    s->add_option("--loss-csv", loss_csv_, "Write the per-epoch loss curve here");
    s->add_option("--checkpoint", checkpoint_, "Save the trained model here");
    s->add_option("--log-every", log_every_, "Print every n-th epoch (0 = never)")->capture_default_str();
    s->callback([this] {
      handler_ = [this] {
        const auto data = training_data();
        Trans4Trans<float> model(ModelConfig::preset(Variant::Nano), seed_or(1));
        TrainOptions opt;
        opt.epochs = epochs_;
        opt.base_lr = lr_;
        opt.batch_size = static_cast<std::size_t>(batch_);
        opt.seed = seed_or(1);
        const auto res = train_toy(model, data, opt, [this](const LossRow& r) {
          if (log_every_ > 0 && (r.epoch % log_every_ == 0 || r.epoch + 1 == epochs_))
            out_ << "epoch " << r.epoch << "  lr " << r.lr << "  loss " << r.loss_general << " + " << r.loss_trans
                 << '\n';
        });
        if (!loss_csv_.empty()) {
          std::ofstream os(loss_csv_);
          if (!os) throw ValidationError("cannot open " + loss_csv_);
          write_loss_csv(os, res.curve);
        }
        if (!checkpoint_.empty()) save_checkpoint(checkpoint_, model);
        const auto ev = evaluate_dataset(model, data);
        out_ << nlohmann::json{{"epochs", epochs_},
                               {"steps", res.steps},
                               {"miou_general", ev.general.miou},
                               {"miou_trans", ev.trans.miou}}
                    .dump()
             << '\n';
      };
    });
  }

  std::vector<SynthSample> training_data() const {
    if (!data_dir_.empty()) return read_labelled(data_dir_);
    return generate_synth_dataset(data_seed_, static_cast<std::size_t>(count_), static_cast<std::size_t>(data_size_),
                                  static_cast<std::size_t>(data_size_));
  }

  void add_eval() {
    auto* s = sub("eval", "Confusion matrix, per-class IoU and mIoU of a checkpoint on labelled data");
    s->add_option("--checkpoint", checkpoint_, "Dual-head checkpoint")->required();
    s->add_option("--data", data_dir_, "Labelled directory; synthetic data is generated when omitted");
    s->add_option("--data-seed", data_seed_, "Seed of the generated dataset")->capture_default_str();
    s->add_option("--count", count_, "Generated samples")->capture_default_str();
    s->add_option("--size", data_size_, "Generated sample extent")->capture_default_str();
    s->callback([this] {
      handler_ = [this] {
        const auto model = load_checkpoint<float>(checkpoint_);
        if (!model.config().dual_head()) throw ConfigError("eval: checkpoint must hold both heads");
        const auto ev = evaluate_dataset(model, training_data());
        out_ << nlohmann::json{{"general", to_json(ev.general)}, {"trans", to_json(ev.trans)}}.dump() << '\n';
      };
    });
  }

  void add_infer() {
    auto* s = sub("infer", "Segment one PPM image; writes id masks and colour overlays");
    auto* f = new_flags();
    f->attach(s);
    s->add_option("--image", image_, "Input P6 image (extents multiple of 32)")->required();
    s->add_option("--checkpoint", checkpoint_, "Model weights; a seeded random model is used when omitted");
    s->add_option("--out", out_prefix_, "Output prefix for PREFIX.<head>.pgm and PREFIX.<head>.overlay.ppm");
    s->add_option("--alpha", alpha_, "Overlay opacity")->capture_default_str();
    s->callback([this, f] {
      handler_ = [this, f] {
        const auto model = model_from(checkpoint_, *f, seed_or(0));
        const auto rgb = read_ppm(image_);
        const auto masks = predict_masks(model, image_to_tensor<float>(rgb));
        nlohmann::json report;
        for (std::size_t h = 0; h < masks.size(); ++h) {
          const auto& name = model.config().outputs[h].name;
          std::map<std::string, std::size_t> hist;
          for (auto id : masks[h]) ++hist[class_name(name == "trans", id)];
          report[name] = {{"digest", mask_digest(masks[h])}, {"pixels", hist}};
          if (!out_prefix_.empty()) {
            write_pgm(out_prefix_ + "." + name + ".pgm", mask_to_pgm(masks[h], rgb.height, rgb.width));
            const auto pal = name == "trans" ? trans_palette() : general_palette();
            write_ppm(out_prefix_ + "." + name + ".overlay.ppm", render_overlay(rgb, masks[h], pal, alpha_));
          }
        }
        out_ << report.dump() << '\n';
      };
    });
  }

  void add_latency() {
    auto* s = sub("latency", "Time full inference: warm-up passes, then timed runs; reports mean and std in ms");
    auto* f = new_flags();
    f->attach(s);
    s->add_option("--runs", runs_, "Timed frames")->capture_default_str();
    s->add_option("--warmup", warmup_, "Untimed warm-up frames")->capture_default_str();
    s->add_option("--size", size_, "Square input extent")->capture_default_str();
    s->add_option("--batch", lat_batch_, "Batch size")->capture_default_str();
    s->add_flag("--json", json_, "Also print a JSON summary line");
    s->callback([this, f] {
      handler_ = [this, f] {
        Trans4Trans<float> model(f->config(), seed_or(0));
        const auto st = measure_latency(model, runs_, static_cast<std::size_t>(lat_batch_),
                                        static_cast<std::size_t>(size_), warmup_);
        out_ << std::fixed << std::setprecision(2) << f->variant << ": " << st.mean_ms << " ms +- " << st.std_ms
             << " ms per frame (" << st.runs << " runs, batch " << st.batch << ", " << st.size << "x" << st.size
             << ")\n"
             << std::defaultfloat;
        if (json_)
          out_ << nlohmann::json{{"variant", f->variant}, {"mean_ms", st.mean_ms}, {"std_ms", st.std_ms},
                                 {"runs", st.runs},       {"warmup", st.warmup},   {"batch", st.batch},
                                 {"size", st.size}}
                      .dump()
               << '\n';
      };
    });
  }

  void add_navsim() {
    auto* s = sub("navsim", "Replay an RGB-D directory through the feedback loop; one JSON line per tick");
    s->add_option("--frames", frames_dir_, "Replay directory (NNNN.ppm + NNNN.pgm, optional mask PGMs)")->required();
    s->add_flag("--fixture", fixture_, "First write the seeded walkway fixture into --frames");
    s->add_option("--fixture-frames", fixture_frames_, "Frames in the generated fixture")->capture_default_str();
    s->add_option("--fixture-size", fixture_size_, "Fixture extent as H W")->expected(2)->capture_default_str();
    s->add_option("--fps", fps_, "Frame rate used to stamp replay frames")->capture_default_str();
    s->add_option("--duration", duration_, "Session length in seconds (default: frames / fps)");
    s->add_option("--interval", interval_, "Seconds between feedback ticks");
    s->add_option("--nav-config", nav_config_, "JSON file of thresholds and class sets");
    s->add_option("--theta-obstacle", theta_obstacle_, "Obstacle depth threshold in metres");
    s->add_option("--theta-trans", theta_trans_, "Transparent stuff area threshold");
    s->add_option("--theta-walkable", theta_walkable_, "Walkable band ratio threshold");
    s->add_option("--checkpoint", checkpoint_, "Segment with this dual-head model instead of stored masks");
    s->add_option("--log", log_path_, "Write the event log here instead of stdout");
    s->callback([this] {
      handler_ = [this] {
        if (fixture_)
          write_walkway(frames_dir_, seed_or(1), static_cast<std::size_t>(fixture_frames_), fixture_size_[0],
                        fixture_size_[1]);
        NavConfig cfg = nav_config_.empty() ? NavConfig{} : load_nav_config(nav_config_);
        if (interval_) cfg.interval = *interval_;
        if (theta_obstacle_) cfg.theta_obstacle = *theta_obstacle_;
        if (theta_trans_) cfg.theta_trans = *theta_trans_;
        if (theta_walkable_) cfg.theta_walkable = *theta_walkable_;
        cfg.validate();
        const auto frames = scan_replay_dir(frames_dir_, fps_);
        const double duration = duration_.value_or(static_cast<double>(frames.size()) / fps_);
        std::optional<Trans4Trans<float>> model;
        Segmenter seg = precomputed_segmenter;
        if (!checkpoint_.empty()) {
          model.emplace(load_checkpoint<float>(checkpoint_));
          seg = model_segmenter(*model);
        }
        std::ofstream file;
        std::ostream* log = &out_;
        if (!log_path_.empty()) {
          file.open(log_path_);
          if (!file) throw ValidationError("cannot open " + log_path_);
          log = &file;
        }
        const auto r = run_session(frames, duration, cfg, seg, log);
        err_ << "navsim: " << r.events.size() << " events, " << r.skipped << " skipped, " << r.dropped
             << " frames dropped\n";
      };
    });
  }

  ModelFlags* new_flags() { return &flags_.emplace_back(); }

  std::ostream& out_;
  std::ostream& err_;
  CLI::App app_;
  std::function<void()> handler_;
  std::deque<ModelFlags> flags_;

  std::optional<std::uint64_t> seed_;
  bool deterministic_ = false;
  int size_ = 512;
  bool per_layer_ = false;
  std::string format_ = "text";
  int gc_size_ = 32;
  double gc_eps_ = 1e-5;
  double gc_tol_ = 1e-4;
  std::string out_dir_, data_dir_, loss_csv_, checkpoint_, image_, out_prefix_;
  int count_ = 8;
  int data_size_ = 64;
  std::uint64_t data_seed_ = 7;
  int epochs_ = 300;
  double lr_ = 1e-2;
  int batch_ = 2;
  int log_every_ = 25;
  double alpha_ = 0.5;
  int runs_ = 300;
  int warmup_ = kLatencyWarmup;
  int lat_batch_ = 1;
  bool json_ = false;
  std::string frames_dir_, nav_config_, log_path_;
  bool fixture_ = false;
  int fixture_frames_ = 100;
  std::vector<std::size_t> fixture_size_{120, 160};
  double fps_ = 10.0;
  std::optional<double> duration_, interval_, theta_obstacle_, theta_trans_, theta_walkable_;
};

inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Dispatcher d(out, err);
  return d.run(argc, argv);
}

}  // namespace t4t::cli

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fusenas/check_suite.hpp"
#include "fusenas/checkpoint.hpp"
#include "fusenas/dataset.hpp"
#include "fusenas/degrade.hpp"
#include "fusenas/facegen.hpp"
#include "fusenas/metrics.hpp"
#include "fusenas/png_io.hpp"
#include "fusenas/trainer.hpp"

namespace fs = std::filesystem;
using namespace fusenas;

namespace {

struct CommonTrainFlags {
  std::string config_path;
  std::int64_t seed = -1;
  int iterations = -1;
  int batch_size = -1;
  double lr = -1.0;
  double alpha_lr = -1.0;
  int resolution = -1;
  double iden_dropout = -1.0;
  int blocks = -1;
  int cell_channels = -1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "flat key = value config file");
    cmd->add_option("--seed", seed, "seed override");
    cmd->add_option("--iterations", iterations, "iteration override");
    cmd->add_option("--batch-size", batch_size, "batch size override");
    cmd->add_option("--lr", lr, "learning rate override");
    cmd->add_option("--alpha-lr", alpha_lr, "alpha learning rate override");
    cmd->add_option("--resolution", resolution, "resolution override");
    cmd->add_option("--iden-dropout", iden_dropout,
                    "identity dropout override");
    cmd->add_option("--blocks", blocks, "fusion blocks per cell");
    cmd->add_option("--cell-channels", cell_channels,
                    "fusion cell channel width");
  }

  train::TrainConfig resolve() const {
    train::TrainConfig cfg = train::TrainConfig::desk();
    if (!config_path.empty())
      cfg = train::TrainConfig::parse_file(config_path, cfg);
    if (seed >= 0) cfg.seed = std::uint64_t(seed);
    if (iterations >= 0) cfg.iterations = iterations;
    if (batch_size > 0) cfg.batch_size = batch_size;
    if (lr > 0) cfg.lr = lr;
    if (alpha_lr > 0) cfg.alpha_lr = alpha_lr;
    if (resolution > 0) cfg.resolution = resolution;
    if (iden_dropout >= 0) cfg.iden_dropout = iden_dropout;
    cfg.validate();
    return cfg;
  }

  model::ModelConfig resolve_model() const {
    model::ModelConfig mcfg;
    if (blocks > 0) mcfg.blocks = blocks;
    if (cell_channels > 0) mcfg.cell_channels = cell_channels;
    return mcfg;
  }
};

void write_curves(const std::string& path,
                  const std::vector<train::CurvePoint>& curve) {
  if (path.empty()) return;
  std::ofstream f(path);
  require(f.good(), "cannot write loss log: " + path);
  f << train::curves_to_jsonl(curve);
}

std::vector<std::string> input_images(const std::string& input) {
  std::vector<std::string> files;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input))
      if (e.is_regular_file() && e.path().extension() == ".png")
        files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(input);
  }
  require(!files.empty(), "no input images found at " + input);
  return files;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-degradation face restoration with searched fusion"};
  app.require_subcommand(1);

  // ---- faces -------------------------------------------------------------
  auto* faces = app.add_subcommand(
      "faces", "generate procedural clean face textures");
  std::string faces_out;
  int faces_count = 8, faces_size = 32;
  std::uint64_t faces_seed = 1;
  faces->add_option("--out", faces_out, "output directory")->required();
  faces->add_option("--count", faces_count, "number of faces");
  faces->add_option("--size", faces_size, "image side length");
  faces->add_option("--seed", faces_seed, "seed");

  // ---- synth -------------------------------------------------------------
  auto* synth = app.add_subcommand(
      "synth", "synthesize a degraded dataset with a manifest");
  std::string synth_clean, synth_set, synth_out;
  std::uint64_t synth_seed = 1;
  int synth_count = -1, synth_threads = 0;
  synth->add_option("--clean-dir", synth_clean, "directory of clean PNGs")
      ->required();
  synth->add_option("--testset", synth_set, "B, N, L, BN, BNL or train")
      ->required();
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_seed, "seed");
  synth->add_option("--count", synth_count,
                    "motion kernel count (blur sets) or total samples (train)");
  synth->add_option("--threads", synth_threads, "worker threads (0 = auto)");

  // ---- pretrain ----------------------------------------------------------
  auto* pretrain =
      app.add_subcommand("pretrain", "pretrain one task-specific encoder");
  std::string pre_task, pre_data, pre_out, pre_log;
  CommonTrainFlags pre_flags;
  pretrain->add_option("--task", pre_task, "blur, noise or lowlight")
      ->required();
  pretrain->add_option("--data", pre_data, "manifest path")->required();
  pretrain->add_option("--out", pre_out, "output checkpoint")->required();
  pretrain->add_option("--loss-log", pre_log, "loss curve output (jsonl)");
  pre_flags.attach(pretrain);

  // ---- search ---------------------------------------------------------------
  auto* search_cmd = app.add_subcommand(
      "search", "alternating weight/alpha architecture search");
  std::string se_data, se_out, se_arch, se_log;
  bool se_freeze = false;
  CommonTrainFlags se_flags;
  search_cmd->add_option("--data", se_data, "manifest path")->required();
  search_cmd->add_option("--out", se_out, "output checkpoint")->required();
  search_cmd->add_option("--arch-out", se_arch, "derived architecture file")
      ->required();
  search_cmd->add_option("--loss-log", se_log, "loss curve output (jsonl)");
  search_cmd->add_flag("--freeze-alpha", se_freeze,
                       "keep alpha logits fixed (diagnostic)");
  se_flags.attach(search_cmd);

  // ---- train ------------------------------------------------------------------
  auto* train_cmd =
      app.add_subcommand("train", "train the full restoration network");
  std::string tr_data, tr_out, tr_arch, tr_log;
  std::vector<std::string> tr_encoders;
  int tr_ckpt_every = 0;
  CommonTrainFlags tr_flags;
  train_cmd->add_option("--data", tr_data, "manifest path")->required();
  train_cmd->add_option("--out", tr_out, "output checkpoint")->required();
  train_cmd->add_option("--arch", tr_arch,
                        "derived architecture file (discrete mode)");
  train_cmd->add_option("--encoders", tr_encoders,
                        "pretrained encoder checkpoints");
  train_cmd->add_option("--loss-log", tr_log, "loss curve output (jsonl)");
  train_cmd->add_option("--checkpoint-every", tr_ckpt_every,
                        "periodic checkpoint interval");
  tr_flags.attach(train_cmd);

  // ---- restore -------------------------------------------------------------------
  auto* restore =
      app.add_subcommand("restore", "restore degraded images with a checkpoint");
  std::string re_ckpt, re_input, re_iden, re_out;
  restore->add_option("--ckpt", re_ckpt, "checkpoint path")->required();
  restore->add_option("--input", re_input, "input image or directory")
      ->required();
  restore->add_option("--identity-dir", re_iden,
                      "directory of clean reference images");
  restore->add_option("--out", re_out, "output directory")->required();

  // ---- eval -----------------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM report");
  std::string ev_pairs, ev_restored, ev_report;
  eval_cmd->add_option("--pairs", ev_pairs, "manifest of (clean, degraded)")
      ->required();
  eval_cmd->add_option("--restored", ev_restored, "directory of restored PNGs")
      ->required();
  eval_cmd->add_option("--report", ev_report, "report output path")
      ->required();

  // ---- gradcheck ---------------------------------------------------------------------
  auto* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::string gc_op;
  gradcheck->add_option("--op", gc_op, "run a single named check");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*faces) {
      fs::create_directories(faces_out);
      for (int i = 0; i < faces_count; ++i) {
        Image img = facegen::make_face(
            hash_combine(faces_seed, fnv1a("face-" + std::to_string(i))),
            faces_size);
        char name[32];
        std::snprintf(name, sizeof(name), "face%03d.png", i);
        write_png((fs::path(faces_out) / name).string(), img);
      }
      std::printf("wrote %d faces to %s\n", faces_count, faces_out.c_str());
      return 0;
    }

    if (*synth) {
      degrade::SynthOptions opt;
      if (synth_count > 0) {
        opt.motion_kernels = synth_count;
        opt.train_samples = synth_count;
      }
      opt.threads = synth_threads;
      auto rows = degrade::build_testset(
          degrade::testset_from_name(synth_set), synth_clean, synth_out,
          synth_seed, opt);
      std::printf("wrote %zu samples to %s\n", rows.size(),
                  synth_out.c_str());
      return 0;
    }

    if (*pretrain) {
      auto cfg = pre_flags.resolve();
      auto mcfg = pre_flags.resolve_model();
      Dataset data = Dataset::load(pre_data, /*with_identity=*/false);
      auto res = train::pretrain_encoder(pre_task, data, cfg, mcfg, pre_out);
      write_curves(pre_log, res.curve);
      std::printf("pretrained %s encoder -> %s (digest %016llx)\n",
                  pre_task.c_str(), pre_out.c_str(),
                  (unsigned long long)res.ckpt_digest);
      return 0;
    }

    if (*search_cmd) {
      auto cfg = se_flags.resolve();
      auto mcfg = se_flags.resolve_model();
      Dataset data = Dataset::load(se_data);
      train::SearchOptions opt;
      opt.freeze_alpha = se_freeze;
      if (!data.all_have_identity()) opt.weights.lambda_iden = 0.0;
      auto res = train::search(data, cfg, mcfg, se_out, se_arch, opt);
      write_curves(se_log, res.curves);
      std::printf("search done; architecture:\n%s",
                  fusion::arch_to_text(res.arch).c_str());
      return 0;
    }

    if (*train_cmd) {
      auto cfg = tr_flags.resolve();
      auto mcfg = tr_flags.resolve_model();
      Dataset data = Dataset::load(tr_data);
      train::TrainOptions opt;
      opt.encoder_ckpts = tr_encoders;
      opt.checkpoint_every = tr_ckpt_every;
      if (!tr_arch.empty()) {
        std::ifstream f(tr_arch);
        require(f.good(), "cannot open architecture file: " + tr_arch);
        std::stringstream buf;
        buf << f.rdbuf();
        opt.arch = fusion::arch_from_text(buf.str());
        opt.mode = model::FusionMode::discrete;
      }
      if (!data.all_have_identity()) opt.weights.lambda_iden = 0.0;
      auto res = train::train_final(data, cfg, mcfg, tr_out, opt);
      write_curves(tr_log, res.curve);
      std::printf("trained -> %s (digest %016llx)\n", tr_out.c_str(),
                  (unsigned long long)res.ckpt_digest);
      return 0;
    }

    if (*restore) {
      auto meta = read_checkpoint_meta(re_ckpt);
      require(meta.count("model_config"),
              "checkpoint lacks model_config metadata");
      model::ModelConfig mcfg =
          model::ModelConfig::deserialize(meta.at("model_config"));
      ParamStore<float> store(0);
      model::RestorationNet<float> net(store, mcfg);
      load_checkpoint(re_ckpt, store);

      model::FusionMode mode = model::FusionMode::relaxed;
      fusion::ArchSpec arch;
      if (meta.count("mode") && meta.at("mode") == "discrete") {
        mode = model::FusionMode::discrete;
        arch = fusion::arch_from_text(meta.at("arch"));
      }

      std::vector<std::pair<std::string, Image>> refs;
      if (!re_iden.empty())
        for (const auto& f : input_images(re_iden))
          refs.emplace_back(fs::path(f).stem().string(), read_png(f));

      fs::create_directories(re_out);
      for (const auto& f : input_images(re_input)) {
        Image y = read_png(f);
        Image restored = net.restore_image(
            y, refs, mode, mode == model::FusionMode::discrete ? &arch
                                                               : nullptr);
        std::string out_path =
            (fs::path(re_out) / fs::path(f).filename()).string();
        write_png(out_path, restored);
        std::printf("restored %s -> %s\n", f.c_str(), out_path.c_str());
      }
      return 0;
    }

    if (*eval_cmd) {
      std::ifstream f(ev_pairs);
      require(f.good(), "cannot open manifest: " + ev_pairs);
      std::vector<metrics::EvalRecord> records;
      std::string line;
      while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto row = degrade::manifest_row_from_json(line);
        fs::path restored_path =
            fs::path(ev_restored) / (fs::path(row.degraded_path).filename());
        require(fs::exists(restored_path),
                "restored image missing: " + restored_path.string());
        Image clean = read_png(row.clean_path);
        Image restored = read_png(restored_path.string());
        metrics::EvalRecord rec;
        rec.id = row.id;
        rec.psnr_db = metrics::psnr(restored, clean);
        rec.ssim = metrics::ssim(restored, clean);
        records.push_back(rec);
      }
      require(!records.empty(), "no pairs to evaluate");
      metrics::write_report(ev_report, records);
      double mp = 0;
      for (const auto& r : records) mp += r.psnr_db;
      std::printf("evaluated %zu pairs, mean PSNR %.2f dB -> %s\n",
                  records.size(), mp / double(records.size()),
                  ev_report.c_str());
      return 0;
    }

    if (*gradcheck) {
      auto results = gradient_check_suite(gc_op);
      require(!results.empty(),
              gc_op.empty() ? "empty suite" : "no check named " + gc_op);
      bool all_pass = true;
      for (const auto& r : results) {
        std::printf("%-28s max_rel_err %.3e  %s\n", r.name.c_str(),
                    r.max_rel_err, r.pass ? "ok" : "FAIL");
        all_pass = all_pass && r.pass;
      }
      if (!all_pass) {
        std::fprintf(stderr, "gradient checks failed\n");
        return 2;  // numerical-check failure
      }
      std::printf("%zu checks passed\n", results.size());
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fusenas/dataset.hpp"
#include "fusenas/losses.hpp"
#include "fusenas/model.hpp"

namespace fusenas::train {

struct TrainConfig {
  int batch_size = 8;
  double lr = 1e-3;
  int iterations = 2000;
  double alpha_lr = 3e-3;
  std::uint64_t seed = 1;
  double iden_dropout = 0.25;
  int resolution = 32;

  void validate() const;
  std::string serialize() const;

  // desk-scale default (this file's field defaults)
  static TrainConfig desk() { return TrainConfig{}; }
  // reference preset from the original training regime; far beyond desk scale
  static TrainConfig paper() {
    TrainConfig c;
    c.batch_size = 40;
    c.lr = 0.0005;
    c.iterations = 1000000;
    c.resolution = 144;
    return c;
  }

  // flat key = value text; unknown keys are rejected
  static TrainConfig parse(const std::string& text, TrainConfig base = desk());
  static TrainConfig parse_file(const std::string& path,
                                TrainConfig base = desk());
};

// Rescales gradients so their global L2 norm is at most max_norm; returns the
// pre-clip norm. Keeps Adam's moment estimates sane under the occasional
// gradient spike from the Wiener division and deveiling products.
double clip_global_norm(const std::vector<Parameter<float>*>& params,
                        double max_norm);

// Adam with bias correction; moments kept in double for platform-stable sums.
class Adam {
 public:
  explicit Adam(std::vector<Parameter<float>*> params, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

  void step(double lr);
  int steps_taken() const { return t_; }
  const std::vector<Parameter<float>*>& params() const { return params_; }

 private:
  std::vector<Parameter<float>*> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
};

// batch with provenance so weight steps can never consume alpha batches
enum class SplitTag { weight, alpha, train };
const char* split_name(SplitTag t);

struct Batch {
  SplitTag tag = SplitTag::train;
  std::vector<int> indices;
};

// deterministic epoch shuffling over a fixed index set
class BatchSampler {
 public:
  BatchSampler(std::vector<int> indices, int batch_size, SplitTag tag,
               Rng rng);
  Batch next();

 private:
  std::vector<int> indices_;
  int batch_size_;
  SplitTag tag_;
  Rng rng_;
  std::size_t pos_ = 0;
  void reshuffle();
};

struct CurvePoint {
  int iteration = 0;
  std::string split;
  double l2 = 0.0, per = 0.0, iden = 0.0, total = 0.0;
};

std::string curves_to_jsonl(const std::vector<CurvePoint>& curve);

// ---- training entry points ----------------------------------------------------

struct PretrainResult {
  std::vector<CurvePoint> curve;
  std::uint64_t ckpt_digest = 0;
};

// encoder + throwaway decoder on a single-degradation dataset (L2);
// exports only the encoder parameters
PretrainResult pretrain_encoder(const std::string& task, const Dataset& data,
                                const TrainConfig& cfg,
                                const model::ModelConfig& mcfg,
                                const std::string& out_ckpt);

struct SearchOptions {
  bool freeze_alpha = false;
  losses::LossWeights weights;
};

struct SearchResult {
  std::vector<CurvePoint> curves;
  fusion::ArchSpec arch;
  std::uint64_t ckpt_digest = 0;
};

// alternating weight / alpha optimization on the full model
SearchResult search(const Dataset& data, const TrainConfig& cfg,
                    const model::ModelConfig& mcfg,
                    const std::string& out_ckpt, const std::string& arch_out,
                    const SearchOptions& opt = {});

struct TrainOptions {
  model::FusionMode mode = model::FusionMode::relaxed;
  std::optional<fusion::ArchSpec> arch;
  std::vector<std::string> encoder_ckpts;
  std::optional<std::string> init_ckpt;  // full checkpoint to start from
  losses::LossWeights weights;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
};

struct TrainResult {
  std::vector<CurvePoint> curve;
  std::uint64_t ckpt_digest = 0;
};

TrainResult train_final(const Dataset& data, const TrainConfig& cfg,
                        const model::ModelConfig& mcfg,
                        const std::string& out_ckpt,
                        const TrainOptions& opt = {});

// ---- in-memory toy datasets ------------------------------------------------------

Dataset make_bnl_overfit_dataset(std::uint64_t seed, int count,
                                 int resolution);
Dataset make_classifier_dataset(std::uint64_t seed, int count, int resolution);

// ---- acceptance experiments -------------------------------------------------------

struct OverfitResult {
  std::string loss_log;
  std::uint64_t ckpt_digest = 0;
  double mean_psnr = 0.0, min_psnr = 0.0;
  double mean_ssim = 0.0, min_ssim = 0.0;
};

// 8 synthetic 32x32 blur+noise+lowlight pairs, full relaxed pipeline,
// desk preset, 2000 iterations
OverfitResult run_overfit_experiment(const std::string& workdir,
                                     std::uint64_t seed);

struct WienerSearchResult {
  std::string loss_log;
  fusion::ArchSpec arch;
  double best_selected_fft_weight = 0.0;
  double alpha_smoothed_start = 0.0, alpha_smoothed_end = 0.0;
  std::uint64_t ckpt_digest = 0;
};

// fusion-only synthetic task whose target is the Wiener deconvolution of the
// input features; 1000 alternating weight/alpha steps
WienerSearchResult run_wiener_search_experiment(const std::string& workdir,
                                                std::uint64_t seed);

struct ClassifierResult {
  std::string loss_log;
  double exact_match_accuracy = 0.0;
  std::uint64_t ckpt_digest = 0;
};

// toy classification network on 512 train / 128 held-out samples spanning
// all 8 label combinations
ClassifierResult run_classifier_experiment(const std::string& workdir,
                                           std::uint64_t seed);

}  // namespace fusenas::train

#ifndef ELOK_TRAINING_HPP
#define ELOK_TRAINING_HPP

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "elok/common.hpp"
#include "elok/dataset.hpp"
#include "elok/model.hpp"

namespace elok {

// Optimizer, schedule, and augmentation settings together with the model
// architecture and loss weights they train. Config files use flat key=value
// lines whose keys are exactly the field names below (model and loss fields
// included); unknown keys are hard errors.
struct TrainConfig {
    std::size_t batch_size = 6;
    double initial_lr = 1e-4;
    double lr_decay_factor = 0.5;
    std::size_t lr_decay_every = 9000;  // iterations
    double weight_decay = 1e-3;         // decoupled (applied to parameters)
    std::size_t epochs = 120;
    std::size_t n_rr = 30;  // resampling repeats per subject
    std::uint64_t seed = 0;
    LossWeights weights;
    ModelConfig model;

    void validate() const;
    KeyValues to_key_values() const;
    // Starts from defaults, applies overrides; unknown key -> UsageError.
    static TrainConfig from_key_values(const KeyValues& kv);
    // FNV-1a over the canonical key=value serialization.
    std::uint64_t hash() const;
};

// Ablation presets: "tim", "tim-no-recon", "tim-no-kp", "pcn3fc". Adjusts the
// branch flags and zeroes the loss weights of disabled branches.
TrainConfig variant_config(const TrainConfig& base, const std::string& variant);

// Effective learning rate of optimizer step `iteration` (0-based):
// initial_lr * lr_decay_factor^floor(iteration / lr_decay_every).
double lr_at(const TrainConfig& config, std::size_t iteration);

// Seed stream shared by the training-loop validation and the evaluation
// module, so "validation ED at the best epoch" and "evaluate on the val
// split" mean the same number.
inline constexpr std::uint64_t kEvalSeedStream = 0x7a10;

// Adam with decoupled weight decay. Tensors update in canonical (map) order;
// bias-correction powers are carried in the state so a resumed run multiplies
// them exactly as the uninterrupted run did.
struct AdamW {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    Params m, v;
    std::size_t t = 0;
    double beta1_pow = 1.0;  // beta1^t
    double beta2_pow = 1.0;  // beta2^t

    static AdamW init(const Params& params);
    void step(Params& params, const Params& grads, double lr, double weight_decay);
};

struct TrainState {
    TrainConfig config;
    Params params;
    AdamW opt;
    std::size_t iteration = 0;  // completed optimizer steps
    std::size_t epoch = 0;      // completed epochs
    bool has_best = false;
    double best_val_ed = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    Params best_params;
};

// ASCII checkpoint with named hexfloat tensors; round-trips bit-exactly.
std::string checkpoint_to_text(const TrainState& state);
TrainState checkpoint_from_text(const std::string& text);
void save_checkpoint(const std::string& path, const TrainState& state);
TrainState load_checkpoint(const std::string& path);

// n_rr independent resamplings of the subject's contours, n_points each,
// deterministic per (seed, subject id, repeat index).
std::vector<PointCloud> augment_resample(const Subject& subject, std::size_t n_rr,
                                         std::size_t n_points, std::uint64_t seed);

// Input cloud and targets in the shared normalized frame of the resampling.
struct TrainSample {
    PointCloud input;
    Targets targets;
    NormTransform transform;
};
TrainSample make_sample(const Subject& subject, const PointCloud& resampled);

struct IterationRow {
    std::size_t iter = 0;   // global 0-based optimizer step
    std::size_t epoch = 0;  // 0-based epoch the step belongs to
    double lr = 0.0;
    LossBreakdown loss;  // batch means
};

struct ValidationRow {
    std::size_t epoch = 0;  // epochs completed when measured
    double ed = 0.0;        // mean electrode error over val subjects (cm)
    double cd = 0.0;        // mean dense Chamfer (cm); NaN without reconstruction
};

std::string metrics_to_csv(const std::vector<IterationRow>& rows);
std::string validation_to_csv(const std::vector<ValidationRow>& rows);

struct TrainOptions {
    TrainConfig config;
    // When nonempty, receives metrics.csv, val.csv, checkpoint_last.txt and
    // checkpoint_best.txt (written atomically at each epoch end).
    std::string out_dir;
    // Continue from this state when nonempty. The checkpoint's config must
    // match `config` exactly except for `epochs`, which may extend the run.
    std::string resume_checkpoint;
    int threads = 1;
};

struct TrainResult {
    TrainState state;
    std::vector<IterationRow> metrics;      // rows produced by this run
    std::vector<ValidationRow> validation;  // one row per completed epoch
    bool aborted = false;  // non-finite loss; state holds the last-good epoch
    std::string abort_reason;
};

// Runs the configured epochs (resuming if requested). An epoch is one pass
// over (train subjects x n_rr) resampled samples in a seeded shuffle order;
// gradients are batch means; results are identical at any thread count.
TrainResult train(const std::vector<Subject>& train_subjects,
                  const std::vector<Subject>& val_subjects, const TrainOptions& options);
// Same, loading the train/val splits from a generated dataset directory.
TrainResult train_dataset(const std::string& dataset_dir, const TrainOptions& options);

// Single-subject inference: resample -> normalize -> forward -> denormalize.
// Deterministic per seed. Requires a model with 10 electrode slots.
struct SubjectPrediction {
    ElectrodeSet electrodes;
    PointCloud keypoints;
    PointCloud coarse;
    PointCloud dense;
};
SubjectPrediction predict_subject(const Params& params, const Subject& subject,
                                  std::uint64_t seed);

// Mean electrode error and dense Chamfer (cm, denormalized) for one subject.
struct SubjectScore {
    double ed = 0.0;
    double cd = std::numeric_limits<double>::quiet_NaN();
};
SubjectScore score_subject(const Params& params, const Subject& subject, std::uint64_t seed);

struct SweepRow {
    std::size_t value = 0;
    double cd_mean = 0.0, cd_sd = 0.0;
    double ed_mean = 0.0, ed_sd = 0.0;
    bool failed = false;
    std::string error;
};

std::string sweep_to_csv(const std::vector<SweepRow>& rows);

// Trains one model per value of `axis` ("N_rr" or "N_kp") with an otherwise
// identical config and scores it on the test split (mean +- sample sd).
// Per-value failures are recorded and the sweep continues.
std::vector<SweepRow> sweep(const std::string& dataset_dir, const TrainConfig& base,
                            const std::string& axis, const std::vector<std::size_t>& values,
                            const std::string& out_dir, int threads);

}  // namespace elok

#endif

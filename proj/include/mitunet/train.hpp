#pragma once

#include "mitunet/augment.hpp"
#include "mitunet/losses.hpp"
#include "mitunet/model.hpp"
#include "mitunet/synthgen.hpp"

namespace mitunet {

struct ConfusionCounts {
    long long tp = 0, fp = 0, fn = 0, tn = 0;
    long long total() const { return tp + fp + fn + tn; }
    bool operator==(const ConfusionCounts&) const = default;
};

// Percentages in [0,100], all re-derivable from the confusion counts.
struct MetricReport {
    double recall = 0, precision = 0, accuracy = 0, miou = 0;
    double iou_background = 0, iou_wall = 0;
    ConfusionCounts confusion;
    static MetricReport from(const ConfusionCounts& c);
};

ConfusionCounts confusion(const Mask& pred, const Mask& target);

struct TrainConfig {
    long epochs = 30;
    long batch = 4;
    double lr = 1e-4;
    uint64_t seed = 42;
    double split = 0.8;
    double sched_factor = 0.5;
    long sched_patience = 3;
    LossSpec loss;                // Tversky (0.6/0.4) by default
    std::string preset = "nano";
    long repeats = 3;
    long input_side = 64;
    bool augment = true;
    AugmentConfig aug;

    void validate() const;
};

struct EpochRecord {
    long epoch = 0;
    double train_loss = 0;
    MetricReport val;
    double lr = 0;
};

struct RunResult {
    std::vector<EpochRecord> history;
    long best_epoch = -1;
    MetricReport best;
    Checkpoint best_checkpoint;
};

struct TrainResult {
    std::vector<RunResult> runs;
    MetricReport mean_best;  // percentages averaged over runs' best epochs
};

// ---------------------------------------------------------------------------
// Optimizer / scheduler
// ---------------------------------------------------------------------------

class AdamOptimizer {
  public:
    explicit AdamOptimizer(const NamedTensors<float>& params, double beta1 = 0.9,
                           double beta2 = 0.999, double eps = 1e-8);
    // Bias-corrected update from each parameter's accumulated gradient;
    // parameters with no gradient buffer are left untouched.
    void step(NamedTensors<float>& params, double lr);
    long step_count() const { return t_; }

  private:
    double beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// ReduceLROnPlateau, mode=max: metric improvement resets the stagnation
// counter; counter exceeding patience halves the learning rate.
class PlateauScheduler {
  public:
    PlateauScheduler(double lr, double factor, long patience);
    double observe(double metric);  // returns the (possibly reduced) lr
    double lr() const { return lr_; }

  private:
    double lr_, factor_;
    long patience_, num_bad_ = 0;
    double best_;
};

// ---------------------------------------------------------------------------
// Data plumbing
// ---------------------------------------------------------------------------

// Seeded Fisher-Yates shuffle of 0..n-1, then prefix/suffix split.
std::pair<std::vector<long>, std::vector<long>> split_dataset(long n, double ratio,
                                                              uint64_t seed);

Tensor<float> mask_to_target(const Mask& m);

// ---------------------------------------------------------------------------
// Loops
// ---------------------------------------------------------------------------

MetricReport evaluate(MitUNet<float>& model, const SynthDataset& ds,
                      const std::vector<long>& indices, const TrainConfig& cfg);

TrainResult train(const TrainConfig& cfg, const SynthDataset& ds);

// Same as train but every repeat starts from the checkpoint instead of fresh
// initialization. Default fine-tuning learning rate is 1e-5 (set by caller).
TrainResult finetune(const Checkpoint& base, const TrainConfig& cfg, const SynthDataset& ds);

struct AblationRow {
    double alpha = 0, beta = 0;
    MetricReport metrics;
};

struct AblationResult {
    std::vector<AblationRow> rows;  // in alpha order
    double precision_rho = 0, recall_rho = 0;
    long precision_inversions = 0, recall_inversions = 0;
    bool trend_ok = false;  // rho signs correct, <=1 adjacent inversion each
};

AblationResult ablate_tversky(const std::vector<double>& alphas, const TrainConfig& cfg,
                              const SynthDataset& ds);

// Spearman rank correlation; ties broken by index (inputs here are metric
// sequences, exact ties are vanishingly rare).
double spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

// One line per epoch: epoch, train loss, validation metrics, lr. Stable
// format so reruns can be compared by hash.
std::string history_to_string(const RunResult& run);
void write_history(const std::string& path, const RunResult& run);

}  // namespace mitunet

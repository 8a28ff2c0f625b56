#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedfed/datasets.hpp"
#include "fedfed/distillation.hpp"
#include "fedfed/federation.hpp"

namespace fedfed {

// Experiment orchestration: a flat dotted-key config drives the full pipeline
// (synthesize/load -> partition -> distill -> share -> train both arms ->
// metrics), with every stream derived from the experiment seed so reruns are
// byte-identical.

struct DatasetSource {
    enum class Kind { Blobs, Idx, Csv };

    Kind kind = Kind::Blobs;
    int classes = 10;
    int dim = 32;
    int per_class = 50;
    double spread = 0.15;
    std::string images_path;  // idx
    std::string labels_path;  // idx
    std::string csv_path;
    double test_fraction = 0.2;
};

struct ExperimentConfig {
    DatasetSource dataset;
    PartitionSpec partition;  // seed is derived per experiment seed
    // distillation
    int distill_rounds = 15;
    int distill_epochs = 1;
    double rho = 0.5;
    double sigma_s_sq = 0.15;
    int distill_batch = 64;
    double distill_lr = 0.01;
    int distill_sample_count = 5;
    int gen_hidden = 32;
    int cls_hidden = 32;
    NoiseMechanism::Kind mechanism = NoiseMechanism::Kind::Gaussian;
    // federation
    int train_rounds = 1000;
    int train_epochs = 1;
    int train_batch = 64;
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int train_sample_count = 5;
    int train_hidden = 32;
    AggStrategy strategy;
    int shared_subsample = 0;

    std::vector<uint64_t> seeds = {1};
    double target_acc = 0.0;  // 0 = use the baseline arm's best accuracy

    void validate() const;
};

ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);
std::string config_to_text(const ExperimentConfig& cfg);
void save_config(const ExperimentConfig& cfg, const std::string& path);

struct MetricsReport {
    double best_acc = 0.0;
    std::optional<int> rounds_to_target;  // absent: target never reached
    std::optional<double> speedup;        // baseline_rounds / rounds_to_target
};

MetricsReport metrics(const std::vector<RoundLog>& logs, double target_acc,
                      std::optional<int> baseline_rounds = std::nullopt);

// Extra communication of the sharing pipeline relative to plain federated
// training: T_d/(T_r b) + g/(2 T_r b) + g/(2 K T_r b), with b the per-round
// client sampling rate and g the data-to-model size ratio.
double comm_overhead_ratio(double clients, double distill_rounds, double train_rounds,
                           double beta, double gamma);

// Deterministically prepared per-seed inputs, identical for both arms.
struct PreparedData {
    LabeledDataset train;
    LabeledDataset eval;
    PartitionResult parts;
    std::vector<ClientState> clients;
};
PreparedData prepare_data(const ExperimentConfig& cfg, uint64_t seed);

DistillConfig make_distill_config(const ExperimentConfig& cfg, int dim, uint64_t seed);
FederationConfig make_federation_config(const ExperimentConfig& cfg, int dim, int num_classes,
                                        uint64_t seed, int threads);

struct ArmResult {
    MetricsReport report;
    std::vector<RoundLog> logs;
};

struct SeedResult {
    uint64_t seed = 0;
    ArmResult with_sharing;
    ArmResult baseline;
    double target_acc = 0.0;
};

struct ExperimentResult {
    std::vector<SeedResult> seeds;
    double mean_best_with = 0.0;
    double mean_best_baseline = 0.0;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg, int threads = 1);

nlohmann::ordered_json experiment_report_json(const ExperimentResult& result);
nlohmann::ordered_json metrics_json(const MetricsReport& report);

// ---- attack experiment pipelines --------------------------------------------
// Self-contained probes over the configured dataset; both are deterministic
// per (config, seeds).

struct MiaSweepPoint {
    double sigma_sq = 0.0;
    double mean_recall = 0.0;
    std::vector<double> recalls;  // per seed
};

// For each noise level: distill noiselessly, re-noise the sensitive features
// at that level, train a target on the protected records, and measure the
// membership-inference recall of records in the target's training set against
// protected held-out records.
std::vector<MiaSweepPoint> mia_noise_sweep(const ExperimentConfig& cfg,
                                           const std::vector<double>& sigma_levels,
                                           const std::vector<uint64_t>& seeds, int threads = 1);

struct InversionComparison {
    double mean_psnr_raw_trained = 0.0;     // target trained on raw features
    double mean_psnr_shared_trained = 0.0;  // target trained on protected features
    std::vector<double> psnr_raw_per_seed;
    std::vector<double> psnr_shared_per_seed;
};

// Model-inversion reconstructions scored by PSNR against the true class
// centroids, comparing a raw-data target with a protected-data target.
InversionComparison inversion_psnr_comparison(const ExperimentConfig& cfg,
                                              const std::vector<uint64_t>& seeds, int steps,
                                              double lr, int threads = 1);

nlohmann::ordered_json mia_sweep_json(const std::vector<MiaSweepPoint>& points);
nlohmann::ordered_json inversion_json(const InversionComparison& cmp);

// Reads FEDFED_THREADS; falls back to 1 when unset or invalid.
int threads_from_env();

}  // namespace fedfed

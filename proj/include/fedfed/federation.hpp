#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedfed/common.hpp"
#include "fedfed/datasets.hpp"
#include "fedfed/distillation.hpp"
#include "fedfed/numerics.hpp"

namespace fedfed {

struct AggStrategy {
    enum class Kind { FedAvg, FedProx, Scaffold, FedNova };

    Kind kind = Kind::FedAvg;
    double mu = 0.0;            // FedProx proximal weight
    int scaffold_variant = 2;   // 1 = fresh gradient pass, 2 = parameter-difference form
    double varrho = 0.0;        // FedNova momentum factor, in [0, 1)

    static AggStrategy fedavg();
    static AggStrategy fedprox(double mu);
    static AggStrategy scaffold(int variant = 2);
    static AggStrategy fednova(double varrho = 0.0);
    void validate() const;
};

// Shared-pool view consumed during joint local training.
struct SharedPool {
    Matrix features;
    std::vector<int> labels;

    int size() const { return features.rows; }
    static SharedPool from(const GlobalSharedDataset& shared);
};

struct FederationConfig {
    ArchSpec arch;            // global classifier phi
    int rounds = 10;          // T_r
    int epochs = 1;           // E_r
    int batch_size = 64;
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int sample_count = 5;       // |C_r|
    int shared_subsample = 0;   // records drawn per client per round; 0 = full pool
    AggStrategy strategy;
    uint64_t seed = 1;
    int threads = 1;
    bool record_timing = false;  // measured ms breaks byte-reproducible logs

    void validate() const;
};

struct ClientState {
    int id = 0;
    LabeledDataset data;
    GradSet control;  // SCAFFOLD c_k, zero until first participation

    int sample_count() const { return data.size(); }
};

struct ServerState {
    ParamSet phi;
    GradSet control;  // SCAFFOLD c
    int round = 0;
};

struct RoundLog {
    int round = 0;
    std::vector<int> clients;
    double train_loss = 0.0;
    double test_acc = 0.0;
    long long ms = 0;
};

// Per-client payload sent back to the server; which fields are meaningful
// depends on the strategy.
struct ClientUpdate {
    int id = 0;
    long samples = 0;
    ParamSet phi;         // FedAvg / FedProx
    GradSet delta_phi;    // SCAFFOLD: phi_k - phi_r; FedNova: normalized update
    GradSet delta_c;      // SCAFFOLD control correction
    double a_k = 0.0;     // FedNova effective step count
    double mean_loss = 0.0;
};

// Uniform without replacement, ascending.
std::vector<int> sample_clients(int total, int count, RngStream& rng);

// loss = CE(private) + CE(shared); an empty shared batch reduces to the plain
// local loss. mu > 0 adds the proximal term against `anchor`.
LossGrad combined_batch_loss(const ParamSet& phi, const Matrix& private_batch,
                             const std::vector<int>& private_labels, const Matrix& shared_batch,
                             const std::vector<int>& shared_labels, double prox_mu = 0.0,
                             const ParamSet* anchor = nullptr);

ClientUpdate local_train(ClientState& client, const ParamSet& global_phi, const GradSet& server_c,
                         const SharedPool* shared, const FederationConfig& cfg, int round);

void aggregate(ServerState& server, const std::vector<ClientUpdate>& updates,
               const AggStrategy& strategy, int total_clients, double lr);

struct FederationRun {
    std::vector<RoundLog> logs;
    ServerState server;
};

FederationRun run_federation(std::vector<ClientState>& clients, const SharedPool* shared,
                             const LabeledDataset& eval_set, const FederationConfig& cfg);

// JSONL round-log stream, one object per round:
// {"round":..,"clients":[..],"train_loss":..,"test_acc":..,"ms":..}
std::string round_logs_to_jsonl(const std::vector<RoundLog>& logs);

}  // namespace fedfed

#include "fedfed/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <json.hpp>

#include "fedfed/rng.hpp"

namespace fedfed {

AggStrategy AggStrategy::fedavg() { return {Kind::FedAvg, 0.0, 2, 0.0}; }
AggStrategy AggStrategy::fedprox(double mu) { return {Kind::FedProx, mu, 2, 0.0}; }
AggStrategy AggStrategy::scaffold(int variant) { return {Kind::Scaffold, 0.0, variant, 0.0}; }
AggStrategy AggStrategy::fednova(double varrho) { return {Kind::FedNova, 0.0, 2, varrho}; }

void AggStrategy::validate() const {
    if (kind == Kind::FedProx && mu < 0.0) throw DomainError("fedprox mu must be >= 0");
    if (kind == Kind::Scaffold && scaffold_variant != 1 && scaffold_variant != 2)
        throw DomainError("scaffold variant must be 1 or 2");
    if (kind == Kind::FedNova && !(varrho >= 0.0 && varrho < 1.0))
        throw DomainError("fednova varrho must be in [0, 1)");
}

SharedPool SharedPool::from(const GlobalSharedDataset& shared) {
    SharedPool pool;
    shared_as_batch(shared, pool.features, pool.labels);
    return pool;
}

void FederationConfig::validate() const {
    arch.validate();
    if (rounds < 0) throw DomainError("rounds must be >= 0");
    if (epochs < 0) throw DomainError("epochs must be >= 0");
    if (batch_size < 1) throw DomainError("batch size must be >= 1");
    if (!(lr > 0.0)) throw DomainError("lr must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw DomainError("momentum must be in [0, 1)");
    if (weight_decay < 0.0) throw DomainError("weight decay must be >= 0");
    if (sample_count < 1) throw DomainError("sample count must be >= 1");
    if (shared_subsample < 0) throw DomainError("shared subsample must be >= 0");
    strategy.validate();
}

std::vector<int> sample_clients(int total, int count, RngStream& rng) {
    if (count < 1 || count > total) throw DomainError("client sample count must be in [1, K]");
    return rng.sample_without_replacement(total, count);
}

LossGrad combined_batch_loss(const ParamSet& phi, const Matrix& private_batch,
                             const std::vector<int>& private_labels, const Matrix& shared_batch,
                             const std::vector<int>& shared_labels, double prox_mu,
                             const ParamSet* anchor) {
    LossGrad result = loss_and_grad(phi, private_batch, private_labels, LossKind::CrossEntropy);
    if (shared_batch.rows > 0) {
        if (shared_batch.cols != private_batch.cols)
            throw DimensionError("shared batch dimension mismatch");
        const LossGrad shared = loss_and_grad(phi, shared_batch, shared_labels, LossKind::CrossEntropy);
        result.loss += shared.loss;
        add_scaled(result.grads, shared.grads, 1.0);
    }
    if (prox_mu != 0.0) {
        if (prox_mu < 0.0) throw DomainError("proximal mu must be >= 0");
        if (anchor == nullptr) throw ProtocolError("proximal term needs an anchor");
        check_congruent(phi, *anchor);
        double sq = 0.0;
        for (size_t i = 0; i < phi.segments.size(); ++i)
            for (size_t j = 0; j < phi.segments[i].values.size(); ++j) {
                const double d = phi.segments[i].values[j] - anchor->segments[i].values[j];
                sq += d * d;
                result.grads.segments[i].values[j] += prox_mu * d;
            }
        result.loss += 0.5 * prox_mu * sq;
    }
    return result;
}

namespace {

Matrix gather_rows(const Matrix& src, const std::vector<int>& rows, int from, int to) {
    Matrix out(to - from, src.cols);
    for (int r = from; r < to; ++r)
        for (int c = 0; c < src.cols; ++c) out(r - from, c) = src(rows[static_cast<size_t>(r)], c);
    return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels, const std::vector<int>& rows,
                               int from, int to) {
    std::vector<int> out(static_cast<size_t>(to - from));
    for (int r = from; r < to; ++r)
        out[static_cast<size_t>(r - from)] = labels[static_cast<size_t>(rows[static_cast<size_t>(r)])];
    return out;
}

// Cursor over a seeded permutation of pool rows; reshuffles on wrap.
class BatchCursor {
public:
    BatchCursor(int pool_size, RngStream& rng) : rng_(rng), order_(static_cast<size_t>(pool_size)) {
        for (int i = 0; i < pool_size; ++i) order_[static_cast<size_t>(i)] = i;
        rng_.shuffle(order_);
    }

    std::vector<int> take(int count) {
        std::vector<int> out;
        out.reserve(static_cast<size_t>(count));
        for (int i = 0; i < count; ++i) {
            if (pos_ == order_.size()) {
                rng_.shuffle(order_);
                pos_ = 0;
            }
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    RngStream& rng_;
    std::vector<int> order_;
    size_t pos_ = 0;
};

// Gradient of the full local objective (private plus one full shared pass) at
// the given parameters; SCAFFOLD variant (i) control refresh.
GradSet full_objective_grad(const ParamSet& phi, const LabeledDataset& data, const Matrix& shared_x,
                            const std::vector<int>& shared_y, const AggStrategy& strategy,
                            const ParamSet& anchor) {
    std::vector<int> all(static_cast<size_t>(data.size()));
    for (int i = 0; i < data.size(); ++i) all[static_cast<size_t>(i)] = i;
    const Matrix priv = gather_rows(data.features, all, 0, data.size());
    const double mu = strategy.kind == AggStrategy::Kind::FedProx ? strategy.mu : 0.0;
    return combined_batch_loss(phi, priv, data.labels, shared_x, shared_y, mu, &anchor).grads;
}

}  // namespace

ClientUpdate local_train(ClientState& client, const ParamSet& global_phi, const GradSet& server_c,
                         const SharedPool* shared, const FederationConfig& cfg, int round) {
    const AggStrategy& strategy = cfg.strategy;
    ClientUpdate update;
    update.id = client.id;
    update.samples = client.sample_count();

    ParamSet phi = global_phi;
    GradSet velocity = zeros_like(phi);
    const bool scaffold = strategy.kind == AggStrategy::Kind::Scaffold;
    if (scaffold && client.control.segments.empty()) client.control = zeros_like(global_phi);

    // Per-round shared view: either the full pool or a per-client subsample.
    Matrix shared_x;
    std::vector<int> shared_y;
    std::optional<BatchCursor> shared_cursor;
    RngStream shared_rng = RngStream::derive(
        cfg.seed, {stream_tag("sharedbatch"), static_cast<uint64_t>(client.id), static_cast<uint64_t>(round)});
    if (shared != nullptr && shared->size() > 0) {
        if (cfg.shared_subsample > 0 && cfg.shared_subsample < shared->size()) {
            const std::vector<int> pick =
                shared_rng.sample_without_replacement(shared->size(), cfg.shared_subsample);
            shared_x = gather_rows(shared->features, pick, 0, static_cast<int>(pick.size()));
            shared_y = gather_labels(shared->labels, pick, 0, static_cast<int>(pick.size()));
        } else {
            shared_x = shared->features;
            shared_y = shared->labels;
        }
        shared_cursor.emplace(shared_x.rows, shared_rng);
    }

    RngStream order_rng = RngStream::derive(
        cfg.seed, {stream_tag("batch"), static_cast<uint64_t>(client.id), static_cast<uint64_t>(round)});
    std::vector<int> order(static_cast<size_t>(client.data.size()));
    for (int i = 0; i < client.data.size(); ++i) order[static_cast<size_t>(i)] = i;

    double loss_sum = 0.0;
    long steps = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        for (int off = 0; off < client.data.size(); off += cfg.batch_size) {
            const int end = std::min(off + cfg.batch_size, client.data.size());
            const Matrix priv = gather_rows(client.data.features, order, off, end);
            const std::vector<int> priv_y = gather_labels(client.data.labels, order, off, end);

            Matrix sh;
            std::vector<int> sh_y;
            if (shared_cursor) {
                // One shared batch of equal size per step.
                const std::vector<int> pick = shared_cursor->take(end - off);
                sh = gather_rows(shared_x, pick, 0, static_cast<int>(pick.size()));
                sh_y = gather_labels(shared_y, pick, 0, static_cast<int>(pick.size()));
            }

            const double mu = strategy.kind == AggStrategy::Kind::FedProx ? strategy.mu : 0.0;
            LossGrad lg = combined_batch_loss(phi, priv, priv_y, sh, sh_y, mu, &global_phi);
            if (!std::isfinite(lg.loss))
                throw NumericError("loss diverged at round " + std::to_string(round) + ", client " +
                                   std::to_string(client.id));
            if (scaffold) {
                // phi <- phi - lr (g - c_k + c)
                add_scaled(lg.grads, client.control, -1.0);
                add_scaled(lg.grads, server_c, 1.0);
            }
            sgd_step_inplace(phi, lg.grads, cfg.lr, cfg.momentum, cfg.weight_decay, velocity);
            loss_sum += lg.loss;
            ++steps;
        }
    }
    update.mean_loss = steps > 0 ? loss_sum / static_cast<double>(steps) : 0.0;

    switch (strategy.kind) {
        case AggStrategy::Kind::FedAvg:
        case AggStrategy::Kind::FedProx:
            update.phi = std::move(phi);
            break;
        case AggStrategy::Kind::Scaffold: {
            update.delta_phi = param_diff(phi, global_phi);
            GradSet fresh;
            if (strategy.scaffold_variant == 1) {
                fresh = full_objective_grad(global_phi, client.data, shared_x, shared_y, strategy,
                                            global_phi);
            } else {
                // c_k* = c_k - c + (phi_r - phi_{r+1}) / (E lr)
                fresh = client.control;
                add_scaled(fresh, server_c, -1.0);
                GradSet drift = param_diff(global_phi, phi);
                const double denom = std::max(cfg.epochs, 1) * cfg.lr;
                scale(drift, 1.0 / denom);
                add_scaled(fresh, drift, 1.0);
            }
            update.delta_c = fresh;
            add_scaled(update.delta_c, client.control, -1.0);
            client.control = std::move(fresh);
            break;
        }
        case AggStrategy::Kind::FedNova: {
            // a_k = [E - rho (1 - rho^E) / (1 - rho)] / (1 - rho); rho = 0 gives E.
            const double E = static_cast<double>(cfg.epochs);
            const double v = strategy.varrho;
            update.a_k = v == 0.0
                             ? E
                             : (E - v * (1.0 - std::pow(v, E)) / (1.0 - v)) / (1.0 - v);
            update.delta_phi = param_diff(phi, global_phi);
            if (cfg.epochs > 0) scale(update.delta_phi, 1.0 / (cfg.lr * update.a_k));
            break;
        }
    }
    return update;
}

void aggregate(ServerState& server, const std::vector<ClientUpdate>& updates,
               const AggStrategy& strategy, int total_clients, double lr) {
    if (updates.empty()) throw ProtocolError("aggregate called with no payloads");
    const double m = static_cast<double>(updates.size());
    switch (strategy.kind) {
        case AggStrategy::Kind::FedAvg:
        case AggStrategy::Kind::FedProx: {
            long total = 0;
            for (const auto& u : updates) total += u.samples;
            if (total <= 0) throw ProtocolError("aggregate with zero total samples");
            std::vector<std::pair<const ParamSet*, double>> entries;
            entries.reserve(updates.size());
            for (const auto& u : updates)
                entries.emplace_back(&u.phi, static_cast<double>(u.samples) / static_cast<double>(total));
            server.phi = weighted_param_sum(entries);
            break;
        }
        case AggStrategy::Kind::Scaffold: {
            if (server.control.segments.empty()) server.control = zeros_like(server.phi);
            for (const auto& u : updates) add_scaled(server.phi, u.delta_phi, 1.0 / m);
            const double c_rate = m / static_cast<double>(total_clients);
            for (const auto& u : updates) add_scaled(server.control, u.delta_c, c_rate / m);
            break;
        }
        case AggStrategy::Kind::FedNova: {
            double a_sum = 0.0;
            for (const auto& u : updates) a_sum += u.a_k;
            GradSet mean = zeros_like(server.phi);
            for (const auto& u : updates) add_scaled(mean, u.delta_phi, 1.0 / m);
            add_scaled(server.phi, mean, lr * (a_sum / m));
            break;
        }
    }
    ++server.round;
}

FederationRun run_federation(std::vector<ClientState>& clients, const SharedPool* shared,
                             const LabeledDataset& eval_set, const FederationConfig& cfg) {
    cfg.validate();
    if (clients.empty()) throw ProtocolError("federation needs at least one client");
    const int K = static_cast<int>(clients.size());
    if (cfg.sample_count > K) throw DomainError("sample count exceeds client count");

    FederationRun run;
    run.server.phi = init_params(cfg.arch, splitmix64(cfg.seed ^ stream_tag("phi0")));
    run.server.control = zeros_like(run.server.phi);

    for (int round = 1; round <= cfg.rounds; ++round) {
        const auto started = std::chrono::steady_clock::now();
        RngStream sample_rng =
            RngStream::derive(cfg.seed, {stream_tag("sample"), static_cast<uint64_t>(round)});
        const std::vector<int> selected = sample_clients(K, cfg.sample_count, sample_rng);

        std::vector<ClientUpdate> updates(selected.size());
        parallel_for(static_cast<int>(selected.size()), cfg.threads, [&](int slot) {
            ClientState& client = clients[static_cast<size_t>(selected[static_cast<size_t>(slot)])];
            updates[static_cast<size_t>(slot)] =
                local_train(client, run.server.phi, run.server.control, shared, cfg, round);
        });
        // updates are already in ascending client-id order (selected is sorted),
        // so reduction order does not depend on scheduling.
        aggregate(run.server, updates, cfg.strategy, K, cfg.lr);

        RoundLog log;
        log.round = round;
        log.clients = selected;
        double loss = 0.0;
        for (const auto& u : updates) loss += u.mean_loss;
        log.train_loss = loss / static_cast<double>(updates.size());
        log.test_acc = accuracy(run.server.phi, eval_set.features, eval_set.labels);
        if (cfg.record_timing) {
            log.ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::steady_clock::now() - started)
                         .count();
        }
        run.logs.push_back(std::move(log));
    }
    return run;
}

std::string round_logs_to_jsonl(const std::vector<RoundLog>& logs) {
    std::string out;
    for (const auto& log : logs) {
        nlohmann::ordered_json j;
        j["round"] = log.round;
        j["clients"] = log.clients;
        j["train_loss"] = log.train_loss;
        j["test_acc"] = log.test_acc;
        j["ms"] = log.ms;
        out += j.dump();
        out += '\n';
    }
    return out;
}

}  // namespace fedfed

// fedfed command line: partition reports, feature distillation, federated
// training, privacy accounting, attacks, overhead math, and full experiments.
// Exit codes: 0 success, 2 configuration error, 3 numeric divergence.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedfed/attacks.hpp"
#include "fedfed/harness.hpp"
#include "fedfed/privacy.hpp"
#include "fedfed/rng.hpp"

namespace {

using nlohmann::ordered_json;

void write_text(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text;
    } else {
        std::ofstream os(out_path, std::ios::binary);
        if (!os) throw fedfed::ConfigError("cannot open " + out_path + " for writing");
        os << text;
    }
}

void emit(const ordered_json& j, const std::string& out_path) {
    write_text(j.dump(2) + "\n", out_path);
}

std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            out.push_back(std::stod(cell));
        } catch (const std::exception&) {
            throw fedfed::ConfigError("bad numeric list entry: " + cell);
        }
    }
    return out;
}

fedfed::AggStrategy strategy_from_name(const std::string& name, const fedfed::ExperimentConfig& cfg) {
    if (name == "fedavg") return fedfed::AggStrategy::fedavg();
    if (name == "fedprox") return fedfed::AggStrategy::fedprox(cfg.strategy.mu);
    if (name == "scaffold") return fedfed::AggStrategy::scaffold(cfg.strategy.scaffold_variant);
    if (name == "fednova") return fedfed::AggStrategy::fednova(cfg.strategy.varrho);
    throw fedfed::ConfigError("unknown strategy: " + name);
}

int run(int argc, char** argv) {
    CLI::App app{"fedfed: deterministic federated feature-distillation simulator"};
    app.require_subcommand(1);
    const int threads = fedfed::threads_from_env();

    std::string config_path, out_path, shared_path, target_path, log_path, model_path;
    std::string strategy_name, sweep_csv, outdir;
    int inv_steps = 300;
    double inv_lr = 0.2;
    int inv_class = -1;

    auto* partition_cmd = app.add_subcommand("partition-report", "Per-client class histogram");
    partition_cmd->add_option("--config", config_path, "experiment config")->required();
    partition_cmd->add_option("--out", out_path, "write JSON here instead of stdout");

    auto* distill_cmd =
        app.add_subcommand("distill", "Run feature distillation and export the shared dataset");
    distill_cmd->add_option("--config", config_path)->required();
    distill_cmd->add_option("--out", out_path, "shared dataset file (.ffd)")->required();
    distill_cmd->add_option("--save-generator", model_path, "generator checkpoint");

    auto* train_cmd = app.add_subcommand("train", "Federated training; emits JSONL round logs");
    train_cmd->add_option("--config", config_path)->required();
    train_cmd->add_option("--shared", shared_path,
                          "shared dataset (.ffd); omit for the plain baseline");
    train_cmd->add_option("--strategy", strategy_name, "fedavg|fedprox|scaffold|fednova");
    train_cmd->add_option("--log", log_path, "JSONL output path (default stdout)");
    train_cmd->add_option("--save-model", model_path, "final global model checkpoint");

    auto* attack_cmd = app.add_subcommand("attack", "Privacy probes");
    attack_cmd->require_subcommand(1);
    auto* mia_cmd =
        attack_cmd->add_subcommand("mia", "Membership inference (optionally sweeping noise)");
    mia_cmd->add_option("--config", config_path)->required();
    mia_cmd->add_option("--target", target_path, "target checkpoint (single-shot evaluation)");
    mia_cmd->add_option("--shared", shared_path, "shared dataset used as the attacker pool");
    mia_cmd->add_option("--sweep-sigma", sweep_csv, "comma-separated noise variances");
    mia_cmd->add_option("--out", out_path);
    auto* invert_cmd =
        attack_cmd->add_subcommand("invert", "Model inversion scored against class centroids");
    invert_cmd->add_option("--config", config_path)->required();
    invert_cmd->add_option("--target", target_path,
                           "invert this checkpoint instead of the built-in comparison");
    invert_cmd->add_option("--class", inv_class, "class id (default: all classes)");
    invert_cmd->add_option("--steps", inv_steps);
    invert_cmd->add_option("--lr", inv_lr);
    invert_cmd->add_option("--out", out_path);

    auto* privacy_cmd = app.add_subcommand("privacy", "Privacy accounting");
    privacy_cmd->require_subcommand(1);
    auto* report_cmd = privacy_cmd->add_subcommand("report", "Closed-form budget report");
    double rho = 0.1, delta = 1e-5, sigma_s = 0.38730, hat_delta = 0.01;
    int rounds = 100, k_clients = 10;
    report_cmd->add_option("--rho", rho)->required();
    report_cmd->add_option("--R", rounds)->required();
    report_cmd->add_option("--delta", delta)->required();
    report_cmd->add_option("--sigma-s", sigma_s)->required();
    report_cmd->add_option("--k", k_clients)->required();
    report_cmd->add_option("--hat-delta", hat_delta)->required();
    report_cmd->add_option("--out", out_path);

    auto* overhead_cmd = app.add_subcommand("overhead", "Extra-communication ratio");
    double oh_K = 10, oh_Td = 15, oh_Tr = 1000, oh_beta = 0.5, oh_gamma = 14.0;
    overhead_cmd->add_option("--K", oh_K)->required();
    overhead_cmd->add_option("--Td", oh_Td)->required();
    overhead_cmd->add_option("--Tr", oh_Tr)->required();
    overhead_cmd->add_option("--beta", oh_beta)->required();
    overhead_cmd->add_option("--gamma", oh_gamma);
    overhead_cmd->add_option("--out", out_path);

    auto* experiment_cmd = app.add_subcommand("experiment", "Both arms over all seeds, with reports");
    experiment_cmd->add_option("--config", config_path)->required();
    experiment_cmd->add_option("--outdir", outdir,
                               "directory for report.json and per-arm JSONL logs");

    CLI11_PARSE(app, argc, argv);

    if (partition_cmd->parsed()) {
        const fedfed::ExperimentConfig cfg = fedfed::load_config(config_path);
        const fedfed::PreparedData prep = fedfed::prepare_data(cfg, cfg.seeds.front());
        ordered_json j;
        j["clients"] = prep.clients.size();
        j["classes"] = prep.train.num_classes;
        j["samples"] = prep.train.size();
        j["histogram"] = fedfed::partition_histogram(prep.train, prep.parts);
        emit(j, out_path);
        return 0;
    }

    if (distill_cmd->parsed()) {
        const fedfed::ExperimentConfig cfg = fedfed::load_config(config_path);
        const fedfed::PreparedData prep = fedfed::prepare_data(cfg, cfg.seeds.front());
        std::vector<fedfed::LabeledDataset> client_data;
        for (const auto& c : prep.clients) client_data.push_back(c.data);
        const fedfed::DistillConfig dcfg =
            fedfed::make_distill_config(cfg, prep.train.dim(), cfg.seeds.front());
        const fedfed::DistillOutput out = fedfed::run_feature_distillation(client_data, dcfg, threads);
        fedfed::save_shared(out.shared, out_path);
        if (!model_path.empty()) fedfed::save_params(out.generator, model_path);
        std::cerr << "wrote " << out.shared.records.size() << " records to " << out_path << "\n";
        return 0;
    }

    if (train_cmd->parsed()) {
        fedfed::ExperimentConfig cfg = fedfed::load_config(config_path);
        if (!strategy_name.empty()) cfg.strategy = strategy_from_name(strategy_name, cfg);
        const uint64_t seed = cfg.seeds.front();
        const fedfed::PreparedData prep = fedfed::prepare_data(cfg, seed);
        const fedfed::FederationConfig fc = fedfed::make_federation_config(
            cfg, prep.train.dim(), prep.train.num_classes, seed, threads);

        std::optional<fedfed::SharedPool> pool;
        if (!shared_path.empty()) pool = fedfed::SharedPool::from(fedfed::load_shared(shared_path));
        std::vector<fedfed::ClientState> clients = prep.clients;
        const fedfed::FederationRun run =
            fedfed::run_federation(clients, pool ? &*pool : nullptr, prep.eval, fc);
        write_text(fedfed::round_logs_to_jsonl(run.logs), log_path);
        if (!model_path.empty()) fedfed::save_params(run.server.phi, model_path);
        return 0;
    }

    if (mia_cmd->parsed()) {
        const fedfed::ExperimentConfig cfg = fedfed::load_config(config_path);
        if (!sweep_csv.empty()) {
            const auto points =
                fedfed::mia_noise_sweep(cfg, parse_double_list(sweep_csv), cfg.seeds, threads);
            emit(fedfed::mia_sweep_json(points), out_path);
            return 0;
        }
        // Single-shot: run the pipeline at the pool's recorded noise level and
        // attach the probed checkpoint path for traceability.
        if (target_path.empty() || shared_path.empty())
            throw fedfed::ConfigError("mia needs --sweep-sigma or both --target and --shared");
        const fedfed::GlobalSharedDataset pool = fedfed::load_shared(shared_path);
        const auto points = fedfed::mia_noise_sweep(cfg, {pool.sigma_s_sq}, cfg.seeds, threads);
        ordered_json j;
        j["target"] = target_path;
        j["sweep"] = fedfed::mia_sweep_json(points);
        emit(j, out_path);
        return 0;
    }

    if (invert_cmd->parsed()) {
        const fedfed::ExperimentConfig cfg = fedfed::load_config(config_path);
        if (!target_path.empty()) {
            const fedfed::ParamSet target = fedfed::load_params(target_path);
            const int dim = target.arch.input_dim();
            const int classes = target.arch.output_dim();
            ordered_json recon = ordered_json::array();
            const int lo = inv_class >= 0 ? inv_class : 0;
            const int hi = inv_class >= 0 ? inv_class + 1 : classes;
            for (int c = lo; c < hi; ++c) {
                const auto x =
                    fedfed::model_inversion(target, c, dim, inv_steps, inv_lr, cfg.seeds.front());
                recon.push_back({{"class", c}, {"reconstruction", x}});
            }
            ordered_json j;
            j["target"] = target_path;
            j["reconstructions"] = std::move(recon);
            emit(j, out_path);
            return 0;
        }
        const auto cmp =
            fedfed::inversion_psnr_comparison(cfg, cfg.seeds, inv_steps, inv_lr, threads);
        emit(fedfed::inversion_json(cmp), out_path);
        return 0;
    }

    if (report_cmd->parsed()) {
        const double eps =
            fedfed::epsilon_single(rho, rounds, delta, sigma_s, fedfed::SharingMode::FedFed);
        const fedfed::CompositionInput inp = fedfed::CompositionInput::from_mechanism(
            k_clients, delta, hat_delta, rho, rounds, sigma_s);
        const fedfed::CompositionResult comp = fedfed::compose_epsilon(inp);
        const fedfed::SigmaPair pair = fedfed::required_sigma_pair(eps, delta, rounds, rho);
        ordered_json j;
        j["epsilon_single"] = eps;
        j["epsilon_hat"] = comp.epsilon_hat;
        j["delta_total"] = comp.delta_total;
        j["sigma_pair"] = {{"fedfed", pair.fedfed}, {"raw", pair.raw}};
        emit(j, out_path);
        return 0;
    }

    if (overhead_cmd->parsed()) {
        const double ratio = fedfed::comm_overhead_ratio(oh_K, oh_Td, oh_Tr, oh_beta, oh_gamma);
        ordered_json j;
        j["ratio"] = ratio;
        j["percent"] = ratio * 100.0;
        emit(j, out_path);
        return 0;
    }

    if (experiment_cmd->parsed()) {
        const fedfed::ExperimentConfig cfg = fedfed::load_config(config_path);
        const fedfed::ExperimentResult result = fedfed::run_experiment(cfg, threads);
        for (const auto& sr : result.seeds) {
            std::cerr << "seed " << sr.seed << ": best "
                      << sr.with_sharing.report.best_acc * 100.0 << "% ("
                      << sr.baseline.report.best_acc * 100.0 << "% baseline)";
            if (sr.with_sharing.report.speedup) {
                // stored at full precision, displayed to one decimal
                char buf[32];
                std::snprintf(buf, sizeof(buf), "x%.1f", *sr.with_sharing.report.speedup);
                std::cerr << ", speedup " << buf;
            }
            std::cerr << "\n";
        }
        if (!outdir.empty()) {
            std::filesystem::create_directories(outdir);
            for (const auto& sr : result.seeds) {
                write_text(fedfed::round_logs_to_jsonl(sr.with_sharing.logs),
                           outdir + "/s" + std::to_string(sr.seed) + "_with.jsonl");
                write_text(fedfed::round_logs_to_jsonl(sr.baseline.logs),
                           outdir + "/s" + std::to_string(sr.seed) + "_baseline.jsonl");
            }
            emit(fedfed::experiment_report_json(result), outdir + "/report.json");
        } else {
            emit(fedfed::experiment_report_json(result), "");
        }
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const fedfed::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const fedfed::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const fedfed::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

// wfqkd: command-line driver for the scattering-channel QKD simulator.
//
//   wfqkd channel  [--preset P] [--config F] [--seed N] --out channel.json
//   wfqkd optimize --channel channel.json [--generations N] [--threads T] --out-dir DIR
//   wfqkd profile  --channel channel.json [--mask mask.txt] --out-dir DIR
//   wfqkd qkd      --channel channel.json [--mask mask.txt] [--extra-loss-db X] --out report.json
//   wfqkd keyrate  BATCH [--tolerance 0.15] [--json report.json]
//
// Exit codes: 0 success, 1 validation failure, 2 runtime/model error.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "wfqkd/experiment.hpp"

namespace ex = wfqkd::experiment;
namespace fs = std::filesystem;

namespace {

struct CommonOptions {
    std::string preset = "grit120";
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--preset", o.preset, "Scenario preset (grit120, grit600)");
    cmd->add_option("--config", o.config, "JSON config file applied over the preset")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "Master seed; overrides every sub-seed");
    cmd->add_option("--threads", o.threads, "Fitness evaluation threads");
}

ex::ExperimentConfig resolve(const CommonOptions& o) {
    auto cfg = ex::preset(o.preset);
    if (!o.config.empty()) cfg = ex::load_config(o.config, cfg);
    if (o.seed) ex::override_seeds(cfg, *o.seed);
    if (o.threads) cfg.ga.threads = *o.threads;
    cfg.validate();
    return cfg;
}

void print_channel(const ex::ChannelSummary& s) {
    fmt::print("blank transmittance     {:.4e}  ({:.2f} dB)\n", s.blank_transmittance, s.blank_loss_db);
    fmt::print("conjugate optimum       {:.4e}  ({:.2f} dB)\n", s.optimum_transmittance, s.optimum_loss_db);
    fmt::print("optimum enhancement     {:.1f}\n", s.optimum_enhancement);
    if (s.rescaled) fmt::print("warning: channel row rescaled to keep the optimum below unity\n");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Wavefront-shaping QKD through scattering channels: simulation laboratory"};
    app.require_subcommand(1);

    CommonOptions common;
    std::string channel_path, mask_path, out, out_dir = "out";
    std::optional<std::size_t> generations;
    double extra_loss_db = 0.0;

    auto* channel = app.add_subcommand("channel", "Generate and save a scattering channel");
    add_common(channel, common);
    std::string storage;
    channel->add_option("--out", out, "Channel file")->required();
    channel->add_option("--storage", storage, "exact (coefficients) or seed (regenerate)")
        ->check(CLI::IsMember({"exact", "seed"}));

    auto* optimize = app.add_subcommand("optimize", "Run the GA with the photon-count fitness");
    add_common(optimize, common);
    optimize->add_option("--channel", channel_path, "Channel file")->required()->check(CLI::ExistingFile);
    optimize->add_option("--generations", generations, "Override the GA generation count");
    optimize->add_option("--out-dir", out_dir, "Output directory");

    auto* profile = app.add_subcommand("profile", "Write output-plane intensity maps");
    profile->add_option("--channel", channel_path, "Channel file")->required()->check(CLI::ExistingFile);
    profile->add_option("--mask", mask_path, "Mask file (default: conjugate mask)")->check(CLI::ExistingFile);
    profile->add_option("--out-dir", out_dir, "Output directory");

    auto* qkd = app.add_subcommand("qkd", "Simulate a decoy-state session and compute the key rate");
    add_common(qkd, common);
    qkd->add_option("--channel", channel_path, "Channel file")->required()->check(CLI::ExistingFile);
    qkd->add_option("--mask", mask_path, "Mask file (default: blank mask)")->check(CLI::ExistingFile);
    qkd->add_option("--extra-loss-db", extra_loss_db, "Additional attenuator loss in dB");
    qkd->add_option("--out", out, "Report file")->required();

    auto* keyrate = app.add_subcommand("keyrate", "Key rates for a batch of decoy observations");
    std::string batch, json_out;
    double tolerance = 0.15;
    wfqkd::keyrate::KeyRateParams params;
    keyrate->add_option("batch", batch, "CSV or JSON batch file")->required()->check(CLI::ExistingFile);
    keyrate->add_option("--tolerance", tolerance, "Relative tolerance against R_reference");
    keyrate->add_option("--q", params.q, "Protocol factor");
    keyrate->add_option("--f", params.f, "Error-correction efficiency");
    keyrate->add_option("--json", json_out, "Write the JSON report here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (channel->parsed()) {
            auto cfg = resolve(common);
            if (storage == "seed") cfg.channel.storage = wfqkd::io::ChannelStorage::seed;
            print_channel(ex::cmd_channel(cfg, out));
        } else if (optimize->parsed()) {
            auto cfg = resolve(common);
            if (generations) cfg.ga.generations = *generations;
            const auto s = ex::cmd_optimize(cfg, channel_path, out_dir);
            fmt::print("generations             {}\n", s.generations_completed);
            fmt::print("loss before             {:.2f} dB\n", s.blank_loss_db);
            fmt::print("loss after              {:.2f} dB\n", s.optimized_loss_db);
            fmt::print("enhancement             {:.1f}\n", s.enhancement);
            if (s.error) {
                fmt::print(stderr, "error: {}\n", *s.error);
                return 2;
            }
        } else if (profile->parsed()) {
            std::optional<fs::path> mask;
            if (!mask_path.empty()) mask = mask_path;
            const auto s = ex::cmd_profile(channel_path, mask, out_dir);
            fmt::print("contrast before         {:.2f}\n", s.blank_contrast);
            fmt::print("contrast after          {:.2f}\n", s.mask_contrast);
        } else if (qkd->parsed()) {
            const auto cfg = resolve(common);
            std::optional<fs::path> mask;
            if (!mask_path.empty()) mask = mask_path;
            const auto s = ex::cmd_qkd(cfg, channel_path, mask, extra_loss_db, out);
            const auto& o = s.observation;
            fmt::print("total loss              {:.2f} dB\n", s.total_loss_db);
            fmt::print("Q_mu {:.4e}  E_mu {:.2f}%  Q_nu {:.4e}  E_nu {:.2f}%  Y0 {:.3e}\n", o.q_mu,
                       100 * o.e_mu, o.q_nu, 100 * o.e_nu, o.y0);
            fmt::print("R                       {:.4e}\n", s.result.rate);
            for (const auto& n : s.notes) fmt::print("note: {}\n", n);
        } else if (keyrate->parsed()) {
            std::optional<fs::path> jo;
            if (!json_out.empty()) jo = json_out;
            const auto s = ex::cmd_keyrate(batch, params, tolerance, jo);
            std::cout << wfqkd::io::report_to_table(s.report, tolerance);
            return s.all_within ? 0 : 1;
        }
    } catch (const ex::ConfigError& e) {
        fmt::print(stderr, "config error: {}\n", e.what());
        return 1;
    } catch (const wfqkd::io::FormatError& e) {
        fmt::print(stderr, "format error: {}\n", e.what());
        return 1;
    } catch (const std::invalid_argument& e) {
        fmt::print(stderr, "invalid input: {}\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 2;
    }
    return 0;
}

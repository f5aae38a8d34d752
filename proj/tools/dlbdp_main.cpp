#include "dlbdp/experiment.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out = "dlbdp_out";
    std::string preset;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
    cmd->add_option("--config", opts.config_path, "TOML experiment file")->check(CLI::ExistingFile);
    cmd->add_option("--set", opts.overrides, "Override one key, e.g. --set scheme.batch_size=256")
        ->take_all()
        ->allow_extra_args(false);
    cmd->add_option("--out", opts.out, "Output directory")->capture_default_str();
    cmd->add_option("--preset", opts.preset, "Budget preset")->check(CLI::IsMember({"desk", "paper"}));
}

dlbdp::ExperimentConfig load(const CommonOptions& opts) {
    std::optional<std::string> text;
    if (!opts.config_path.empty()) {
        std::ifstream f(opts.config_path);
        std::stringstream buf;
        buf << f.rdbuf();
        text = buf.str();
    }
    std::optional<std::string> preset;
    if (!opts.preset.empty()) preset = opts.preset;
    return dlbdp::load_config(preset, text, opts.overrides);
}

void progress(const std::string& line) { std::cerr << line << std::endl; }

void print_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    std::cout << f.rdbuf();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deep backward BSDE solvers with differential learning"};
    app.require_subcommand(1);

    CommonOptions run_opts, compare_opts, sweep_opts, paths_opts, oracle_opts;
    auto* run = app.add_subcommand("run", "Q seeded runs at N = experiment.n, scored against the reference");
    add_common(run, run_opts);
    auto* cmp = app.add_subcommand("compare", "DBDP against DLBDP over experiment.n_list with shared seeds");
    add_common(cmp, compare_opts);
    auto* sweep = app.add_subcommand("sweep-n", "One run per N in experiment.n_list");
    add_common(sweep, sweep_opts);
    auto* paths = app.add_subcommand("paths-dump", "Write the test paths of the first seed to paths.csv");
    add_common(paths, paths_opts);
    auto* oracle = app.add_subcommand("oracle", "Evaluate the reference solution at t0");
    add_common(oracle, oracle_opts);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            const auto config = load(run_opts);
            const auto report = dlbdp::run_experiment(config, progress);
            dlbdp::write_run_outputs(run_opts.out, report);
            print_file(std::filesystem::path(run_opts.out) / "summary.txt");
        } else if (cmp->parsed()) {
            const auto config = load(compare_opts);
            const auto comparison = dlbdp::compare(config, progress);
            dlbdp::write_compare_outputs(compare_opts.out, comparison);
            print_file(std::filesystem::path(compare_opts.out) / "summary.txt");
        } else if (sweep->parsed()) {
            const auto config = load(sweep_opts);
            const auto result = dlbdp::sweep_n(config, config.n_list, progress);
            dlbdp::write_sweep_outputs(sweep_opts.out, result);
            print_file(std::filesystem::path(sweep_opts.out) / "summary.txt");
        } else if (paths->parsed()) {
            const auto config = load(paths_opts);
            const auto problem = config.make_problem();
            const dlbdp::TimeGrid grid(problem->terminal_time(), config.steps);
            const auto root = dlbdp::root_stream(config.seeds.front());
            const auto batch =
                dlbdp::simulate_paths(*problem, grid, config.scheme.test_batch, dlbdp::test_stream(root));
            std::filesystem::create_directories(paths_opts.out);
            std::ofstream f(std::filesystem::path(paths_opts.out) / "paths.csv", std::ios::binary);
            dlbdp::write_paths_csv(f, batch, grid);
            std::cout << "wrote " << batch.batch_size() << " paths of " << config.steps + 1 << " points to "
                      << (std::filesystem::path(paths_opts.out) / "paths.csv").string() << '\n';
        } else if (oracle->parsed()) {
            const auto config = load(oracle_opts);
            const auto problem = config.make_problem();
            const auto json = dlbdp::oracle_json(config, *problem, dlbdp::resolve_oracle(config, *problem));
            std::filesystem::create_directories(oracle_opts.out);
            std::ofstream(std::filesystem::path(oracle_opts.out) / "oracle.json", std::ios::binary) << json;
            std::cout << json;
        }
    } catch (const dlbdp::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

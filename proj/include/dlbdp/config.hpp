#pragma once

#include "dlbdp/problems.hpp"
#include "dlbdp/solver.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace dlbdp {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Values of the TOML subset: booleans, integers, floats, strings and flat numeric arrays.
using ConfigValue =
    std::variant<bool, std::int64_t, double, std::string, std::vector<std::int64_t>, std::vector<double>>;
/// Flat table keyed by dotted path ("scheme.batch_size").
using ConfigTable = std::map<std::string, ConfigValue>;

/// Parses [section] headers, key = value lines and # comments. Nested tables, inline tables
/// and multi-line values are rejected with the offending line number.
ConfigTable parse_toml(std::string_view text);
ConfigValue parse_toml_value(std::string_view text);
/// Canonical text: root keys first, then one [section] per prefix, keys sorted, floats in
/// shortest round-trip form.
std::string emit_toml(const ConfigTable& table);

/// Shortest decimal that reads back to the same double ("nan", "inf" for non-finite values).
std::string format_double(double v);

enum class ProblemKind { black_scholes, different_rates, hjb, local_vol };

std::string to_string(ProblemKind k);
ProblemKind problem_from_string(const std::string& name);

/// Scalar parameters of the basket call; every asset shares them and the weights are 1/d.
struct BlackScholesSettings {
    double x0 = 100.0;
    double drift = 0.05;
    double vol = 0.2;
    double dividend = 0.0;
    double rate = 0.03;
    double strike = 100.0;
    double maturity = 1.0;
};

struct HjbSettings {
    double maturity = 0.5;
    double x0 = 1.0;
    double vol = 0.4472135954999579;
    std::size_t reference_samples = 10'000'000;
    std::uint64_t reference_seed = 2024;
};

struct ExperimentConfig {
    std::string preset = "paper";
    ProblemKind problem = ProblemKind::black_scholes;
    /// Unset means the problem's usual dimension (1 for the call examples, 50 otherwise).
    std::optional<std::size_t> d;
    std::size_t steps = 8;  // N of a single run
    std::vector<std::size_t> n_list{2, 8, 32, 64};
    std::size_t runs = 10;  // Q
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    /// Reference value of Y0 for problems without a closed form (e.g. the 50-asset spread).
    std::optional<double> reference_y0;
    bool emit_paths = false;
    SchemeConfig scheme;  // steps, seed and checkpoint_dir are filled per run

    BlackScholesSettings black_scholes;
    DifferentRatesParams different_rates;
    HjbSettings hjb;
    LocalVolParams local_vol;

    std::size_t dim() const;
    /// Scheme settings of run q at N steps.
    SchemeConfig scheme_for(std::size_t steps, std::size_t q) const;
    ProblemPtr make_problem() const;
    /// Throws ConfigError naming the offending key.
    void validate() const;
};

/// Full-budget setup: eta = 100 + d, 24000 / 10000 steps, B = 1024, Q = 10.
ExperimentConfig paper_preset();
/// Desk budget: eta = 32, 4000 / 2000 steps, B = 256, Q = 3.
ExperimentConfig desk_preset();
ExperimentConfig preset_by_name(const std::string& name);

/// Every field of the config under its dotted key. Unset optionals are omitted.
ConfigTable to_table(const ExperimentConfig& config);
/// Overlays the table on `base`. Unknown keys and ill-typed values raise ConfigError.
ExperimentConfig apply_table(ExperimentConfig base, const ConfigTable& table);

/// `key=value` with the value in TOML syntax; bare words are read as strings.
std::pair<std::string, ConfigValue> parse_override(std::string_view assignment);

/// Preset, then the file's `preset` key if it names a different one, then the file, then overrides.
/// When `preset` is given on the command line it wins over the file's key.
ExperimentConfig load_config(const std::optional<std::string>& preset, const std::optional<std::string>& toml_text,
                             const std::vector<std::string>& overrides);

}  // namespace dlbdp

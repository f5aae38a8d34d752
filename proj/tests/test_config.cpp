#include <doctest.h>

#include "dlbdp/config.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

using namespace dlbdp;

TEST_CASE("toml subset parsing") {
    const auto t = parse_toml(R"(
# leading comment
top = "a # not a comment"   # trailing comment
[scheme]
batch_size = 10_000
rate = 2.5e-3
flag = true
names = "x\"y"
[experiment]
seeds = [1, 2, 3]
mixed = [1, 2.5]
empty = []
neg = -4
special = -inf
)");
    CHECK(std::get<std::string>(t.at("top")) == "a # not a comment");
    CHECK(std::get<std::int64_t>(t.at("scheme.batch_size")) == 10000);
    CHECK(std::get<double>(t.at("scheme.rate")) == 2.5e-3);
    CHECK(std::get<bool>(t.at("scheme.flag")));
    CHECK(std::get<std::string>(t.at("scheme.names")) == "x\"y");
    CHECK(std::get<std::vector<std::int64_t>>(t.at("experiment.seeds")) == std::vector<std::int64_t>{1, 2, 3});
    CHECK(std::get<std::vector<double>>(t.at("experiment.mixed")) == std::vector<double>{1.0, 2.5});
    CHECK(std::get<std::vector<std::int64_t>>(t.at("experiment.empty")).empty());
    CHECK(std::get<std::int64_t>(t.at("experiment.neg")) == -4);
    CHECK(std::isinf(std::get<double>(t.at("experiment.special"))));
}

TEST_CASE("toml subset errors carry line numbers") {
    auto message = [](const char* text) {
        try {
            parse_toml(text);
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(message("a = 1\nb = \n").rfind("line 2", 0) == 0);
    CHECK(message("a = 1\na = 2\n").find("duplicate") != std::string::npos);
    CHECK(message("[[array_of_tables]]\n").rfind("line 1", 0) == 0);
    CHECK(message("x = {a = 1}\n").find("inline") != std::string::npos);
    CHECK(message("x = [1, \"a\"]\n").find("numbers only") != std::string::npos);
    CHECK(message("just words\n").find("key = value") != std::string::npos);
    CHECK(message("x = word\n").find("cannot parse") != std::string::npos);
    CHECK(message("x = \"open\n").find("malformed string") != std::string::npos);
}

TEST_CASE("doubles survive emit and parse bitwise") {
    RngStream rng(31, 1);
    ConfigTable t;
    std::vector<double> values = rng.normals(200);
    values.insert(values.end(), {0.0, -0.0, 1e-300, 5e-324, 1.7976931348623157e308, 3.0, 1e22, 0.1});
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = i < 200 ? values[i] * std::pow(10.0, static_cast<int>(i % 40) - 20) : values[i];
        t.emplace("sec.v" + std::to_string(i), v);
    }
    t.emplace("sec.list", std::vector<double>{0.1, 0.2, 1.0});
    t.emplace("name", std::string("tab\there \\ \"quoted\""));
    const auto back = parse_toml(emit_toml(t));
    REQUIRE(back.size() == t.size());
    for (const auto& [key, value] : t) {
        const auto& other = back.at(key);
        REQUIRE(other.index() == value.index());
        if (const auto* d = std::get_if<double>(&value)) {
            const double e = std::get<double>(other);
            CHECK(std::memcmp(d, &e, sizeof e) == 0);
        } else {
            CHECK(other == value);
        }
    }
    CHECK(emit_toml(back) == emit_toml(t));
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(1e-5) == "1e-05");
}

TEST_CASE("presets") {
    const auto paper = paper_preset();
    CHECK(paper.scheme.width(1) == 101);
    CHECK(paper.scheme.width(50) == 150);
    CHECK(paper.scheme.hidden_layers == 2);
    CHECK(paper.scheme.terminal_steps == 24000);
    CHECK(paper.scheme.interior_steps == 10000);
    CHECK(paper.scheme.batch_size == 1024);
    CHECK(paper.scheme.test_batch == 1024);
    CHECK(paper.runs == 10);
    CHECK(paper.seeds.size() == 10);
    CHECK(paper.n_list == std::vector<std::size_t>{2, 8, 32, 64});
    CHECK(paper.black_scholes.vol == 0.2);
    CHECK(paper.hjb.maturity == 0.5);
    CHECK(paper.hjb.reference_samples == 10'000'000);
    paper.validate();

    const auto desk = desk_preset();
    CHECK(desk.scheme.width(1) == 32);
    CHECK(desk.scheme.terminal_steps == 4000);
    CHECK(desk.scheme.interior_steps == 2000);
    CHECK(desk.scheme.batch_size == 256);
    CHECK(desk.runs == 3);
    CHECK(desk.seeds == std::vector<std::uint64_t>{1, 2, 3});
    desk.validate();
    CHECK_THROWS_AS(preset_by_name("laptop"), ConfigError);
}

TEST_CASE("dimension defaults follow the problem") {
    ExperimentConfig c;
    CHECK(c.dim() == 1);
    c.problem = ProblemKind::hjb;
    CHECK(c.dim() == 50);
    c.problem = ProblemKind::local_vol;
    CHECK(c.dim() == 50);
    c.d = 3;
    CHECK(c.make_problem()->dim() == 3);
    c.different_rates.payoff = RatesPayoff::max_call_spread;
    for (auto k : {ProblemKind::black_scholes, ProblemKind::different_rates, ProblemKind::hjb, ProblemKind::local_vol}) {
        c.problem = k;
        CHECK(c.make_problem()->dim() == 3);
        CHECK(problem_from_string(to_string(k)) == k);
    }
    CHECK_THROWS_AS(problem_from_string("heston"), ConfigError);
}

TEST_CASE("experiment config round trip") {
    for (ExperimentConfig c : {paper_preset(), desk_preset()}) {
        const std::string text = emit_toml(to_table(c));
        const ExperimentConfig back = apply_table(ExperimentConfig{}, parse_toml(text));
        CHECK(emit_toml(to_table(back)) == text);
    }

    ExperimentConfig c = desk_preset();
    c.problem = ProblemKind::different_rates;
    c.d = 2;
    c.steps = 16;
    c.n_list = {4, 16};
    c.runs = 2;
    c.seeds = {11, 99};
    c.reference_y0 = 17.9743;
    c.emit_paths = true;
    c.scheme.scheme = Scheme::dlbdp;
    c.scheme.omega1 = 0.1;
    c.scheme.omega2 = 0.9;
    c.scheme.divergence_threshold = 1.5e9;
    c.different_rates.payoff = RatesPayoff::max_call_spread;
    c.different_rates.vol = 0.1 + 0.2;  // not exactly 0.3
    c.local_vol.b1 = 1.0 / 3.0;
    const ExperimentConfig back = apply_table(paper_preset(), parse_toml(emit_toml(to_table(c))));
    CHECK(to_table(back) == to_table(c));
    CHECK(back.d == c.d);
    CHECK(back.seeds == c.seeds);
    CHECK(back.reference_y0 == c.reference_y0);
    CHECK(back.scheme.omega1 == c.scheme.omega1);
    CHECK(back.scheme.hidden_width == c.scheme.hidden_width);
    CHECK(back.different_rates.payoff == RatesPayoff::max_call_spread);
    CHECK(back.different_rates.vol == c.different_rates.vol);
    CHECK(back.local_vol.b1 == c.local_vol.b1);
    // Unset optionals are not emitted.
    CHECK(to_table(paper_preset()).count("scheme.hidden_width") == 0);
    CHECK(to_table(paper_preset()).count("experiment.d") == 0);
}

TEST_CASE("command-line overrides") {
    CHECK(std::get<std::int64_t>(parse_override("scheme.batch_size=64").second) == 64);
    CHECK(std::get<std::string>(parse_override("scheme.name=dbdp").second) == "dbdp");
    CHECK(std::get<std::string>(parse_override("different_rates.payoff=max_call_spread").second) == "max_call_spread");
    CHECK(std::get<std::vector<std::int64_t>>(parse_override("experiment.n_list=[2, 4]").second).size() == 2);
    CHECK_THROWS_AS(parse_override("no_equals"), ConfigError);
    CHECK_THROWS_AS(parse_override("x=a b"), ConfigError);

    const auto c = load_config("desk", std::string("problem = \"hjb\"\n[experiment]\nd = 2\n"),
                               {"scheme.name=dbdp", "experiment.runs=4", "black_scholes.vol=0.3"});
    CHECK(c.preset == "desk");
    CHECK(c.problem == ProblemKind::hjb);
    CHECK(c.dim() == 2);
    CHECK(c.scheme.scheme == Scheme::dbdp);
    CHECK(c.seeds == std::vector<std::uint64_t>{1, 2, 3, 4});
    CHECK(c.black_scholes.vol == 0.3);
    CHECK(c.scheme.batch_size == 256);

    // The file names its preset; the command line wins over it.
    CHECK(load_config(std::nullopt, std::string("preset = \"desk\"\n"), {}).scheme.batch_size == 256);
    CHECK(load_config("paper", std::string("preset = \"desk\"\n"), {}).scheme.batch_size == 1024);
    CHECK(load_config(std::nullopt, std::nullopt, {"experiment.seeds=[7, 8]"}).runs == 2);

    CHECK_THROWS_AS(load_config(std::nullopt, std::nullopt, {"scheme.bogus=1"}), ConfigError);
    CHECK_THROWS_AS(load_config(std::nullopt, std::nullopt, {"scheme.batch_size=1.5"}), ConfigError);
    CHECK_THROWS_AS(load_config(std::nullopt, std::nullopt, {"scheme.batch_size=-3"}), ConfigError);
    CHECK_THROWS_AS(load_config(std::nullopt, std::nullopt, {"black_scholes.vol=\"high\""}), ConfigError);
    CHECK_THROWS_AS(load_config(std::nullopt, std::nullopt, {"experiment.runs=2", "experiment.seeds=[1]"}),
                    ConfigError);
    CHECK_THROWS_AS(load_config(std::nullopt, std::nullopt, {"experiment.n_list=[8, 2]"}), ConfigError);
    CHECK_THROWS_AS(load_config(std::nullopt, std::nullopt, {"black_scholes.vol=-0.2"}), ConfigError);
    CHECK_THROWS_AS(load_config(std::nullopt, std::nullopt, {"scheme.omega1=1.5"}), ConfigError);
    CHECK_THROWS_AS(load_config(std::nullopt, std::nullopt, {"preset=desk"}), ConfigError);
    CHECK_THROWS_AS(load_config(std::nullopt, std::nullopt, {"scheme.name=deep"}), ConfigError);
    CHECK_THROWS_AS(load_config(std::nullopt, std::nullopt, {"hjb.reference_samples=100"}), ConfigError);
}

TEST_CASE("per-run scheme settings") {
    ExperimentConfig c = desk_preset();
    c.seeds = {5, 9, 13};
    const auto s = c.scheme_for(32, 1);
    CHECK(s.steps == 32);
    CHECK(s.seed == 9);
    CHECK(s.batch_size == 256);
    CHECK_THROWS(c.scheme_for(8, 3));
}

TEST_CASE("shipped example configs load and validate") {
    std::size_t count = 0;
    for (const auto& entry : std::filesystem::directory_iterator(DLBDP_CONFIG_DIR)) {
        if (entry.path().extension() != ".toml") continue;
        std::ifstream in(entry.path());
        const std::string text((std::istreambuf_iterator<char>(in)), {});
        CHECK_NOTHROW_MESSAGE(load_config(std::nullopt, text, {}), entry.path().filename().string());
        ++count;
    }
    CHECK(count >= 6);
    const auto spread = [] {
        std::ifstream in(std::filesystem::path(DLBDP_CONFIG_DIR) / "different_rates_spread_d50_paper.toml");
        return load_config(std::nullopt, std::string((std::istreambuf_iterator<char>(in)), {}), {});
    }();
    CHECK(spread.dim() == 50);
    CHECK(spread.reference_y0 == 17.9743);
    CHECK(spread.scheme.batch_size == 1024);
}

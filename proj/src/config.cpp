#include "dlbdp/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>

namespace dlbdp {

// --- TOML subset -------------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string_view::npos) return {};
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

bool is_bare_key(std::string_view key) {
    if (key.empty()) return false;
    for (char c : key)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
    return key.front() != '.' && key.back() != '.' && key.find("..") == std::string_view::npos;
}

// Position of a '#' that starts a comment, ignoring those inside strings.
std::size_t comment_start(std::string_view line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (in_string && c == '\\') {
            ++i;
        } else if (c == '"') {
            in_string = !in_string;
        } else if (c == '#' && !in_string) {
            return i;
        }
    }
    return line.size();
}

std::string parse_string(std::string_view s) {
    if (s.size() < 2 || s.front() != '"' || s.back() != '"') throw ConfigError("malformed string " + std::string(s));
    std::string out;
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
        char c = s[i];
        if (c == '"') throw ConfigError("unescaped quote in string " + std::string(s));
        if (c == '\\') {
            if (i + 2 >= s.size()) throw ConfigError("dangling escape in string " + std::string(s));
            switch (s[++i]) {
                case '"': c = '"'; break;
                case '\\': c = '\\'; break;
                case 'n': c = '\n'; break;
                case 't': c = '\t'; break;
                default: throw ConfigError("unsupported escape in string " + std::string(s));
            }
        }
        out.push_back(c);
    }
    return out;
}

// Digits with TOML-style underscores between them.
std::optional<std::string> strip_underscores(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '_') {
            const bool ok = i > 0 && i + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[i - 1])) &&
                            std::isdigit(static_cast<unsigned char>(s[i + 1]));
            if (!ok) return std::nullopt;
            continue;
        }
        out.push_back(s[i]);
    }
    return out;
}

std::optional<std::int64_t> parse_integer(std::string_view s) {
    const auto digits = strip_underscores(s);
    if (!digits) return std::nullopt;
    std::string_view v = *digits;
    if (!v.empty() && v.front() == '+') v.remove_prefix(1);
    if (v.empty() || v == "-") return std::nullopt;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(v[i])) && !(i == 0 && v[i] == '-')) return std::nullopt;
    std::int64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) throw ConfigError("integer out of range: " + std::string(s));
    return out;
}

std::optional<double> parse_float(std::string_view s) {
    if (s == "nan" || s == "+nan" || s == "-nan") return std::nan("");
    if (s == "inf" || s == "+inf") return HUGE_VAL;
    if (s == "-inf") return -HUGE_VAL;
    const auto digits = strip_underscores(s);
    if (!digits) return std::nullopt;
    std::string_view v = *digits;
    if (!v.empty() && v.front() == '+') v.remove_prefix(1);
    double out = 0.0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size() || v.empty()) return std::nullopt;
    return out;
}

ConfigValue parse_array(std::string_view s) {
    std::string_view body = trim(s.substr(1, s.size() - 2));
    std::vector<std::string_view> items;
    while (!body.empty()) {
        const auto comma = body.find(',');
        items.push_back(trim(body.substr(0, comma)));
        if (comma == std::string_view::npos) break;
        body = trim(body.substr(comma + 1));
    }
    std::vector<std::int64_t> ints;
    bool all_int = true;
    for (auto item : items) {
        if (item.empty()) throw ConfigError("empty array element in " + std::string(s));
        const auto i = parse_integer(item);
        if (!i) {
            all_int = false;
            break;
        }
        ints.push_back(*i);
    }
    if (all_int) return ints;
    std::vector<double> reals;
    for (auto item : items) {
        const auto f = parse_float(item);
        if (!f) throw ConfigError("arrays may hold numbers only: " + std::string(s));
        reals.push_back(*f);
    }
    return reals;
}

}  // namespace

ConfigValue parse_toml_value(std::string_view text) {
    const std::string_view s = trim(text);
    if (s.empty()) throw ConfigError("missing value");
    if (s.front() == '"') return parse_string(s);
    if (s == "true") return true;
    if (s == "false") return false;
    if (s.front() == '[') {
        if (s.back() != ']') throw ConfigError("unterminated array " + std::string(s));
        return parse_array(s);
    }
    if (s.front() == '{') throw ConfigError("inline tables are not supported");
    if (const auto i = parse_integer(s)) return *i;
    if (const auto f = parse_float(s)) return *f;
    throw ConfigError("cannot parse value '" + std::string(s) + "'");
}

ConfigTable parse_toml(std::string_view text) {
    ConfigTable table;
    std::string section;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto end = std::min(text.find('\n', pos), text.size());
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        line = trim(line.substr(0, comment_start(line)));
        if (line.empty()) continue;
        const std::string where = "line " + std::to_string(line_no) + ": ";
        if (line.front() == '[') {
            if (line.size() < 3 || line.back() != ']' || line[1] == '[')
                throw ConfigError(where + "malformed table header");
            const auto name = trim(line.substr(1, line.size() - 2));
            if (!is_bare_key(name)) throw ConfigError(where + "invalid table name");
            section = std::string(name);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
        const auto key = trim(line.substr(0, eq));
        if (!is_bare_key(key)) throw ConfigError(where + "invalid key '" + std::string(key) + "'");
        const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
        try {
            const auto [it, inserted] = table.emplace(full, parse_toml_value(line.substr(eq + 1)));
            if (!inserted) throw ConfigError("duplicate key '" + full + "'");
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
    return table;
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace {

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            default: out.push_back(c);
        }
    }
    return out + "\"";
}

// Floats always carry a '.', an exponent or a special name so they read back as floats.
std::string toml_float(double v) {
    std::string s = format_double(v);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

std::string emit_value(const ConfigValue& value) {
    return std::visit(
        [](const auto& v) -> std::string {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, bool>) {
                return v ? "true" : "false";
            } else if constexpr (std::is_same_v<T, std::int64_t>) {
                return std::to_string(v);
            } else if constexpr (std::is_same_v<T, double>) {
                return toml_float(v);
            } else if constexpr (std::is_same_v<T, std::string>) {
                return quote(v);
            } else {
                std::string out = "[";
                for (std::size_t i = 0; i < v.size(); ++i) {
                    if (i) out += ", ";
                    if constexpr (std::is_same_v<T, std::vector<double>>) {
                        out += toml_float(v[i]);
                    } else {
                        out += std::to_string(v[i]);
                    }
                }
                return out + "]";
            }
        },
        value);
}

}  // namespace

std::string emit_toml(const ConfigTable& table) {
    std::ostringstream out;
    std::map<std::string, std::vector<std::pair<std::string, const ConfigValue*>>> sections;
    for (const auto& [key, value] : table) {
        const auto dot = key.find('.');
        if (dot == std::string::npos) {
            out << key << " = " << emit_value(value) << '\n';
        } else {
            sections[key.substr(0, dot)].emplace_back(key.substr(dot + 1), &value);
        }
    }
    for (const auto& [name, entries] : sections) {
        out << "\n[" << name << "]\n";
        for (const auto& [key, value] : entries) out << key << " = " << emit_value(*value) << '\n';
    }
    return out.str();
}

// --- Experiment config ---------------------------------------------------------------

std::string to_string(ProblemKind k) {
    switch (k) {
        case ProblemKind::black_scholes: return "black_scholes";
        case ProblemKind::different_rates: return "different_rates";
        case ProblemKind::hjb: return "hjb";
        case ProblemKind::local_vol: return "local_vol";
    }
    return "?";
}

ProblemKind problem_from_string(const std::string& name) {
    for (auto k : {ProblemKind::black_scholes, ProblemKind::different_rates, ProblemKind::hjb, ProblemKind::local_vol})
        if (to_string(k) == name) return k;
    throw ConfigError("unknown problem '" + name + "' (black_scholes, different_rates, hjb, local_vol)");
}

std::size_t ExperimentConfig::dim() const {
    if (d) return *d;
    return problem == ProblemKind::black_scholes || problem == ProblemKind::different_rates ? 1 : 50;
}

SchemeConfig ExperimentConfig::scheme_for(std::size_t n, std::size_t q) const {
    if (q >= seeds.size()) throw std::out_of_range("scheme_for: run index beyond the seed list");
    SchemeConfig s = scheme;
    s.steps = n;
    s.seed = seeds[q];
    return s;
}

ProblemPtr ExperimentConfig::make_problem() const {
    const std::size_t n = dim();
    switch (problem) {
        case ProblemKind::black_scholes: {
            const auto& b = black_scholes;
            BlackScholesParams p;
            p.d = n;
            p.x0.assign(n, b.x0);
            p.drift.assign(n, b.drift);
            p.vol.assign(n, b.vol);
            p.dividend.assign(n, b.dividend);
            p.rate = b.rate;
            p.strike = b.strike;
            p.maturity = b.maturity;
            return make_black_scholes(p);
        }
        case ProblemKind::different_rates: {
            DifferentRatesParams p = different_rates;
            p.d = n;
            return make_different_rates(p);
        }
        case ProblemKind::hjb:
            return make_hjb({.d = n, .maturity = hjb.maturity, .x0 = std::vector<double>(n, hjb.x0), .vol = hjb.vol});
        case ProblemKind::local_vol: {
            LocalVolParams p = local_vol;
            p.d = n;
            return make_local_vol(p);
        }
    }
    throw ConfigError("unknown problem");
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError(what); };
    if (dim() == 0) fail("experiment.d must be >= 1");
    if (steps == 0) fail("experiment.n must be >= 1");
    if (n_list.empty()) fail("experiment.n_list must not be empty");
    for (std::size_t i = 0; i < n_list.size(); ++i) {
        if (n_list[i] == 0) fail("experiment.n_list entries must be >= 1");
        if (i > 0 && n_list[i] <= n_list[i - 1]) fail("experiment.n_list must be strictly ascending");
    }
    if (runs == 0) fail("experiment.runs must be >= 1");
    if (seeds.size() != runs) fail("experiment.seeds must hold experiment.runs entries");
    if (hjb.reference_samples < 10000) fail("hjb.reference_samples must be >= 10000");
    try {
        SchemeConfig s = scheme;
        s.steps = steps;
        s.validate(dim());
        make_problem();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

ExperimentConfig paper_preset() { return ExperimentConfig{}; }

ExperimentConfig desk_preset() {
    ExperimentConfig c;
    c.preset = "desk";
    c.scheme.hidden_width = 32;
    c.scheme.terminal_steps = 4000;
    c.scheme.interior_steps = 2000;
    c.scheme.batch_size = 256;
    c.runs = 3;
    c.seeds = {1, 2, 3};
    c.n_list = {2, 4, 8};
    return c;
}

ExperimentConfig preset_by_name(const std::string& name) {
    if (name == "paper") return paper_preset();
    if (name == "desk") return desk_preset();
    throw ConfigError("unknown preset '" + name + "' (desk, paper)");
}

namespace {

struct Field {
    std::string key;
    std::function<std::optional<ConfigValue>(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const ConfigValue&)> set;
};

[[noreturn]] void type_error(const std::string& key, const char* expected) {
    throw ConfigError(key + ": expected " + expected);
}

double as_double(const std::string& key, const ConfigValue& v) {
    if (const auto* d = std::get_if<double>(&v)) return *d;
    if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
    type_error(key, "a number");
}

std::size_t as_size(const std::string& key, const ConfigValue& v) {
    if (const auto* i = std::get_if<std::int64_t>(&v); i && *i >= 0) return static_cast<std::size_t>(*i);
    type_error(key, "a non-negative integer");
}

std::string as_string(const std::string& key, const ConfigValue& v) {
    if (const auto* s = std::get_if<std::string>(&v)) return *s;
    type_error(key, "a string");
}

bool as_bool(const std::string& key, const ConfigValue& v) {
    if (const auto* b = std::get_if<bool>(&v)) return *b;
    type_error(key, "true or false");
}

std::vector<std::int64_t> as_int_list(const std::string& key, const ConfigValue& v) {
    if (const auto* l = std::get_if<std::vector<std::int64_t>>(&v)) {
        for (auto x : *l)
            if (x < 0) type_error(key, "an array of non-negative integers");
        return *l;
    }
    type_error(key, "an array of non-negative integers");
}

template <class T>
std::vector<std::int64_t> to_int_list(const std::vector<T>& v) {
    return {v.begin(), v.end()};
}

// Helpers that bind a member to a key.
template <class Get>
Field real(std::string key, Get member) {
    return {key, [member](const ExperimentConfig& c) -> std::optional<ConfigValue> { return *member(c); },
            [member, key](ExperimentConfig& c, const ConfigValue& v) { *member(c) = as_double(key, v); }};
}

template <class Get>
Field count(std::string key, Get member) {
    return {key,
            [member](const ExperimentConfig& c) -> std::optional<ConfigValue> {
                return static_cast<std::int64_t>(*member(c));
            },
            [member, key](ExperimentConfig& c, const ConfigValue& v) {
                *member(c) = static_cast<std::remove_reference_t<decltype(*member(c))>>(as_size(key, v));
            }};
}

template <class Get>
Field optional_real(std::string key, Get member) {
    return {key,
            [member](const ExperimentConfig& c) -> std::optional<ConfigValue> {
                const auto& o = *member(c);
                if (!o) return std::nullopt;
                return *o;
            },
            [member, key](ExperimentConfig& c, const ConfigValue& v) { *member(c) = as_double(key, v); }};
}

template <class Get>
Field optional_count(std::string key, Get member) {
    return {key,
            [member](const ExperimentConfig& c) -> std::optional<ConfigValue> {
                const auto& o = *member(c);
                if (!o) return std::nullopt;
                return static_cast<std::int64_t>(*o);
            },
            [member, key](ExperimentConfig& c, const ConfigValue& v) { *member(c) = as_size(key, v); }};
}

#define DLBDP_MEMBER(expr) [](auto& c) { return &(c.expr); }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back({"preset", [](const ExperimentConfig& c) -> std::optional<ConfigValue> { return c.preset; },
                     [](ExperimentConfig& c, const ConfigValue& v) {
                         c.preset = as_string("preset", v);
                         preset_by_name(c.preset);
                     }});
        f.push_back({"problem",
                     [](const ExperimentConfig& c) -> std::optional<ConfigValue> { return to_string(c.problem); },
                     [](ExperimentConfig& c, const ConfigValue& v) {
                         c.problem = problem_from_string(as_string("problem", v));
                     }});
        f.push_back(optional_count("experiment.d", DLBDP_MEMBER(d)));
        f.push_back(count("experiment.n", DLBDP_MEMBER(steps)));
        f.push_back({"experiment.n_list",
                     [](const ExperimentConfig& c) -> std::optional<ConfigValue> { return to_int_list(c.n_list); },
                     [](ExperimentConfig& c, const ConfigValue& v) {
                         const auto l = as_int_list("experiment.n_list", v);
                         c.n_list.assign(l.begin(), l.end());
                     }});
        f.push_back(count("experiment.runs", DLBDP_MEMBER(runs)));
        f.push_back({"experiment.seeds",
                     [](const ExperimentConfig& c) -> std::optional<ConfigValue> { return to_int_list(c.seeds); },
                     [](ExperimentConfig& c, const ConfigValue& v) {
                         const auto l = as_int_list("experiment.seeds", v);
                         c.seeds.assign(l.begin(), l.end());
                     }});
        f.push_back(optional_real("experiment.reference_y0", DLBDP_MEMBER(reference_y0)));
        f.push_back({"experiment.emit_paths",
                     [](const ExperimentConfig& c) -> std::optional<ConfigValue> { return c.emit_paths; },
                     [](ExperimentConfig& c, const ConfigValue& v) { c.emit_paths = as_bool("experiment.emit_paths", v); }});

        f.push_back({"scheme.name",
                     [](const ExperimentConfig& c) -> std::optional<ConfigValue> { return to_string(c.scheme.scheme); },
                     [](ExperimentConfig& c, const ConfigValue& v) {
                         try {
                             c.scheme.scheme = scheme_from_string(as_string("scheme.name", v));
                         } catch (const ConfigError&) {
                             throw;
                         } catch (const std::exception& e) {
                             throw ConfigError(std::string("scheme.name: ") + e.what());
                         }
                     }});
        f.push_back(optional_real("scheme.omega1", DLBDP_MEMBER(scheme.omega1)));
        f.push_back(optional_real("scheme.omega2", DLBDP_MEMBER(scheme.omega2)));
        f.push_back(count("scheme.batch_size", DLBDP_MEMBER(scheme.batch_size)));
        f.push_back(count("scheme.terminal_steps", DLBDP_MEMBER(scheme.terminal_steps)));
        f.push_back(count("scheme.interior_steps", DLBDP_MEMBER(scheme.interior_steps)));
        f.push_back(count("scheme.hidden_layers", DLBDP_MEMBER(scheme.hidden_layers)));
        f.push_back(optional_count("scheme.hidden_width", DLBDP_MEMBER(scheme.hidden_width)));
        f.push_back(count("scheme.test_batch", DLBDP_MEMBER(scheme.test_batch)));
        f.push_back(real("scheme.divergence_threshold", DLBDP_MEMBER(scheme.divergence_threshold)));
        f.push_back(count("scheme.loss_log_every", DLBDP_MEMBER(scheme.loss_log_every)));

        f.push_back(real("black_scholes.x0", DLBDP_MEMBER(black_scholes.x0)));
        f.push_back(real("black_scholes.drift", DLBDP_MEMBER(black_scholes.drift)));
        f.push_back(real("black_scholes.vol", DLBDP_MEMBER(black_scholes.vol)));
        f.push_back(real("black_scholes.dividend", DLBDP_MEMBER(black_scholes.dividend)));
        f.push_back(real("black_scholes.rate", DLBDP_MEMBER(black_scholes.rate)));
        f.push_back(real("black_scholes.strike", DLBDP_MEMBER(black_scholes.strike)));
        f.push_back(real("black_scholes.maturity", DLBDP_MEMBER(black_scholes.maturity)));

        f.push_back({"different_rates.payoff",
                     [](const ExperimentConfig& c) -> std::optional<ConfigValue> {
                         return std::string(c.different_rates.payoff == RatesPayoff::call ? "call" : "max_call_spread");
                     },
                     [](ExperimentConfig& c, const ConfigValue& v) {
                         const auto s = as_string("different_rates.payoff", v);
                         if (s == "call") {
                             c.different_rates.payoff = RatesPayoff::call;
                         } else if (s == "max_call_spread") {
                             c.different_rates.payoff = RatesPayoff::max_call_spread;
                         } else {
                             throw ConfigError("different_rates.payoff: expected call or max_call_spread");
                         }
                     }});
        f.push_back(real("different_rates.x0", DLBDP_MEMBER(different_rates.x0)));
        f.push_back(real("different_rates.drift", DLBDP_MEMBER(different_rates.drift)));
        f.push_back(real("different_rates.vol", DLBDP_MEMBER(different_rates.vol)));
        f.push_back(real("different_rates.lending_rate", DLBDP_MEMBER(different_rates.lending_rate)));
        f.push_back(real("different_rates.borrowing_rate", DLBDP_MEMBER(different_rates.borrowing_rate)));
        f.push_back(real("different_rates.strike", DLBDP_MEMBER(different_rates.strike)));
        f.push_back(real("different_rates.strike_low", DLBDP_MEMBER(different_rates.strike_low)));
        f.push_back(real("different_rates.strike_high", DLBDP_MEMBER(different_rates.strike_high)));
        f.push_back(real("different_rates.maturity", DLBDP_MEMBER(different_rates.maturity)));

        f.push_back(real("hjb.maturity", DLBDP_MEMBER(hjb.maturity)));
        f.push_back(real("hjb.x0", DLBDP_MEMBER(hjb.x0)));
        f.push_back(real("hjb.vol", DLBDP_MEMBER(hjb.vol)));
        f.push_back(count("hjb.reference_samples", DLBDP_MEMBER(hjb.reference_samples)));
        f.push_back(count("hjb.reference_seed", DLBDP_MEMBER(hjb.reference_seed)));

        f.push_back(real("local_vol.maturity", DLBDP_MEMBER(local_vol.maturity)));
        f.push_back(real("local_vol.x0", DLBDP_MEMBER(local_vol.x0)));
        f.push_back(real("local_vol.strike", DLBDP_MEMBER(local_vol.strike)));
        f.push_back(real("local_vol.rate", DLBDP_MEMBER(local_vol.rate)));
        f.push_back(real("local_vol.dividend", DLBDP_MEMBER(local_vol.dividend)));
        f.push_back(real("local_vol.a0", DLBDP_MEMBER(local_vol.a0)));
        f.push_back(real("local_vol.a1", DLBDP_MEMBER(local_vol.a1)));
        f.push_back(real("local_vol.a2", DLBDP_MEMBER(local_vol.a2)));
        f.push_back(real("local_vol.b0", DLBDP_MEMBER(local_vol.b0)));
        f.push_back(real("local_vol.b1", DLBDP_MEMBER(local_vol.b1)));
        f.push_back(real("local_vol.b2", DLBDP_MEMBER(local_vol.b2)));
        f.push_back(real("local_vol.period1", DLBDP_MEMBER(local_vol.period1)));
        f.push_back(real("local_vol.period2", DLBDP_MEMBER(local_vol.period2)));
        return f;
    }();
    return table;
}

#undef DLBDP_MEMBER

}  // namespace

ConfigTable to_table(const ExperimentConfig& config) {
    ConfigTable t;
    for (const auto& f : fields())
        if (auto v = f.get(config)) t.emplace(f.key, std::move(*v));
    return t;
}

ExperimentConfig apply_table(ExperimentConfig base, const ConfigTable& table) {
    for (const auto& [key, value] : table) {
        const auto it = std::find_if(fields().begin(), fields().end(), [&](const Field& f) { return f.key == key; });
        if (it == fields().end()) throw ConfigError("unknown key '" + key + "'");
        it->set(base, value);
    }
    // A run count without a seed list means seeds 1..Q, and a seed list alone fixes Q.
    const bool has_runs = table.count("experiment.runs") > 0;
    const bool has_seeds = table.count("experiment.seeds") > 0;
    if (has_runs && !has_seeds) {
        base.seeds.clear();
        for (std::size_t q = 1; q <= base.runs; ++q) base.seeds.push_back(q);
    } else if (has_seeds && !has_runs) {
        base.runs = base.seeds.size();
    }
    return base;
}

std::pair<std::string, ConfigValue> parse_override(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ConfigError("--set expects key=value, got '" + std::string(assignment) + "'");
    const auto key = trim(assignment.substr(0, eq));
    const auto text = trim(assignment.substr(eq + 1));
    if (!is_bare_key(key)) throw ConfigError("--set: invalid key '" + std::string(key) + "'");
    try {
        return {std::string(key), parse_toml_value(text)};
    } catch (const ConfigError&) {
        // Bare words such as scheme.name=dbdp are taken as strings.
        if (!text.empty() && std::all_of(text.begin(), text.end(), [](char c) {
                return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
            }))
            return {std::string(key), std::string(text)};
        throw;
    }
}

ExperimentConfig load_config(const std::optional<std::string>& preset, const std::optional<std::string>& toml_text,
                             const std::vector<std::string>& overrides) {
    ConfigTable file;
    if (toml_text) file = parse_toml(*toml_text);
    std::string name = "paper";
    if (const auto it = file.find("preset"); it != file.end()) name = as_string("preset", it->second);
    if (preset) name = *preset;
    ExperimentConfig config = preset_by_name(name);
    file.erase("preset");
    config = apply_table(std::move(config), file);
    ConfigTable extra;
    for (const auto& o : overrides) {
        auto [key, value] = parse_override(o);
        if (key == "preset") throw ConfigError("use --preset to change the preset");
        extra.insert_or_assign(std::move(key), std::move(value));
    }
    config = apply_table(std::move(config), extra);
    config.validate();
    return config;
}

}  // namespace dlbdp

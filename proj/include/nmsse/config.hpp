// Copyright 2026 The nmsse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// config.hpp - experiment configuration files.
//
// Line-oriented format:
//
//   # comment
//   [system]
//   dim = 2
//   hamiltonian = [0.5, 0]
//                 [0, -0.5]
//   initial_state = [0.7071067811865476, 0.7071067811865476]
//
// Complex numbers are written a+bi (also bi, a-bi, a). A matrix value is one bracketed row per
// line; continuation lines start with '['. Unknown sections and keys are rejected.

#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nmsse/model.hpp"
#include "nmsse/noise.hpp"
#include "nmsse/numerics.hpp"
#include "nmsse/solver.hpp"

namespace nmsse {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct MarkovBathSpec {
    double gamma = 0.0;
    std::size_t n_modes = 0;
    double omega_max = 0.0;
    bool operator==(const MarkovBathSpec&) const = default;
};

struct ExperimentConfig {
    SystemModel system;
    StateVector initial_state;
    BathModel bath;
    std::optional<MarkovBathSpec> markov;  // when set, bath.modes are generated from it
    TimeGrid grid;
    NoiseStrategy noise = NoiseStrategy::mode_sum;
    std::size_t noise_samples = 100000;
    ClosureKind closure = ClosureKind::dephasing_exact;
    std::vector<std::size_t> fock_cutoffs;
    std::size_t substeps = 1;
    std::size_t n_trajectories = 10000;
    std::uint64_t master_seed = 1;
    std::size_t workers = 0;
    std::size_t oracle_samples = 10000;
    double tolerance = 0.02;
    std::optional<double> horizon;
    std::size_t identity_samples = 100;
    std::string output_directory = "out";
    std::vector<std::string> formats{"csv", "json"};
};

inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    auto same_bath = [](const BathModel& x, const BathModel& y) {
        if (x.temperature != y.temperature || x.modes.size() != y.modes.size()) return false;
        for (std::size_t i = 0; i < x.modes.size(); ++i)
            if (x.modes[i].g != y.modes[i].g || x.modes[i].omega != y.modes[i].omega) return false;
        return true;
    };
    return a.system.hamiltonian == b.system.hamiltonian && a.system.coupling == b.system.coupling &&
           a.initial_state == b.initial_state && same_bath(a.bath, b.bath) && a.markov == b.markov &&
           a.grid == b.grid && a.noise == b.noise && a.noise_samples == b.noise_samples &&
           a.closure == b.closure && a.fock_cutoffs == b.fock_cutoffs && a.substeps == b.substeps &&
           a.n_trajectories == b.n_trajectories && a.master_seed == b.master_seed && a.workers == b.workers &&
           a.oracle_samples == b.oracle_samples && a.tolerance == b.tolerance && a.horizon == b.horizon &&
           a.identity_samples == b.identity_samples && a.output_directory == b.output_directory &&
           a.formats == b.formats;
}

namespace detail {

inline std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

inline std::optional<double> parse_real(std::string_view s) {
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

/// a, bi, i, -i, a+bi, a-bi. Exponent signs (1e-3) are not split points.
inline std::optional<Complex> parse_complex(std::string_view s) {
    if (s.empty()) return std::nullopt;
    if (s.back() != 'i') {
        auto r = parse_real(s);
        return r ? std::optional<Complex>(Complex(*r, 0.0)) : std::nullopt;
    }
    const std::string_view body = s.substr(0, s.size() - 1);
    std::size_t split = std::string_view::npos;
    for (std::size_t k = body.size(); k-- > 1;) {
        if ((body[k] == '+' || body[k] == '-') && body[k - 1] != 'e' && body[k - 1] != 'E') {
            split = k;
            break;
        }
    }
    auto imag_of = [](std::string_view t) -> std::optional<double> {
        if (t.empty() || t == "+") return 1.0;
        if (t == "-") return -1.0;
        return parse_real(t);
    };
    if (split == std::string_view::npos) {
        auto im = imag_of(body);
        return im ? std::optional<Complex>(Complex(0.0, *im)) : std::nullopt;
    }
    auto re = parse_real(body.substr(0, split));
    auto im = imag_of(body.substr(split));
    if (!re || !im) return std::nullopt;
    return Complex(*re, *im);
}

inline std::string format_real(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline std::string format_complex(Complex z) {
    if (z.imag() == 0.0) return format_real(z.real());
    std::string im = format_real(z.imag());
    if (im.front() != '-') im = "+" + im;
    return format_real(z.real()) + im + "i";
}

struct RawEntry {
    std::string value;              // single-line value
    std::vector<std::string> rows;  // bracketed rows, when the value is a matrix or list
    int line = 0;
    bool used = false;
};

using RawSection = std::map<std::string, RawEntry>;

inline std::vector<std::string> split_row(const std::string& row, const std::string& path, int line) {
    if (row.size() < 2 || row.front() != '[' || row.back() != ']')
        throw ConfigError("line " + std::to_string(line) + ": " + path + ": expected a bracketed row");
    std::vector<std::string> cells;
    std::stringstream ss(row.substr(1, row.size() - 2));
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (cells.empty() || (cells.size() == 1 && cells[0].empty()))
        throw ConfigError("line " + std::to_string(line) + ": " + path + ": empty row");
    return cells;
}

class SectionReader {
public:
    SectionReader(std::string name, RawSection* section) : name_(std::move(name)), section_(section) {}

    bool has(const std::string& key) const { return section_ && section_->count(key); }

    const RawEntry& entry(const std::string& key) {
        if (!has(key)) throw ConfigError(path(key) + ": missing required key");
        auto& e = section_->at(key);
        e.used = true;
        return e;
    }

    std::string path(const std::string& key) const { return name_ + "." + key; }

    std::string where(const std::string& key) const {
        return "line " + std::to_string(section_->at(key).line) + ": " + path(key);
    }

    double real(const std::string& key) {
        const auto& e = entry(key);
        auto v = parse_real(e.value);
        if (!v) throw ConfigError(where(key) + ": expected a real number, got '" + e.value + "'");
        return *v;
    }

    double real_or(const std::string& key, double fallback) { return has(key) ? real(key) : fallback; }

    std::uint64_t unsigned_integer(const std::string& key) {
        const auto& e = entry(key);
        std::uint64_t v = 0;
        const auto [ptr, ec] = std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
        if (ec != std::errc() || ptr != e.value.data() + e.value.size())
            throw ConfigError(where(key) + ": expected a nonnegative integer, got '" + e.value + "'");
        return v;
    }

    std::uint64_t unsigned_or(const std::string& key, std::uint64_t fallback) {
        return has(key) ? unsigned_integer(key) : fallback;
    }

    std::string text(const std::string& key) {
        const auto& e = entry(key);
        if (e.value.empty()) throw ConfigError(where(key) + ": empty value");
        return e.value;
    }

    std::vector<std::vector<std::string>> rows(const std::string& key) {
        const auto& e = entry(key);
        std::vector<std::vector<std::string>> out;
        for (std::size_t r = 0; r < e.rows.size(); ++r)
            out.push_back(split_row(e.rows[r], path(key), e.line + static_cast<int>(r)));
        if (out.empty()) throw ConfigError(where(key) + ": expected bracketed rows");
        return out;
    }

    ComplexMatrix matrix(const std::string& key) {
        const auto cells = rows(key);
        const auto n = static_cast<Eigen::Index>(cells.size());
        ComplexMatrix m(n, static_cast<Eigen::Index>(cells[0].size()));
        for (Eigen::Index r = 0; r < n; ++r) {
            if (static_cast<Eigen::Index>(cells[r].size()) != m.cols())
                throw ConfigError(where(key) + ": ragged matrix rows");
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                auto z = parse_complex(cells[r][c]);
                if (!z) throw ConfigError(where(key) + ": cannot parse complex entry '" + cells[r][c] + "'");
                m(r, c) = *z;
            }
        }
        return m;
    }

    std::vector<std::string> list(const std::string& key) {
        const auto r = rows(key);
        if (r.size() != 1) throw ConfigError(where(key) + ": expected a single bracketed list");
        return r[0];
    }

    void reject_unused() const {
        if (!section_) return;
        for (const auto& [key, e] : *section_)
            if (!e.used) throw ConfigError("line " + std::to_string(e.line) + ": " + path(key) + ": unknown key");
    }

private:
    std::string name_;
    RawSection* section_;
};

inline std::map<std::string, RawSection> tokenize_config(std::string_view text) {
    static const std::set<std::string> known{"system", "bath",     "grid",   "noise",
                                             "solver", "ensemble", "checks", "output"};
    std::map<std::string, RawSection> sections;
    RawSection* current = nullptr;
    RawEntry* last = nullptr;
    std::istringstream in{std::string(text)};
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const auto hash = raw.find('#');
        const std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (s.empty()) continue;
        const std::string where = "line " + std::to_string(line) + ": ";
        if (s.front() == '[' && s.back() == ']' && s.find(',') == std::string::npos &&
            s.find('=') == std::string::npos && !(s.size() > 2 && (std::isdigit(s[1]) || s[1] == '-' || s[1] == '+' || s[1] == '.'))) {
            const std::string name = trim(s.substr(1, s.size() - 2));
            if (!known.count(name)) throw ConfigError(where + "unknown section [" + name + "]");
            if (sections.count(name)) throw ConfigError(where + "duplicate section [" + name + "]");
            current = &sections[name];
            last = nullptr;
            continue;
        }
        if (s.front() == '[') {
            if (!last || last->rows.empty()) throw ConfigError(where + "matrix row without a key");
            last->rows.push_back(s);
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
        if (!current) throw ConfigError(where + "entry outside of a section");
        const std::string key = trim(s.substr(0, eq));
        const std::string value = trim(s.substr(eq + 1));
        if (key.empty()) throw ConfigError(where + "empty key");
        if (current->count(key)) throw ConfigError(where + "duplicate key '" + key + "'");
        RawEntry e;
        e.line = line;
        if (!value.empty() && value.front() == '[')
            e.rows.push_back(value);
        else
            e.value = value;
        last = &((*current)[key] = std::move(e));
    }
    return sections;
}

inline std::size_t positive_count(SectionReader& r, const std::string& key, std::size_t fallback) {
    const auto v = r.unsigned_or(key, fallback);
    if (v == 0) throw ConfigError(r.path(key) + ": must be positive");
    return static_cast<std::size_t>(v);
}

}  // namespace detail

/// Parses and validates a configuration. Errors name the line and/or key path.
inline ExperimentConfig parse_config(std::string_view text) {
    using detail::SectionReader;
    auto sections = detail::tokenize_config(text);
    for (const char* required : {"system", "bath", "grid"})
        if (!sections.count(required))
            throw ConfigError(std::string("missing required section [") + required + "]: " + required);
    auto reader = [&](const std::string& name) {
        return SectionReader(name, sections.count(name) ? &sections.at(name) : nullptr);
    };
    ExperimentConfig cfg;

    auto sys = reader("system");
    const auto dim = sys.unsigned_integer("dim");
    if (dim == 0) throw ConfigError("system.dim: must be positive");
    const ComplexMatrix h = sys.matrix("hamiltonian");
    const ComplexMatrix l = sys.matrix("coupling");
    for (const auto& [name, m] : {std::pair<std::string, const ComplexMatrix&>{"hamiltonian", h}, {"coupling", l}}) {
        if (m.rows() != static_cast<Eigen::Index>(dim) || m.cols() != static_cast<Eigen::Index>(dim))
            throw ConfigError(sys.where(name) + ": expected a " + std::to_string(dim) + "x" + std::to_string(dim) +
                              " matrix");
        try {
            require_hermitian(m, "system." + name);
        } catch (const HermiticityError& e) {
            throw ConfigError(sys.where(name) + ": " + e.what());
        }
    }
    cfg.system = SystemModel(h, l);
    if (sys.has("initial_state")) {
        const auto cells = sys.list("initial_state");
        if (cells.size() != dim) throw ConfigError(sys.where("initial_state") + ": length must equal system.dim");
        cfg.initial_state.resize(static_cast<Eigen::Index>(dim));
        for (std::size_t k = 0; k < dim; ++k) {
            auto z = detail::parse_complex(cells[k]);
            if (!z) throw ConfigError(sys.where("initial_state") + ": cannot parse '" + cells[k] + "'");
            cfg.initial_state(static_cast<Eigen::Index>(k)) = *z;
        }
        if (!(cfg.initial_state.norm() > 0.0)) throw ConfigError("system.initial_state: zero vector");
    } else {
        cfg.initial_state = StateVector::Zero(static_cast<Eigen::Index>(dim));
        cfg.initial_state(0) = 1.0;
    }
    sys.reject_unused();

    auto bath = reader("bath");
    cfg.bath.temperature = bath.real_or("temperature", 0.0);
    if (cfg.bath.temperature < 0.0) throw ConfigError("bath.temperature: must be nonnegative");
    const bool markov = bath.has("markov_gamma") || bath.has("markov_modes") || bath.has("markov_omega_max");
    if (markov) {
        if (bath.has("modes")) throw ConfigError("bath.modes: cannot be combined with markov_* keys");
        MarkovBathSpec m{bath.real("markov_gamma"), static_cast<std::size_t>(bath.unsigned_integer("markov_modes")),
                         bath.real("markov_omega_max")};
        if (!(m.gamma > 0.0) || m.n_modes == 0 || !(m.omega_max > 0.0))
            throw ConfigError("bath.markov_*: gamma, modes and omega_max must be positive");
        if (cfg.bath.temperature != 0.0) throw ConfigError("bath.temperature: markov comb baths are T = 0");
        cfg.markov = m;
        cfg.bath = markov_reference_bath(m.gamma, m.n_modes, m.omega_max);
    } else if (bath.has("modes")) {
        for (const auto& row : bath.rows("modes")) {
            if (row.size() != 2) throw ConfigError(bath.where("modes") + ": each row is [g, omega]");
            auto g = detail::parse_real(row[0]);
            auto w = detail::parse_real(row[1]);
            if (!g || !w || !(*g > 0.0) || !(*w > 0.0))
                throw ConfigError(bath.where("modes") + ": g and omega must be positive reals");
            cfg.bath.modes.push_back({*g, *w});
        }
    }
    bath.reject_unused();

    auto grid = reader("grid");
    try {
        cfg.grid = TimeGrid::from_horizon(grid.real("t_max"), grid.real("dt"));
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("grid: ") + e.what());
    }
    grid.reject_unused();

    auto noise = reader("noise");
    if (noise.has("strategy")) {
        try {
            cfg.noise = noise_strategy_from_string(noise.text("strategy"));
        } catch (const std::exception& e) {
            throw ConfigError(noise.where("strategy") + ": " + e.what());
        }
    }
    cfg.noise_samples = detail::positive_count(noise, "samples", cfg.noise_samples);
    noise.reject_unused();

    auto solver = reader("solver");
    if (solver.has("closure")) {
        try {
            cfg.closure = closure_kind_from_string(solver.text("closure"));
        } catch (const std::exception& e) {
            throw ConfigError(solver.where("closure") + ": " + e.what());
        }
    }
    if (solver.has("fock_cutoffs")) {
        for (const auto& c : solver.list("fock_cutoffs")) {
            std::size_t v = 0;
            const auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
            if (ec != std::errc() || ptr != c.data() + c.size() || v == 0)
                throw ConfigError(solver.where("fock_cutoffs") + ": cutoffs must be positive integers");
            cfg.fock_cutoffs.push_back(v);
        }
        if (cfg.fock_cutoffs.size() != cfg.bath.modes.size())
            throw ConfigError(solver.where("fock_cutoffs") + ": need one cutoff per bath mode");
    }
    cfg.substeps = detail::positive_count(solver, "substeps", cfg.substeps);
    solver.reject_unused();

    auto ens = reader("ensemble");
    cfg.n_trajectories = static_cast<std::size_t>(ens.unsigned_or("n_trajectories", cfg.n_trajectories));
    if (cfg.n_trajectories < 2) throw ConfigError("ensemble.n_trajectories: must be at least 2");
    cfg.master_seed = ens.unsigned_or("master_seed", cfg.master_seed);
    cfg.workers = static_cast<std::size_t>(ens.unsigned_or("workers", cfg.workers));
    cfg.oracle_samples = detail::positive_count(ens, "oracle_samples", cfg.oracle_samples);
    ens.reject_unused();

    auto checks = reader("checks");
    cfg.tolerance = checks.real_or("tolerance", cfg.tolerance);
    if (!(cfg.tolerance > 0.0)) throw ConfigError("checks.tolerance: must be positive");
    if (checks.has("horizon")) {
        cfg.horizon = checks.real("horizon");
        if (!(*cfg.horizon > 0.0) || *cfg.horizon > cfg.grid.t_max() * (1.0 + 1e-12))
            throw ConfigError("checks.horizon: must lie in (0, grid.t_max]");
    }
    cfg.identity_samples = detail::positive_count(checks, "identity_samples", cfg.identity_samples);
    checks.reject_unused();

    auto out = reader("output");
    if (out.has("directory")) cfg.output_directory = out.text("directory");
    if (out.has("formats")) {
        cfg.formats = out.list("formats");
        for (const auto& f : cfg.formats)
            if (f != "csv" && f != "json") throw ConfigError("output.formats: unknown format '" + f + "'");
    }
    out.reject_unused();
    return cfg;
}

/// Canonical text form; parse_config(serialize(c)) == c.
inline std::string serialize(const ExperimentConfig& cfg) {
    using detail::format_complex;
    using detail::format_real;
    std::ostringstream os;
    auto matrix = [&](const std::string& key, const ComplexMatrix& m) {
        const std::string pad(key.size() + 3, ' ');
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            os << (r == 0 ? key + " = " : pad) << '[';
            for (Eigen::Index c = 0; c < m.cols(); ++c) os << (c ? ", " : "") << format_complex(m(r, c));
            os << "]\n";
        }
    };
    os << "[system]\n" << "dim = " << cfg.system.dim() << '\n';
    matrix("hamiltonian", cfg.system.hamiltonian);
    matrix("coupling", cfg.system.coupling);
    matrix("initial_state", cfg.initial_state.transpose());

    os << "\n[bath]\n" << "temperature = " << format_real(cfg.bath.temperature) << '\n';
    if (cfg.markov) {
        os << "markov_gamma = " << format_real(cfg.markov->gamma) << '\n'
           << "markov_modes = " << cfg.markov->n_modes << '\n'
           << "markov_omega_max = " << format_real(cfg.markov->omega_max) << '\n';
    } else if (!cfg.bath.modes.empty()) {
        for (std::size_t i = 0; i < cfg.bath.modes.size(); ++i)
            os << (i == 0 ? "modes = " : "        ") << '[' << format_real(cfg.bath.modes[i].g) << ", "
               << format_real(cfg.bath.modes[i].omega) << "]\n";
    }

    os << "\n[grid]\n" << "t_max = " << format_real(cfg.grid.t_max()) << '\n' << "dt = " << format_real(cfg.grid.dt) << '\n';
    os << "\n[noise]\n" << "strategy = " << to_string(cfg.noise) << '\n' << "samples = " << cfg.noise_samples << '\n';
    os << "\n[solver]\n" << "closure = " << to_string(cfg.closure) << '\n';
    if (!cfg.fock_cutoffs.empty()) {
        os << "fock_cutoffs = [";
        for (std::size_t i = 0; i < cfg.fock_cutoffs.size(); ++i) os << (i ? ", " : "") << cfg.fock_cutoffs[i];
        os << "]\n";
    }
    os << "substeps = " << cfg.substeps << '\n';
    os << "\n[ensemble]\n"
       << "n_trajectories = " << cfg.n_trajectories << '\n'
       << "master_seed = " << cfg.master_seed << '\n'
       << "workers = " << cfg.workers << '\n'
       << "oracle_samples = " << cfg.oracle_samples << '\n';
    os << "\n[checks]\n" << "tolerance = " << format_real(cfg.tolerance) << '\n';
    if (cfg.horizon) os << "horizon = " << format_real(*cfg.horizon) << '\n';
    os << "identity_samples = " << cfg.identity_samples << '\n';
    os << "\n[output]\n" << "directory = " << cfg.output_directory << '\n' << "formats = [";
    for (std::size_t i = 0; i < cfg.formats.size(); ++i) os << (i ? ", " : "") << cfg.formats[i];
    os << "]\n";
    return os.str();
}

}  // namespace nmsse

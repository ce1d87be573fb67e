#pragma once

// Scenario files and artifact writers.
//
// Scenarios are INI files (sections of `key = value`, `;` or `#` comments).
// Every key is checked against the schema below; `[parameters]` takes dotted
// parameter names. CSV artifacts use 9 significant digits in scientific
// notation and are written to a temporary file, then renamed into place.

#include "dcpower/errors.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace dcpower::io {

// ---------------------------------------------------------------- numbers

inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.8e", v == 0.0 ? 0.0 : v);  // folds -0 into 0
    return buf;
}

// ---------------------------------------------------------------- files

inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("io", "cannot write " + tmp.string());
        out << content;
        if (!out.flush()) throw Error("io", "write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {
        if (header_.empty()) throw Error("io", "CSV header is mandatory");
    }

    void add(std::vector<std::string> cells) {
        if (cells.size() != header_.size())
            throw Error("io", "CSV row has " + std::to_string(cells.size()) + " cells, header has " +
                                  std::to_string(header_.size()));
        rows_.push_back(std::move(cells));
    }
    void add(const std::vector<double>& values) {
        std::vector<std::string> cells;
        cells.reserve(values.size());
        for (double v : values) cells.push_back(format_number(v));
        add(std::move(cells));
    }

    std::size_t rows() const { return rows_.size(); }

    std::string str() const {
        std::string s;
        auto line = [&](const std::vector<std::string>& cells) {
            for (std::size_t k = 0; k < cells.size(); ++k) {
                if (k) s += ',';
                s += cells[k];
            }
            s += '\n';
        };
        line(header_);
        for (const auto& r : rows_) line(r);
        return s;
    }

    void write(const std::filesystem::path& path) const { write_atomic(path, str()); }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

/// Columns of equal length as a CSV table.
inline CsvTable columns_table(const std::vector<std::string>& names, const std::vector<std::vector<double>>& cols) {
    if (names.size() != cols.size()) throw Error("io", "column names and data differ in count");
    CsvTable t(names);
    const std::size_t n = cols.empty() ? 0 : cols.front().size();
    for (const auto& c : cols)
        if (c.size() != n) throw Error("io", "ragged columns");
    std::vector<double> row(cols.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < cols.size(); ++k) row[k] = cols[k][i];
        t.add(row);
    }
    return t;
}

// ---------------------------------------------------------------- config

using Tree = boost::property_tree::ptree;

/// Sections and their keys. `parameters` is open here and checked against the
/// parameter set of the chosen topology instead.
inline const std::map<std::string, std::set<std::string>>& schema() {
    static const std::map<std::string, std::set<std::string>> s{
        {"scenario", {"topology", "analyses", "output_dir"}},
        {"parameters", {}},
        {"ninebus", {"gfl", "datacenter", "decoupling_sign", "gfl_loops"}},
        {"equilibrium", {"tol", "max_iter"}},
        {"poa", {"f_min", "f_max", "points"}},
        {"simulate", {"input", "t_end", "dt", "record_every", "signals"}},
        {"spectrum", {"signal", "t_a", "t_b", "remove_mean"}},
        {"sweep", {"parameter", "values", "top_k"}},
        {"validate", {"p_from", "p_to", "t_step", "t_end", "dt_full", "dt_reduced", "spectrum_window"}},
        {"tune", {"loop", "f_bw"}},
        {"workload", {"path", "dt", "offset", "gain", "target_mean", "target_peak"}},
    };
    return s;
}

/// A parsed scenario file: section -> key -> raw string, plus parameter overrides in file order.
class Config {
public:
    Config() = default;

    static Config parse(std::istream& in, const std::string& source = "<config>") {
        Tree tree;
        try {
            boost::property_tree::ini_parser::read_ini(in, tree);
        } catch (const boost::property_tree::ini_parser_error& e) {
            throw ConfigError(source + ":" + std::to_string(e.line()) + ": " + e.message());
        }
        Config c;
        for (const auto& [section, body] : tree) {
            if (!body.data().empty()) throw ConfigError(source + ": key '" + section + "' outside any section");
            for (const auto& [key, value] : body) c.set(section + "." + key, value.data());
        }
        return c;
    }

    static Config load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open " + path.string());
        return parse(in, path.string());
    }

    /// `section.key=value` from the command line; anything whose first segment is
    /// not a known section is a parameter override.
    void apply_override(const std::string& assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t"), b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(assignment.substr(0, eq)), value = trim(assignment.substr(eq + 1));
        const auto dot = key.find('.');
        const std::string head = dot == std::string::npos ? key : key.substr(0, dot);
        if (head != "parameters" && schema().count(head))
            set(key, value);
        else
            set("parameters." + (head == "parameters" ? key.substr(dot + 1) : key), value);
    }

    void set(const std::string& dotted, const std::string& value) {
        const auto dot = dotted.find('.');
        if (dot == std::string::npos) throw ConfigError("key '" + dotted + "' has no section");
        const std::string section = dotted.substr(0, dot), key = dotted.substr(dot + 1);
        const auto it = schema().find(section);
        if (it == schema().end()) throw ConfigError("unknown section [" + section + "]");
        if (section == "parameters") {
            auto pos = std::find_if(overrides_.begin(), overrides_.end(), [&](const auto& p) { return p.first == key; });
            if (pos != overrides_.end())
                pos->second = value;
            else
                overrides_.emplace_back(key, value);
            return;
        }
        if (!it->second.count(key)) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
        values_[dotted] = value;
    }

    bool has(const std::string& dotted) const { return values_.count(dotted) != 0; }

    std::string get(const std::string& dotted, const std::string& fallback) const {
        const auto it = values_.find(dotted);
        return it == values_.end() ? fallback : it->second;
    }

    double get(const std::string& dotted, double fallback) const {
        const auto it = values_.find(dotted);
        return it == values_.end() ? fallback : to_number(dotted, it->second);
    }

    int get(const std::string& dotted, int fallback) const {
        const double v = get(dotted, static_cast<double>(fallback));
        if (v != std::floor(v) || std::abs(v) > 1e9) throw ConfigError(dotted + ": expected an integer");
        return static_cast<int>(v);
    }

    bool get(const std::string& dotted, bool fallback) const {
        const auto it = values_.find(dotted);
        if (it == values_.end()) return fallback;
        const auto& s = it->second;
        if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
        if (s == "false" || s == "no" || s == "off" || s == "0") return false;
        throw ConfigError(dotted + ": expected a boolean, got '" + s + "'");
    }

    /// Parameter overrides as (dotted name, value), type-checked as numbers.
    std::vector<std::pair<std::string, double>> overrides() const {
        std::vector<std::pair<std::string, double>> out;
        for (const auto& [k, v] : overrides_) out.emplace_back(k, to_number("parameters." + k, v));
        return out;
    }

    const std::map<std::string, std::string>& values() const { return values_; }

    static double to_number(const std::string& key, const std::string& s) {
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            if (used != s.size()) throw std::invalid_argument("trailing characters");
            if (!std::isfinite(v)) throw std::invalid_argument("not finite");
            return v;
        } catch (const std::exception&) {
            throw ConfigError(key + ": expected a number, got '" + s + "'");
        }
    }

private:
    std::map<std::string, std::string> values_;
    std::vector<std::pair<std::string, std::string>> overrides_;
};

/// Splits on commas and whitespace, dropping empty items.
inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',' || c == ' ' || c == '\t') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

/// `a:b:n` (n evenly spaced values from a to b) or an explicit list.
inline std::vector<double> parse_values(const std::string& key, const std::string& s) {
    std::vector<double> out;
    if (s.find(':') != std::string::npos) {
        std::vector<std::string> parts;
        std::stringstream ss(s);
        for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
        if (parts.size() != 3) throw ConfigError(key + ": range must be start:stop:count");
        const double a = Config::to_number(key, parts[0]), b = Config::to_number(key, parts[1]);
        const double n = Config::to_number(key, parts[2]);
        if (n < 2 || n != std::floor(n)) throw ConfigError(key + ": count must be an integer >= 2");
        for (int k = 0; k < static_cast<int>(n); ++k) out.push_back(a + (b - a) * k / (n - 1.0));
    } else {
        for (const auto& item : split_list(s)) out.push_back(Config::to_number(key, item));
    }
    if (out.empty()) throw ConfigError(key + ": no values");
    return out;
}

}  // namespace dcpower::io

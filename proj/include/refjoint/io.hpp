#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "refjoint/error.hpp"
#include "refjoint/estimator.hpp"
#include "refjoint/inference.hpp"
#include "refjoint/linalg.hpp"
#include "refjoint/simulate.hpp"

// Text formats.
//
// Summary TSV: optional '#' comment lines, then the header "id<TAB>beta<TAB>n"
// and one row per covariate. Every row carries the same n. Row order defines
// the coordinate order of every downstream result.
//
// Panel TSV: a header row of covariate ids followed by one observation per
// row. Columns are matched to the summary by id, never by position.
//
// Scenario file: "key = value" lines, '#' comments. A value of the form
// "v1 | v2 | ..." makes the file a grid; the Cartesian product over all such
// keys is expanded into one scenario per combination.
//
// All floating-point output uses 17 significant digits.
namespace refjoint::io {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) out.push_back(cur);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

inline double parse_double(const std::string& tok, const std::string& where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw ParseError(where + ": '" + tok + "' is not a number");
    }
}

inline std::int64_t parse_int(const std::string& tok, const std::string& where) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw ParseError(where + ": '" + tok + "' is not an integer");
    }
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'");
    return in;
}

inline MarginalSummary parse_summary(std::istream& in, const std::string& name = "summary") {
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    std::vector<double> betas;
    MarginalSummary s;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::string where = name + ":" + std::to_string(line_no);
        const auto fields = split(line, '\t');
        if (!have_header) {
            if (fields.size() != 3 || fields[0] != "id" || fields[1] != "beta" || fields[2] != "n") {
                throw ParseError(where + ": expected header 'id<TAB>beta<TAB>n'");
            }
            have_header = true;
            continue;
        }
        if (fields.size() != 3) throw ParseError(where + ": expected 3 tab-separated fields");
        if (fields[0].empty()) throw ParseError(where + ": empty id");
        if (!seen.insert(fields[0]).second) throw ParseError(where + ": duplicate id '" + fields[0] + "'");
        const double beta = parse_double(fields[1], where);
        const std::int64_t n = parse_int(fields[2], where);
        if (n < 1) throw ParseError(where + ": n must be positive");
        if (s.ids.empty()) s.n_o = n;
        else if (n != s.n_o) {
            throw InconsistentN(where + ": n = " + std::to_string(n) + " differs from " + std::to_string(s.n_o));
        }
        s.ids.push_back(fields[0]);
        betas.push_back(beta);
    }
    if (!have_header) throw ParseError(name + ": missing header");
    if (betas.empty()) throw ParseError(name + ": no rows");
    s.beta_m = Eigen::Map<const Vector>(betas.data(), static_cast<Index>(betas.size()));
    validate(s);
    return s;
}

inline MarginalSummary read_summary(const std::string& path) {
    auto in = open_input(path);
    return parse_summary(in, path);
}

inline void write_summary(std::ostream& out, const MarginalSummary& s) {
    const auto ids = s.ids.empty() ? default_ids(s.p()) : s.ids;
    out << "id\tbeta\tn\n";
    for (Index i = 0; i < s.p(); ++i) out << ids[static_cast<std::size_t>(i)] << '\t' << fmt(s.beta_m(i)) << '\t' << s.n_o << '\n';
}

struct PanelTable {
    std::vector<std::string> ids;
    Matrix values;  // observations x columns, in file order
};

inline PanelTable parse_panel(std::istream& in, const std::string& name = "panel") {
    std::string line;
    std::size_t line_no = 0;
    PanelTable t;
    std::vector<double> data;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::string where = name + ":" + std::to_string(line_no);
        const auto fields = split(line, '\t');
        if (t.ids.empty()) {
            std::set<std::string> seen;
            for (const auto& f : fields) {
                if (f.empty()) throw ParseError(where + ": empty column id");
                if (!seen.insert(f).second) throw ParseError(where + ": duplicate column id '" + f + "'");
            }
            t.ids = fields;
            continue;
        }
        if (fields.size() != t.ids.size()) {
            throw ParseError(where + ": expected " + std::to_string(t.ids.size()) + " fields, found " +
                             std::to_string(fields.size()));
        }
        for (const auto& f : fields) data.push_back(parse_double(f, where));
        ++rows;
    }
    if (t.ids.empty()) throw ParseError(name + ": missing header");
    if (rows == 0) throw ParseError(name + ": no observations");
    t.values = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        data.data(), static_cast<Index>(rows), static_cast<Index>(t.ids.size()));
    return t;
}

/// Reorders panel columns to the given id order. Any id missing from the
/// panel, or any panel column not in the list, is an IdMismatch.
inline Matrix align_panel(const PanelTable& t, const std::vector<std::string>& ids) {
    std::unordered_map<std::string, Index> pos;
    for (std::size_t j = 0; j < t.ids.size(); ++j) pos.emplace(t.ids[j], static_cast<Index>(j));
    std::vector<std::string> missing, extra;
    const std::set<std::string> wanted(ids.begin(), ids.end());
    for (const auto& id : ids)
        if (!pos.count(id)) missing.push_back(id);
    for (const auto& id : t.ids)
        if (!wanted.count(id)) extra.push_back(id);
    if (!missing.empty() || !extra.empty()) {
        std::string msg = "panel columns do not match summary ids;";
        auto list = [&](const char* what, const std::vector<std::string>& v) {
            if (v.empty()) return;
            msg += std::string(" ") + what + ":";
            for (const auto& s : v) msg += " " + s;
            msg += ";";
        };
        list("missing from panel", missing);
        list("not in summary", extra);
        throw IdMismatch(msg);
    }
    Matrix out(t.values.rows(), static_cast<Index>(ids.size()));
    for (std::size_t j = 0; j < ids.size(); ++j) out.col(static_cast<Index>(j)) = t.values.col(pos.at(ids[j]));
    return out;
}

/// Reads a panel, aligns it to `ids`, and standardizes it.
inline CovariateMatrix read_panel(const std::string& path, const std::vector<std::string>& ids) {
    auto in = open_input(path);
    const PanelTable t = parse_panel(in, path);
    const Matrix aligned = align_panel(t, ids);
    try {
        return standardize(aligned);
    } catch (const ConstantColumn& e) {
        // translate the column position into the id the user knows
        for (std::size_t j = 0; j < ids.size(); ++j) {
            const auto col = aligned.col(static_cast<Index>(j));
            if ((col.array() == col(0)).all()) throw ConstantColumn("panel column '" + ids[j] + "' is constant");
        }
        throw;
    }
}

inline void write_panel(std::ostream& out, const std::vector<std::string>& ids, const Matrix& values) {
    for (std::size_t j = 0; j < ids.size(); ++j) out << (j ? "\t" : "") << ids[j];
    out << '\n';
    for (Index i = 0; i < values.rows(); ++i) {
        for (Index j = 0; j < values.cols(); ++j) out << (j ? "\t" : "") << fmt(values(i, j));
        out << '\n';
    }
}

/// Greedy pruning: scanning in summary order, a covariate is dropped when its
/// absolute panel correlation with an already-kept covariate exceeds
/// `max_abs_corr`. Returns the kept positions.
inline std::vector<Index> prune_correlated(const CovariateMatrix& panel, double max_abs_corr) {
    const CorrelationEstimate r = correlation(panel);
    std::vector<Index> kept;
    for (Index j = 0; j < r.p(); ++j) {
        bool ok = true;
        for (Index k : kept)
            if (std::abs(r.matrix(j, k)) > max_abs_corr) {
                ok = false;
                break;
            }
        if (ok) kept.push_back(j);
    }
    return kept;
}

// ---------------------------------------------------------------------------
// Scenario configuration

namespace detail {

inline std::vector<Index> parse_index_list(const std::string& v, const std::string& where) {
    std::vector<Index> out;
    const std::string body = trim(v.size() >= 2 && v.front() == '{' && v.back() == '}' ? v.substr(1, v.size() - 2) : v);
    if (body.empty()) return out;
    for (const auto& tok : split(body, ',')) {
        const auto i = parse_int(trim(tok), where);
        if (i < 1) throw ParseError(where + ": indices are 1-based");
        out.push_back(static_cast<Index>(i - 1));
    }
    return out;
}

inline SimMethod parse_method(const std::string& s, const std::string& where) {
    if (s == "full") return SimMethod::full;
    if (s == "naive") return SimMethod::naive;
    if (s == "vc_gaussian" || s == "gaussian") return SimMethod::vc_gaussian;
    if (s == "vc_empirical" || s == "empirical") return SimMethod::vc_empirical;
    if (s == "vc_mle" || s == "mle") return SimMethod::vc_mle;
    throw ParseError(where + ": unknown method '" + s + "'");
}

inline bool parse_bool(const std::string& s, const std::string& where) {
    if (s == "on" || s == "true" || s == "yes" || s == "1") return true;
    if (s == "off" || s == "false" || s == "no" || s == "0") return false;
    throw ParseError(where + ": expected on/off, got '" + s + "'");
}

inline SelectionRule parse_selection_rule(const std::string& s, const std::string& where) {
    SelectionRule r;
    if (s == "none") return r;
    const auto parts = split(s, ':');
    if (parts[0] == "z") {
        r.kind = SelectionRule::Kind::z_level;
        if (parts.size() > 1) r.alpha_sel = parse_double(parts[1], where);
        if (parts.size() > 2) r.n_tests = parse_double(parts[2], where);
        if (parts.size() > 3) throw ParseError(where + ": selection rule is z[:alpha[:n_tests]]");
        if (!(r.alpha_sel > 0.0 && r.alpha_sel < 1.0) || !(r.n_tests >= 1.0)) {
            throw ParseError(where + ": invalid z-level selection rule");
        }
        return r;
    }
    if (parts[0] == "raw" && parts.size() == 2) {
        r.kind = SelectionRule::Kind::raw;
        r.raw = parse_double(parts[1], where);
        return r;
    }
    throw ParseError(where + ": selection rule must be none, z[:alpha[:n_tests]] or raw:<bound>");
}

inline void apply_key(ScenarioConfig& c, const std::string& key, const std::string& value, const std::string& where,
                      bool& threshold_alpha_set) {
    if (key == "name") c.name = value;
    else if (key == "p") c.p = static_cast<Index>(parse_int(value, where));
    else if (key == "rho") c.rho = parse_double(value, where);
    else if (key == "n_o") c.n_o = parse_int(value, where);
    else if (key == "n_r") c.n_r = parse_int(value, where);
    else if (key == "h") c.h = parse_double(value, where);
    else if (key == "causal") c.causal = parse_index_list(value, where);
    else if (key == "beta_value") c.beta_value = parse_double(value, where);
    else if (key == "covariates") {
        if (value == "gaussian") c.covariate_kind = CovariateKind::gaussian;
        else if (value == "genotype") c.covariate_kind = CovariateKind::genotype;
        else throw ParseError(where + ": covariates must be gaussian or genotype");
    } else if (key == "tag") {
        const auto idx = parse_index_list(value, where);
        if (idx.size() != 1) throw ParseError(where + ": tag takes a single 1-based index");
        c.tag_index = idx[0];
    } else if (key == "select") c.threshold_rule = parse_selection_rule(value, where);
    else if (key == "adjust") {
        if (value == "psat") c.adjust = SelectionAdjust::psat;
        else if (value == "none") c.adjust = SelectionAdjust::none;
        else if (value == "both") c.adjust = SelectionAdjust::both;
        else throw ParseError(where + ": adjust must be psat, none or both");
    } else if (key == "methods") {
        c.methods.clear();
        for (const auto& m : split(value, ',')) c.methods.push_back(parse_method(trim(m), where));
    } else if (key == "reps") c.reps = static_cast<int>(parse_int(value, where));
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(value, where));
    else if (key == "alpha") c.alpha = parse_double(value, where);
    else if (key == "threshold") c.threshold_beta = parse_bool(value, where);
    else if (key == "threshold_alpha") {
        c.beta_threshold.alpha = parse_double(value, where);
        threshold_alpha_set = true;
    } else if (key == "threshold_bonferroni") c.beta_threshold.bonferroni = parse_bool(value, where);
    else if (key == "sigma2") {
        if (value == "estimate") c.sigma2.policy = Sigma2Policy::estimate;
        else if (value == "one") c.sigma2.policy = Sigma2Policy::conservative_one;
        else throw ParseError(where + ": sigma2 must be estimate or one");
    } else if (key == "sigma2_min") c.sigma2.min_value = parse_double(value, where);
    else if (key == "threads") c.threads = static_cast<unsigned>(parse_int(value, where));
    else if (key == "max_resamples") c.max_resamples = parse_int(value, where);
    else throw ParseError(where + ": unknown key '" + key + "'");
}

}  // namespace detail

/// Parses a scenario or grid file into concrete scenarios. Grid scenarios
/// are named "<name>[key=value,...]" over the varying keys.
inline std::vector<ScenarioConfig> parse_scenarios(std::istream& in, const std::string& name = "config") {
    struct Entry {
        std::string key;
        std::vector<std::string> values;
        std::string where;
    };
    std::vector<Entry> entries;
    std::set<std::string> keys;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = name + ":" + std::to_string(line_no);
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(where + ": expected 'key = value'");
        Entry e{trim(line.substr(0, eq)), {}, where};
        if (!keys.insert(e.key).second) throw ParseError(where + ": duplicate key '" + e.key + "'");
        for (const auto& alt : split(line.substr(eq + 1), '|')) {
            const auto v = trim(alt);
            if (v.empty()) throw ParseError(where + ": empty value");
            e.values.push_back(v);
        }
        if (e.values.empty()) throw ParseError(where + ": missing value");
        entries.push_back(std::move(e));
    }

    std::vector<ScenarioConfig> out;
    std::vector<std::size_t> pick(entries.size(), 0);
    while (true) {
        ScenarioConfig c;
        bool threshold_alpha_set = false;
        std::string suffix;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const auto& e = entries[i];
            detail::apply_key(c, e.key, e.values[pick[i]], e.where, threshold_alpha_set);
            if (e.values.size() > 1) suffix += (suffix.empty() ? "" : ",") + e.key + "=" + e.values[pick[i]];
        }
        if (!threshold_alpha_set) c.beta_threshold.alpha = c.alpha;
        if (!suffix.empty()) c.name += "[" + suffix + "]";
        validate(c);
        out.push_back(std::move(c));

        std::size_t k = entries.size();
        while (k > 0) {
            --k;
            if (++pick[k] < entries[k].values.size()) break;
            pick[k] = 0;
            if (k == 0) return out;
        }
        if (entries.empty()) return out;
    }
}

inline std::vector<ScenarioConfig> read_scenarios(const std::string& path) {
    auto in = open_input(path);
    return parse_scenarios(in, path);
}

inline void write_scenario_header(std::ostream& out) {
    out << "scenario\tmethod\treps\tfailed_reps\tselection_rate\tfdr\tfdr_se\tpower\tpower_se\t"
           "uncond_power\tuncond_power_se\n";
}

inline void write_scenario_rows(std::ostream& out, const ScenarioResult& r) {
    for (const auto& m : r.methods) {
        out << r.name << '\t' << m.label << '\t' << r.reps << '\t' << r.failed_reps << '\t' << fmt(r.selection_rate)
            << '\t' << fmt(m.fdr.mean) << '\t' << fmt(m.fdr.se) << '\t' << fmt(m.power.mean) << '\t'
            << fmt(m.power.se) << '\t' << fmt(m.unconditional_power.mean) << '\t' << fmt(m.unconditional_power.se)
            << '\n';
    }
}

/// Long format for plotting: one row per (scenario, method, measure).
inline void write_long_header(std::ostream& out) { out << "scenario\tmethod\tmeasure\testimate\tse\n"; }

inline void write_long_rows(std::ostream& out, const ScenarioResult& r) {
    for (const auto& m : r.methods) {
        const std::pair<const char*, MeanSe> rows[] = {
            {"fdr", m.fdr}, {"power", m.power}, {"uncond_power", m.unconditional_power}};
        for (const auto& [measure, v] : rows) {
            out << r.name << '\t' << m.label << '\t' << measure << '\t' << fmt(v.mean) << '\t' << fmt(v.se) << '\n';
        }
    }
}

}  // namespace refjoint::io

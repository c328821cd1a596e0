#pragma once

// Batch input/output for the key-rate engine.
//
// CSV: header line naming the columns label, mu, nu, Q_mu, E_mu, Q_nu, E_nu,
// Y0, R_reference (any order, optional e0). QBERs are fractions. R_reference
// may be a number, "None" (the row produced no key, expected R = 0) or empty
// (no reference). Blank lines and lines starting with '#' are skipped.
// JSON: an array of objects with the same keys, or {"rows": [...]}.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "io.hpp"
#include "keyrate.hpp"

namespace wfqkd::io {

namespace detail {

inline std::string trim(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    for (char c : line) {
        if (c == ',') {
            out.push_back(trim(cell));
            cell.clear();
        } else {
            cell += c;
        }
    }
    out.push_back(trim(cell));
    return out;
}

inline double parse_number(const std::string& s, std::size_t line, const std::string& column) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw FormatError(fmt::format("line {}: column {}: cannot parse '{}' as a number", line, column, s));
    }
}

inline std::optional<double> parse_reference(const std::string& s, std::size_t line) {
    if (s.empty()) return std::nullopt;
    std::string lower = s;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "none") return 0.0;
    return parse_number(s, line, "R_reference");
}

inline const std::vector<std::string>& required_columns() {
    static const std::vector<std::string> cols{"label", "mu", "nu", "Q_mu", "E_mu", "Q_nu", "E_nu", "Y0",
                                               "R_reference"};
    return cols;
}

inline keyrate::BatchRow validated(keyrate::BatchRow row, std::size_t line) {
    try {
        row.obs.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(fmt::format("line {}: {}", line, e.what()));
    }
    return row;
}

} // namespace detail

inline std::vector<keyrate::BatchRow> parse_batch_csv(const std::string& text) {
    std::vector<keyrate::BatchRow> rows;
    std::map<std::string, std::size_t> column;
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto line = detail::trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const auto cells = detail::split_csv(line);
        if (!have_header) {
            for (std::size_t i = 0; i < cells.size(); ++i) column[cells[i]] = i;
            for (const auto& c : detail::required_columns())
                if (!column.count(c)) throw FormatError(fmt::format("line {}: missing column '{}'", line_no, c));
            have_header = true;
            continue;
        }
        if (cells.size() != column.size())
            throw FormatError(fmt::format("line {}: expected {} fields, found {}", line_no, column.size(),
                                          cells.size()));
        auto num = [&](const std::string& c) { return detail::parse_number(cells[column.at(c)], line_no, c); };
        keyrate::BatchRow row;
        row.label = cells[column.at("label")];
        row.obs.mu = num("mu");
        row.obs.nu = num("nu");
        row.obs.q_mu = num("Q_mu");
        row.obs.e_mu = num("E_mu");
        row.obs.q_nu = num("Q_nu");
        row.obs.e_nu = num("E_nu");
        row.obs.y0 = num("Y0");
        if (column.count("e0")) row.obs.e0 = num("e0");
        row.reference = detail::parse_reference(cells[column.at("R_reference")], line_no);
        rows.push_back(detail::validated(std::move(row), line_no));
    }
    return rows;
}

inline std::vector<keyrate::BatchRow> parse_batch_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(e.what());
    }
    const json& arr = j.is_object() && j.contains("rows") ? j.at("rows") : j;
    if (!arr.is_array()) throw FormatError("batch JSON must be an array of rows");
    std::vector<keyrate::BatchRow> rows;
    std::size_t index = 0;
    for (const auto& r : arr) {
        ++index;
        try {
            keyrate::BatchRow row;
            row.label = r.value("label", std::string{});
            row.obs.mu = r.at("mu").get<double>();
            row.obs.nu = r.at("nu").get<double>();
            row.obs.q_mu = r.at("Q_mu").get<double>();
            row.obs.e_mu = r.at("E_mu").get<double>();
            row.obs.q_nu = r.at("Q_nu").get<double>();
            row.obs.e_nu = r.at("E_nu").get<double>();
            row.obs.y0 = r.at("Y0").get<double>();
            row.obs.e0 = r.value("e0", 0.5);
            if (r.contains("R_reference")) {
                const auto& ref = r.at("R_reference");
                if (ref.is_null()) row.reference = std::nullopt;
                else if (ref.is_string()) row.reference = detail::parse_reference(ref.get<std::string>(), index);
                else row.reference = ref.get<double>();
            }
            rows.push_back(detail::validated(std::move(row), index));
        } catch (const json::exception& e) {
            throw FormatError(fmt::format("row {}: {}", index, e.what()));
        }
    }
    return rows;
}

/// Picks the parser from the extension (.json) or the first non-blank character.
inline std::vector<keyrate::BatchRow> load_batch(const std::filesystem::path& path) {
    const auto text = read_text(path);
    const auto first = text.find_first_not_of(" \t\r\n");
    if (path.extension() == ".json" || (first != std::string::npos && (text[first] == '[' || text[first] == '{')))
        return parse_batch_json(text);
    return parse_batch_csv(text);
}

inline json report_to_json(const keyrate::BatchReport& report, const keyrate::KeyRateParams& params,
                           double tolerance) {
    json rows = json::array();
    for (const auto& r : report.rows) {
        json row = to_json(r.result);
        row["label"] = r.label;
        row["R_reference"] = optional_json(r.reference);
        row["relative_deviation"] = optional_json(r.relative_deviation);
        row["within_tolerance"] = r.within(tolerance);
        rows.push_back(std::move(row));
    }
    return {{"params", {{"q", params.q}, {"f", params.f}}},
            {"tolerance", tolerance},
            {"rows", rows},
            {"max_relative_deviation", report.max_relative_deviation()},
            {"all_within_tolerance", report.all_within(tolerance)}};
}

inline std::string report_to_table(const keyrate::BatchReport& report, double tolerance) {
    std::size_t label_width = 5;
    for (const auto& r : report.rows) label_width = std::max(label_width, r.label.size());
    std::string out = fmt::format("{:<{}}  {:>11}  {:>8}  {:>8}  {:>11}  {:>11}  {:>8}  {}\n", "label", label_width,
                                  "Y1_lower", "e1_upper", "Delta1", "R", "R_ref", "dev", "ok");
    for (const auto& r : report.rows) {
        const std::string ref = r.reference ? (*r.reference == 0.0 ? "None" : fmt::format("{:.3e}", *r.reference))
                                            : "-";
        const std::string dev = r.relative_deviation ? fmt::format("{:.2f}%", 100.0 * *r.relative_deviation) : "-";
        out += fmt::format("{:<{}}  {:>11.4e}  {:>8.5f}  {:>8.5f}  {:>11.4e}  {:>11}  {:>8}  {}\n", r.label,
                           label_width, r.result.y1_lower, r.result.e1_upper, r.result.delta1, r.result.rate, ref,
                           dev, r.within(tolerance) ? "yes" : "NO");
    }
    return out;
}

} // namespace wfqkd::io

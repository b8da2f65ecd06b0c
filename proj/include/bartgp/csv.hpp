#pragma once

// Minimal CSV reader for regression data: header row, comma separated,
// double-quoted fields, '.' decimals. Non-numeric columns become 0/1 dummies.

#include <algorithm>
#include <charconv>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace bartgp {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

namespace detail {

inline bool parse_double(const std::string& s, double& out) {
    auto b = s.data(), e = s.data() + s.size();
    while (b < e && (*b == ' ' || *b == '\t')) ++b;
    while (e > b && (e[-1] == ' ' || e[-1] == '\t')) --e;
    if (b == e) return false;
    if (*b == '+') ++b;
    const auto [ptr, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && ptr == e;
}

}  // namespace detail

/// Splits an RFC-4180 stream into records. Quoted fields may hold commas,
/// doubled quotes and newlines; a trailing CR is dropped.
inline CsvTable read_csv(std::istream& in) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> rec;
    std::string field;
    bool quoted = false, any = false, after_quote = false;
    char c;
    int line = 1;
    const auto end_field = [&] {
        rec.push_back(field);
        field.clear();
        after_quote = false;
    };
    const auto end_record = [&] {
        end_field();
        if (!(rec.size() == 1 && rec[0].empty())) records.push_back(rec);
        rec.clear();
        any = false;
    };
    while (in.get(c)) {
        any = true;
        if (quoted) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get(c);
                    field += '"';
                } else {
                    quoted = false;
                    after_quote = true;
                }
            } else {
                if (c == '\n') ++line;
                field += c;
            }
            continue;
        }
        if (c == '"' && field.empty() && !after_quote) {
            quoted = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            end_record();
            ++line;
        } else if (c == '\r') {
            if (in.peek() != '\n') field += c;
        } else {
            if (after_quote) throw DomainError("csv: text after closing quote on line " + std::to_string(line));
            field += c;
        }
    }
    if (quoted) throw DomainError("csv: unterminated quoted field");
    if (any) end_record();
    if (records.empty()) throw DomainError("csv: no header row");

    CsvTable t;
    t.header = std::move(records.front());
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].size() != t.header.size())
            throw DomainError("csv: record " + std::to_string(i + 1) + " has " + std::to_string(records[i].size()) +
                              " fields, header has " + std::to_string(t.header.size()));
        t.rows.push_back(std::move(records[i]));
    }
    return t;
}

struct Dataset {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    std::vector<std::string> columns;  // names of the columns of X
    std::vector<Eigen::Index> first_dummies;  // first dummy of each factor
    std::string outcome;
};

/// Numeric predictors pass through; any other column is expanded to one
/// dummy per level (levels in sorted order, named "column=level").
inline Dataset to_dataset(const CsvTable& t, const std::string& outcome) {
    const auto it = std::find(t.header.begin(), t.header.end(), outcome);
    if (it == t.header.end()) throw DomainError("csv: no column named '" + outcome + "'");
    const auto yc = static_cast<std::size_t>(it - t.header.begin());
    const std::size_t n = t.rows.size();
    if (n == 0) throw DomainError("csv: no data rows");

    Dataset d;
    d.outcome = outcome;
    d.y.resize(static_cast<Eigen::Index>(n));
    for (std::size_t r = 0; r < n; ++r)
        if (!detail::parse_double(t.rows[r][yc], d.y(static_cast<Eigen::Index>(r))))
            throw DomainError("csv: outcome '" + t.rows[r][yc] + "' on record " + std::to_string(r + 2) +
                              " is not a number");

    std::vector<std::vector<double>> cols;
    for (std::size_t c = 0; c < t.header.size(); ++c) {
        if (c == yc) continue;
        std::vector<double> v(n);
        bool numeric = true;
        for (std::size_t r = 0; r < n && numeric; ++r) numeric = detail::parse_double(t.rows[r][c], v[r]);
        if (numeric) {
            cols.push_back(std::move(v));
            d.columns.push_back(t.header[c]);
            continue;
        }
        std::set<std::string> levels;
        for (const auto& row : t.rows) levels.insert(row[c]);
        d.first_dummies.push_back(static_cast<Eigen::Index>(cols.size()));
        for (const auto& level : levels) {
            std::vector<double> dummy(n);
            for (std::size_t r = 0; r < n; ++r) dummy[r] = t.rows[r][c] == level ? 1.0 : 0.0;
            cols.push_back(std::move(dummy));
            d.columns.push_back(t.header[c] + "=" + level);
        }
    }
    d.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c)
        for (std::size_t r = 0; r < n; ++r) d.X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = cols[c][r];
    return d;
}

/// Quotes a field when needed.
inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + '"';
}

}  // namespace bartgp

#ifndef HITCERT_CSV_HPP
#define HITCERT_CSV_HPP

#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"

namespace hitcert {

/// Doubles are serialized with 17 significant digits, which round-trips
/// every finite IEEE-754 double exactly and makes write -> read -> write
/// byte-stable.
inline std::string format_double17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

namespace csv_detail {

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cell);
            cell.clear();
        } else if (ch != '\r') {
            cell.push_back(ch);
        }
    }
    out.push_back(cell);
    return out;
}

inline double parse_double(const std::string& cell, std::size_t line_no,
                           const std::string& column) {
    double v = 0.0;
    const char* begin = cell.data();
    const char* end = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end)
        throw InputError("line " + std::to_string(line_no) + ", column '" + column +
                         "': cannot parse '" + cell + "' as a number");
    if (!std::isfinite(v))
        throw InputError("line " + std::to_string(line_no) + ", column '" + column +
                         "': value must be finite");
    return v;
}

struct Header {
    std::size_t dimension = 0;
    std::vector<int> feature_col; // header position -> coordinate, -1 otherwise
    int y_col = -1;
    int mu_col = -1;
    int group_col = -1;
    std::size_t n_cols = 0;
};

inline Header parse_header(const std::string& line, bool allow_y, bool allow_group) {
    const std::vector<std::string> names = split_line(line);
    Header h;
    h.n_cols = names.size();
    h.feature_col.assign(names.size(), -1);
    std::vector<bool> seen_feature;
    for (std::size_t c = 0; c < names.size(); ++c) {
        const std::string& name = names[c];
        if (name.size() >= 2 && name[0] == 'f') {
            std::size_t idx = 0;
            auto [ptr, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), idx);
            if (ec == std::errc{} && ptr == name.data() + name.size()) {
                if (idx >= seen_feature.size()) seen_feature.resize(idx + 1, false);
                if (seen_feature[idx])
                    throw InputError("header: duplicate feature column '" + name + "'");
                seen_feature[idx] = true;
                h.feature_col[c] = static_cast<int>(idx);
                continue;
            }
        }
        if (name == "y") {
            if (!allow_y) throw InputError("header: unexpected column 'y'");
            if (h.y_col >= 0) throw InputError("header: duplicate column 'y'");
            h.y_col = static_cast<int>(c);
        } else if (name == "mu") {
            if (h.mu_col >= 0) throw InputError("header: duplicate column 'mu'");
            h.mu_col = static_cast<int>(c);
        } else if (name == "group") {
            if (!allow_group) throw InputError("header: unexpected column 'group'");
            if (h.group_col >= 0) throw InputError("header: duplicate column 'group'");
            h.group_col = static_cast<int>(c);
        } else {
            throw InputError("header: unknown column '" + name +
                             "' (expected f0..f{d-1}, y, mu or group)");
        }
    }
    h.dimension = seen_feature.size();
    if (h.dimension == 0) throw InputError("header: no feature columns f0..f{d-1}");
    for (std::size_t idx = 0; idx < seen_feature.size(); ++idx)
        if (!seen_feature[idx])
            throw InputError("header: feature columns must be contiguous, missing f" +
                             std::to_string(idx));
    return h;
}

} // namespace csv_detail

struct LabeledPoolCsv {
    LabeledPool pool;
    std::optional<std::vector<std::string>> groups;
};

/// Calibration CSV: header with columns f0..f{d-1}, required y in {0,1},
/// optional mu, optional group. Row order is preserved.
inline LabeledPoolCsv read_labeled_pool_csv(std::istream& in, const std::string& name = "input") {
    std::string line;
    if (!std::getline(in, line)) throw InputError(name + ": empty file");
    const csv_detail::Header h = csv_detail::parse_header(line, true, true);
    if (h.y_col < 0) throw InputError(name + ": missing required column 'y'");

    std::vector<FeatureVector> feats;
    std::vector<int> labels;
    std::vector<double> mus;
    std::vector<std::string> groups;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::vector<std::string> cells = csv_detail::split_line(line);
        if (cells.size() != h.n_cols)
            throw InputError(name + ": line " + std::to_string(line_no) + ": has " +
                             std::to_string(cells.size()) + " cells, header has " +
                             std::to_string(h.n_cols));
        FeatureVector x(h.dimension, 0.0);
        for (std::size_t c = 0; c < cells.size(); ++c)
            if (h.feature_col[c] >= 0)
                x[static_cast<std::size_t>(h.feature_col[c])] = csv_detail::parse_double(
                    cells[c], line_no, "f" + std::to_string(h.feature_col[c]));
        const double y = csv_detail::parse_double(cells[h.y_col], line_no, "y");
        if (y != 0.0 && y != 1.0)
            throw InputError(name + ": line " + std::to_string(line_no) +
                             ", column 'y': label must be 0 or 1, got " + cells[h.y_col]);
        feats.push_back(std::move(x));
        labels.push_back(static_cast<int>(y));
        if (h.mu_col >= 0)
            mus.push_back(csv_detail::parse_double(cells[h.mu_col], line_no, "mu"));
        if (h.group_col >= 0) groups.push_back(cells[h.group_col]);
    }
    if (feats.empty()) throw InputError(name + ": no data rows");

    LabeledPoolCsv out{
        LabeledPool(std::move(feats), std::move(labels),
                    h.mu_col >= 0 ? std::optional<std::vector<double>>(std::move(mus))
                                  : std::nullopt),
        h.group_col >= 0 ? std::optional<std::vector<std::string>>(std::move(groups))
                         : std::nullopt};
    return out;
}

inline LabeledPoolCsv read_labeled_pool_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open calibration file '" + path + "'");
    return read_labeled_pool_csv(in, path);
}

/// Candidate CSV: header with columns f0..f{d-1} and required mu; the row
/// order is the generation order.
inline CandidateBatch read_candidate_batch_csv(std::istream& in,
                                               const std::string& name = "input") {
    std::string line;
    if (!std::getline(in, line)) throw InputError(name + ": empty file");
    const csv_detail::Header h = csv_detail::parse_header(line, false, false);
    if (h.mu_col < 0) throw InputError(name + ": missing required column 'mu'");

    std::vector<FeatureVector> feats;
    std::vector<double> mus;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::vector<std::string> cells = csv_detail::split_line(line);
        if (cells.size() != h.n_cols)
            throw InputError(name + ": line " + std::to_string(line_no) + ": has " +
                             std::to_string(cells.size()) + " cells, header has " +
                             std::to_string(h.n_cols));
        FeatureVector x(h.dimension, 0.0);
        for (std::size_t c = 0; c < cells.size(); ++c)
            if (h.feature_col[c] >= 0)
                x[static_cast<std::size_t>(h.feature_col[c])] = csv_detail::parse_double(
                    cells[c], line_no, "f" + std::to_string(h.feature_col[c]));
        mus.push_back(csv_detail::parse_double(cells[h.mu_col], line_no, "mu"));
        feats.push_back(std::move(x));
    }
    if (feats.empty()) throw InputError(name + ": no data rows");
    return CandidateBatch(std::move(feats), std::move(mus));
}

inline CandidateBatch read_candidate_batch_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open candidate file '" + path + "'");
    return read_candidate_batch_csv(in, path);
}

/// Per-row weight file: single column 'w', one row per calibration row
/// followed by one row per candidate, in file order.
inline std::vector<double> read_weights_csv(std::istream& in, const std::string& name = "input") {
    std::string line;
    if (!std::getline(in, line)) throw InputError(name + ": empty file");
    {
        const auto cells = csv_detail::split_line(line);
        if (cells.size() != 1 || cells[0] != "w")
            throw InputError(name + ": weight file header must be exactly 'w'");
    }
    std::vector<double> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const double w = csv_detail::parse_double(line, line_no, "w");
        if (!(w > 0.0))
            throw InputError(name + ": line " + std::to_string(line_no) +
                             ": weights must be positive");
        out.push_back(w);
    }
    if (out.empty()) throw InputError(name + ": no weights");
    return out;
}

inline std::vector<double> read_weights_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open weight file '" + path + "'");
    return read_weights_csv(in, path);
}

inline void write_labeled_pool_csv(std::ostream& out, const LabeledPool& pool) {
    for (std::size_t c = 0; c < pool.dimension(); ++c) out << "f" << c << ",";
    out << "y";
    if (pool.has_predictor_scores()) out << ",mu";
    out << "\n";
    for (std::size_t i = 0; i < pool.size(); ++i) {
        for (double v : pool.feature(i)) out << format_double17(v) << ",";
        out << pool.labels()[i];
        if (pool.has_predictor_scores())
            out << "," << format_double17(pool.predictor_scores()[i]);
        out << "\n";
    }
}

inline void write_candidate_batch_csv(std::ostream& out, const CandidateBatch& batch) {
    for (std::size_t c = 0; c < batch.dimension(); ++c) out << "f" << c << ",";
    out << "mu\n";
    for (std::size_t j = 0; j < batch.size(); ++j) {
        for (double v : batch.feature(j)) out << format_double17(v) << ",";
        out << format_double17(batch.predictor_scores()[j]) << "\n";
    }
}

inline void write_weights_csv(std::ostream& out, const std::vector<double>& weights) {
    out << "w\n";
    for (double w : weights) out << format_double17(w) << "\n";
}

} // namespace hitcert

#endif // HITCERT_CSV_HPP

#ifndef HITCERT_REPORT_HPP
#define HITCERT_REPORT_HPP

#include <cmath>
#include <fstream>
#include <string>

#include <json.hpp>

#include "core.hpp"
#include "csv.hpp"

namespace hitcert {

using Json = nlohmann::ordered_json;

namespace report_detail {

inline void dump(const Json& j, std::string& out, int indent) {
    const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
    const std::string pad_in(static_cast<std::size_t>(indent + 1) * 2, ' ');
    switch (j.type()) {
        case Json::value_t::object: {
            if (j.empty()) {
                out += "{}";
                return;
            }
            out += "{\n";
            std::size_t i = 0;
            for (auto it = j.begin(); it != j.end(); ++it, ++i) {
                out += pad_in;
                out += Json(it.key()).dump(); // escaped key
                out += ": ";
                dump(it.value(), out, indent + 1);
                if (i + 1 < j.size()) out += ",";
                out += "\n";
            }
            out += pad + "}";
            return;
        }
        case Json::value_t::array: {
            if (j.empty()) {
                out += "[]";
                return;
            }
            out += "[\n";
            for (std::size_t i = 0; i < j.size(); ++i) {
                out += pad_in;
                dump(j[i], out, indent + 1);
                if (i + 1 < j.size()) out += ",";
                out += "\n";
            }
            out += pad + "]";
            return;
        }
        case Json::value_t::number_float: {
            const double v = j.get<double>();
            if (!std::isfinite(v))
                out += "null"; // JSON has no NaN/Inf
            else
                out += format_double17(v);
            return;
        }
        default:
            out += j.dump(); // ints, bools, strings, null
            return;
    }
}

} // namespace report_detail

/// Canonical report serialization: keys keep insertion order, floating
/// numbers carry 17 significant digits, identical reports are identical
/// byte-for-byte.
inline std::string dump_report(const Json& report) {
    std::string out;
    report_detail::dump(report, out, 0);
    out += "\n";
    return out;
}

inline void write_report_file(const Json& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write report to '" + path + "'");
    out << dump_report(report);
    if (!out) throw InputError("failed while writing report to '" + path + "'");
}

} // namespace hitcert

#endif // HITCERT_REPORT_HPP

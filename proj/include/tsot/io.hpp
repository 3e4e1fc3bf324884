#pragma once

// File formats used by the command-line tool.
//
//   measure JSON:   {"dim": d, "atoms": [[x_1..x_d], ...], "weights": [...]}
//   coupling CSV:   header "i\j,0,1,...", one row per source atom
//   records CSV:    epsilon,gap,upper_env,kl_env,lower_env,solver_gap,converged
//
// Numbers in CSV use 17 significant digits; JSON numbers use the shortest
// representation that round-trips.

#include <array>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <openssl/evp.h>

#include <nlohmann/json.hpp>
#include "tsot/errors.hpp"
#include "tsot/measures.hpp"
#include "tsot/rates.hpp"

namespace tsot::io {

using json = nlohmann::json;

inline constexpr const char* kToolVersion = "0.1.0";

inline std::string format_double(double x) {
    if (std::isnan(x))
        return "nan";
    if (std::isinf(x))
        return x > 0 ? "inf" : "-inf";
    std::array<char, 32> buf{};
    std::snprintf(buf.data(), buf.size(), "%.17g", x);
    return buf.data();
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw UsageError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Writes to a sibling temporary and renames it over the target.
inline void write_atomic(const std::string& path, const std::string& body) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw UsageError("cannot write " + tmp);
        out << body;
        out.flush();
        if (!out)
            throw UsageError("write failed for " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        throw UsageError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

inline std::string sha256_hex(const std::string& bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
        throw NumericalError("sha256 failed");
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int k = 0; k < len; ++k) {
        out.push_back(kHex[md[k] >> 4]);
        out.push_back(kHex[md[k] & 0xF]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Measures
// ---------------------------------------------------------------------------

inline json measure_to_json(const DiscreteMeasure& mu) {
    json atoms = json::array();
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        json row = json::array();
        for (Eigen::Index t = 0; t < mu.dim(); ++t)
            row.push_back(mu.atoms()(i, t));
        atoms.push_back(std::move(row));
    }
    json w = json::array();
    for (Eigen::Index i = 0; i < mu.size(); ++i)
        w.push_back(mu.weight(i));
    return {{"dim", mu.dim()}, {"atoms", std::move(atoms)}, {"weights", std::move(w)}};
}

// Structural checks only; the invariants are left to validate().
inline DiscreteMeasure measure_from_json(const json& j) {
    if (!j.is_object() || !j.contains("dim") || !j.contains("atoms") || !j.contains("weights"))
        throw UsageError("measure JSON needs the fields dim, atoms and weights");
    const auto& ja = j.at("atoms");
    const auto& jw = j.at("weights");
    if (!j.at("dim").is_number_integer() || !ja.is_array() || !jw.is_array())
        throw UsageError("measure JSON: dim must be an integer, atoms and weights arrays");
    const auto dim = j.at("dim").get<long>();
    if (dim < 1)
        throw UsageError("measure JSON: dim must be >= 1");
    if (ja.size() != jw.size() || ja.empty())
        throw UsageError("measure JSON: atoms and weights must be nonempty and of equal length");
    const auto n = static_cast<Eigen::Index>(ja.size());
    Matrix atoms(n, dim);
    Vector w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& row = ja[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<long>(row.size()) != dim)
            throw UsageError("measure JSON: atom " + std::to_string(i) + " does not have dim coordinates");
        for (long t = 0; t < dim; ++t) {
            if (!row[static_cast<std::size_t>(t)].is_number())
                throw UsageError("measure JSON: non-numeric coordinate");
            atoms(i, t) = row[static_cast<std::size_t>(t)].get<double>();
        }
        if (!jw[static_cast<std::size_t>(i)].is_number())
            throw UsageError("measure JSON: non-numeric weight");
        w[i] = jw[static_cast<std::size_t>(i)].get<double>();
    }
    return {std::move(atoms), std::move(w)};
}

inline DiscreteMeasure read_measure(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw UsageError(path + ": " + e.what());
    }
    return measure_from_json(j);
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::string coupling_to_csv(const Coupling& pi) {
    std::ostringstream os;
    os << "i\\j";
    for (Eigen::Index j = 0; j < pi.cols(); ++j)
        os << ',' << j;
    os << '\n';
    for (Eigen::Index i = 0; i < pi.rows(); ++i) {
        os << i;
        for (Eigen::Index j = 0; j < pi.cols(); ++j)
            os << ',' << format_double(pi(i, j));
        os << '\n';
    }
    return os.str();
}

inline Matrix matrix_from_csv(const std::string& body) {
    std::istringstream is(body);
    std::string line;
    std::vector<std::vector<double>> rows;
    bool header = true;
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        if (header) {
            header = false;
            continue;
        }
        std::istringstream ls(line);
        std::string cell;
        std::getline(ls, cell, ',');  // row index
        std::vector<double> r;
        while (std::getline(ls, cell, ','))
            r.push_back(std::stod(cell));
        rows.push_back(std::move(r));
    }
    if (rows.empty())
        throw UsageError("coupling CSV has no rows");
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.front().size())
            throw UsageError("coupling CSV rows have different lengths");
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    return m;
}

inline std::string records_to_csv(const std::vector<RateRecord>& recs) {
    std::ostringstream os;
    os << "epsilon,gap,upper_env,kl_env,lower_env,solver_gap,converged\n";
    for (const auto& r : recs)
        os << format_double(r.epsilon) << ',' << format_double(r.gap) << ',' << format_double(r.upper_env) << ','
           << format_double(r.kl_env) << ',' << format_double(r.lower_env) << ',' << format_double(r.solver_gap) << ','
           << (r.converged ? 1 : 0) << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Run manifest: everything needed to reproduce an output file. The
// timestamp is the only field that varies between identical runs.
// ---------------------------------------------------------------------------

struct RunManifest {
    std::string subcommand;
    json config = json::object();
    json input_digests = json::object();
    std::string tool_version = kToolVersion;
    std::string timestamp;

    void add_input(const std::string& path) { input_digests[path] = sha256_hex(read_file(path)); }

    [[nodiscard]] json to_json() const {
        return {{"subcommand", subcommand},
                {"config", config},
                {"input_digests", input_digests},
                {"tool_version", tool_version},
                {"timestamp", timestamp}};
    }
};

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::array<char, 32> buf{};
    std::strftime(buf.data(), buf.size(), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf.data();
}

}  // namespace tsot::io

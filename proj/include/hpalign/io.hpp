#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "hawkes.hpp"
#include "joint.hpp"
#include "metrics.hpp"

namespace hpalign::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

// 17 significant digits: enough to round-trip any double.
inline std::string format_double(double x)
{
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), "%.17g", x);
    return buffer;
}

namespace detail {

inline std::string location(const fs::path& path, std::size_t line)
{
    return path.string() + ":" + std::to_string(line) + ": ";
}

inline std::string_view trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',')
{
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        fields.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos) {
            return fields;
        }
        start = pos + 1;
    }
}

inline bool parse_double(std::string_view text, double& out)
{
    if (text.empty()) {
        return false;
    }
    const auto result = std::from_chars(text.data(), text.data() + text.size(), out);
    return result.ec == std::errc{} && result.ptr == text.data() + text.size();
}

template <typename Int>
inline bool parse_integer(std::string_view text, Int& out)
{
    if (text.empty()) {
        return false;
    }
    const auto result = std::from_chars(text.data(), text.data() + text.size(), out);
    return result.ec == std::errc{} && result.ptr == text.data() + text.size();
}

inline std::ifstream open_input(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string() + " for reading");
    }
    return in;
}

inline std::ofstream open_output(const fs::path& path, std::ios::openmode mode = std::ios::out)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, mode);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    return out;
}

// Numeric ids sort numerically and before non-numeric ids, which sort lexicographically.
inline bool id_less(const std::string& a, const std::string& b)
{
    long long x = 0;
    long long y = 0;
    const bool xa = parse_integer(std::string_view(a), x);
    const bool yb = parse_integer(std::string_view(b), y);
    if (xa && yb) {
        return x < y || (x == y && a < b);
    }
    if (xa != yb) {
        return xa;
    }
    return a < b;
}

}  // namespace detail

inline json read_json(const fs::path& path)
{
    std::ifstream in = detail::open_input(path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(path.string() + ": invalid JSON: " + e.what());
    }
}

inline void write_json(const fs::path& path, const json& value)
{
    std::ofstream out = detail::open_output(path);
    out << value.dump(2) << '\n';
}

struct EventCorpus {
    std::vector<std::string> ids;
    std::vector<EventSequence> sequences;
    std::size_t num_types{0};
    std::size_t ties_broken{0};
};

// events.csv -> events.json
inline fs::path sidecar_path(const fs::path& csv)
{
    fs::path meta = csv;
    meta.replace_extension(".json");
    return meta;
}

// Event CSV (header `seq_id,time,type`) plus the sidecar {"horizons": {id: T}, "num_types": C}.
// Sequences listed in the sidecar without any rows are kept as empty sequences.
inline EventCorpus read_events(const fs::path& csv, const fs::path& meta)
{
    const json sidecar = read_json(meta);
    if (!sidecar.is_object() || !sidecar.contains("horizons") || !sidecar["horizons"].is_object() ||
        !sidecar.contains("num_types") || !sidecar["num_types"].is_number_unsigned()) {
        throw ValidationError(meta.string() + ": expected {\"horizons\": {...}, \"num_types\": C}");
    }
    EventCorpus corpus;
    corpus.num_types = sidecar["num_types"].get<std::size_t>();
    hpalign::detail::require(corpus.num_types > 0, meta.string() + ": num_types must be positive");

    std::map<std::string, double> horizons;
    for (const auto& [id, value] : sidecar["horizons"].items()) {
        if (!value.is_number() || !(value.get<double>() > 0.0)) {
            throw ValidationError(meta.string() + ": horizon of sequence '" + id + "' must be a positive number");
        }
        horizons[id] = value.get<double>();
    }

    std::map<std::string, std::vector<Event>> rows;
    std::ifstream in = detail::open_input(csv);
    std::string line;
    std::size_t line_no = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view view = detail::trim(line);
        if (view.empty()) {
            continue;
        }
        if (!header) {
            if (view != "seq_id,time,type") {
                throw ValidationError(detail::location(csv, line_no) + "expected header 'seq_id,time,type'");
            }
            header = true;
            continue;
        }
        const auto fields = detail::split(view);
        if (fields.size() != 3) {
            throw ValidationError(detail::location(csv, line_no) + "expected 3 fields, found " +
                                  std::to_string(fields.size()));
        }
        const std::string id(fields[0]);
        double time = 0.0;
        std::size_t type = 0;
        if (!detail::parse_double(fields[1], time) || !std::isfinite(time)) {
            throw ValidationError(detail::location(csv, line_no) + "invalid time '" + std::string(fields[1]) + "'");
        }
        if (!detail::parse_integer(fields[2], type) || type >= corpus.num_types) {
            throw ValidationError(detail::location(csv, line_no) + "invalid type '" + std::string(fields[2]) +
                                  "' (num_types = " + std::to_string(corpus.num_types) + ")");
        }
        const auto h = horizons.find(id);
        if (h == horizons.end()) {
            throw ValidationError(detail::location(csv, line_no) + "sequence '" + id + "' has no horizon in " +
                                  meta.string());
        }
        if (time < 0.0 || time > h->second) {
            throw ValidationError(detail::location(csv, line_no) + "time " + std::string(fields[1]) +
                                  " outside [0, " + format_double(h->second) + "]");
        }
        rows[id].push_back({time, type});
    }
    if (!header) {
        throw ValidationError(csv.string() + ": missing header 'seq_id,time,type'");
    }

    for (const auto& [id, horizon] : horizons) {
        corpus.ids.push_back(id);
    }
    std::sort(corpus.ids.begin(), corpus.ids.end(), detail::id_less);
    for (const std::string& id : corpus.ids) {
        auto it = rows.find(id);
        std::vector<Event> events = it == rows.end() ? std::vector<Event>{} : std::move(it->second);
        NormalizedSequence normalized = normalize_events(std::move(events), horizons[id], corpus.num_types);
        corpus.ties_broken += normalized.ties_broken;
        corpus.sequences.push_back(std::move(normalized.sequence));
    }
    return corpus;
}

inline EventCorpus read_events(const fs::path& csv)
{
    return read_events(csv, sidecar_path(csv));
}

inline void write_events(const fs::path& csv, const fs::path& meta, std::span<const EventSequence> sequences,
                         std::size_t num_types)
{
    std::ofstream out = detail::open_output(csv);
    out << "seq_id,time,type\n";
    json horizons = json::object();
    for (std::size_t n = 0; n < sequences.size(); ++n) {
        for (const Event& e : sequences[n].events()) {
            out << n << ',' << format_double(e.time) << ',' << e.type << '\n';
        }
        horizons[std::to_string(n)] = sequences[n].horizon();
    }
    write_json(meta, json{{"horizons", horizons}, {"num_types", num_types}});
}

// Dense row-major CSV without header.
inline Matrix read_matrix(const fs::path& path)
{
    std::ifstream in = detail::open_input(path);
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view view = detail::trim(line);
        if (view.empty()) {
            continue;
        }
        std::vector<double> row;
        for (std::string_view field : detail::split(view)) {
            double x = 0.0;
            if (!detail::parse_double(field, x) || !std::isfinite(x)) {
                throw ValidationError(detail::location(path, line_no) + "invalid number '" + std::string(field) + "'");
            }
            row.push_back(x);
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw ValidationError(detail::location(path, line_no) + "expected " + std::to_string(rows.front().size()) +
                                  " columns, found " + std::to_string(row.size()));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) {
        throw ValidationError(path.string() + ": empty matrix");
    }
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    return m;
}

inline void write_matrix(const fs::path& path, const Matrix& m)
{
    std::ofstream out = detail::open_output(path);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            out << (j > 0 ? "," : "") << format_double(m(i, j));
        }
        out << '\n';
    }
}

// Binary 8-bit PGM, one pixel per entry; the largest entry maps to 255, zero to 0.
inline std::string encode_pgm(const Matrix& m)
{
    std::string data = "P5\n" + std::to_string(m.cols()) + " " + std::to_string(m.rows()) + "\n255\n";
    const double top = m.size() > 0 ? m.maxCoeff() : 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double scaled = top > 0.0 ? std::clamp(m(i, j), 0.0, top) / top * 255.0 : 0.0;
            data.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(scaled))));
        }
    }
    return data;
}

inline void write_pgm(const fs::path& path, const Matrix& m)
{
    std::ofstream out = detail::open_output(path, std::ios::out | std::ios::binary);
    const std::string data = encode_pgm(m);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

inline json params_to_json(const HawkesParams& p)
{
    json A = json::array();
    for (Eigen::Index i = 0; i < p.A.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < p.A.cols(); ++j) {
            row.push_back(p.A(i, j));
        }
        A.push_back(std::move(row));
    }
    return json{{"mu", std::vector<double>(p.mu.data(), p.mu.data() + p.mu.size())}, {"A", A}, {"beta", p.beta}};
}

inline HawkesParams params_from_json(const json& j)
{
    try {
        const auto mu = j.at("mu").get<std::vector<double>>();
        const auto A = j.at("A").get<std::vector<std::vector<double>>>();
        const double beta = j.value("beta", 1.0);
        const auto C = static_cast<Eigen::Index>(mu.size());
        hpalign::detail::require(static_cast<Eigen::Index>(A.size()) == C, "A must have one row per type");
        Matrix a(C, C);
        for (Eigen::Index i = 0; i < C; ++i) {
            hpalign::detail::require(static_cast<Eigen::Index>(A[static_cast<std::size_t>(i)].size()) == C,
                                     "A must be square");
            for (Eigen::Index k = 0; k < C; ++k) {
                a(i, k) = A[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
            }
        }
        return HawkesParams(Eigen::Map<const Vector>(mu.data(), C), std::move(a), beta);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("invalid parameter JSON: ") + e.what());
    }
}

inline json config_to_json(const AlignmentConfig& c)
{
    json j;
    j["alpha"] = c.alpha;
    j["gamma"] = c.gamma ? json(*c.gamma) : json(nullptr);
    j["tau"] = c.tau ? json(*c.tau) : json(nullptr);
    j["outer_rounds"] = c.outer_rounds;
    j["hp_steps"] = c.hp_steps;
    j["learning_rate"] = c.learning_rate;
    j["sgd"] = {{"enabled", c.sgd.enabled}, {"batch_size", c.sgd.batch_size}, {"history_window", c.sgd.history_window}};
    j["seed"] = c.seed;
    j["warm_start"] = c.warm_start;
    j["fit_infectivity"] = c.fit_infectivity;
    j["beta"] = c.beta;
    j["initial_infectivity"] = c.initial_infectivity;
    j["marginal_smoothing"] = c.marginal_smoothing;
    j["transport_iterations"] = c.transport_iterations;
    j["transport_tolerance"] = c.transport_tolerance;
    j["sinkhorn_iterations"] = c.sinkhorn_iterations;
    j["sinkhorn_tolerance"] = c.sinkhorn_tolerance;
    return j;
}

// Missing keys keep their defaults; null gamma/tau select the automatic rules. Unknown keys are rejected.
inline AlignmentConfig config_from_json(const json& j, AlignmentConfig c = {})
{
    if (!j.is_object()) {
        throw ValidationError("config must be a JSON object");
    }
    static const std::vector<std::string> known = {
        "alpha", "gamma", "tau", "outer_rounds", "hp_steps", "learning_rate", "sgd", "seed", "warm_start",
        "fit_infectivity", "beta", "initial_infectivity", "marginal_smoothing", "transport_iterations",
        "transport_tolerance", "sinkhorn_iterations", "sinkhorn_tolerance"};
    for (const auto& [key, value] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ValidationError("unknown config key '" + key + "'");
        }
    }
    try {
        auto optional = [&](const char* key, std::optional<double>& field) {
            if (j.contains(key)) {
                field = j[key].is_null() ? std::nullopt : std::optional<double>(j[key].get<double>());
            }
        };
        c.alpha = j.value("alpha", c.alpha);
        optional("gamma", c.gamma);
        optional("tau", c.tau);
        c.outer_rounds = j.value("outer_rounds", c.outer_rounds);
        c.hp_steps = j.value("hp_steps", c.hp_steps);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        if (j.contains("sgd")) {
            const json& s = j["sgd"];
            c.sgd.enabled = s.value("enabled", c.sgd.enabled);
            c.sgd.batch_size = s.value("batch_size", c.sgd.batch_size);
            c.sgd.history_window = s.value("history_window", c.sgd.history_window);
        }
        c.seed = j.value("seed", c.seed);
        c.warm_start = j.value("warm_start", c.warm_start);
        c.fit_infectivity = j.value("fit_infectivity", c.fit_infectivity);
        c.beta = j.value("beta", c.beta);
        c.initial_infectivity = j.value("initial_infectivity", c.initial_infectivity);
        c.marginal_smoothing = j.value("marginal_smoothing", c.marginal_smoothing);
        c.transport_iterations = j.value("transport_iterations", c.transport_iterations);
        c.transport_tolerance = j.value("transport_tolerance", c.transport_tolerance);
        c.sinkhorn_iterations = j.value("sinkhorn_iterations", c.sinkhorn_iterations);
        c.sinkhorn_tolerance = j.value("sinkhorn_tolerance", c.sinkhorn_tolerance);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("invalid config value: ") + e.what());
    }
    c.validate();
    return c;
}

}  // namespace hpalign::io

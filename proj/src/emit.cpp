#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "sgmm/csv.hpp"
#include "sgmm/error.hpp"
#include "sgmm/harness.hpp"

namespace sgmm {

const std::vector<std::string> kRowColumns{
    "grid_index", "grid_label", "grid_value", "method",   "replicate", "true_r",
    "distance",   "distance_sq", "spectral",  "spectral_sq", "r_tau",   "r_eta",
    "runtime_ms"};

const std::vector<std::string> kSummaryColumns{
    "grid_index",      "grid_label",     "grid_value",       "method",
    "replicates",      "mean_distance",  "se_distance",      "median_distance",
    "mean_distance_sq", "se_distance_sq", "mean_spectral",    "se_spectral",
    "mean_spectral_sq", "se_spectral_sq", "frac_r_tau_correct", "frac_r_eta_within"};

namespace {

std::string num(double v) { return std::isnan(v) ? std::string{} : csv::format_double(v); }

template <typename T>
std::string opt(const std::optional<T>& v) {
    if (!v) return {};
    if constexpr (std::is_floating_point_v<T>) {
        return num(*v);
    } else {
        return std::to_string(*v);
    }
}

nlohmann::json jnum(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

template <typename T>
nlohmann::json jopt(const std::optional<T>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

double jget(const nlohmann::json& j, const char* key) {
    const auto& v = j.at(key);
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

template <typename T>
std::optional<T> jget_opt(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<T>();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + path + "'");
}

std::string join(const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) line += ',';
        line += cells[i];
    }
    return line + '\n';
}

std::string rows_csv(const std::vector<ResultRow>& rows) {
    std::string out = join(kRowColumns);
    for (const auto& r : rows) {
        out += join({std::to_string(r.grid_index), r.grid_label, num(r.grid_value), r.method,
                     std::to_string(r.replicate), std::to_string(r.true_r), num(r.distance),
                     num(r.distance_sq), num(r.spectral), num(r.spectral_sq), opt(r.r_tau),
                     opt(r.r_eta), opt(r.runtime_ms)});
    }
    return out;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
    std::string out = join(kSummaryColumns);
    for (const auto& s : rows) {
        out += join({std::to_string(s.grid_index), s.grid_label, num(s.grid_value), s.method,
                     std::to_string(s.replicates), num(s.mean_distance), num(s.se_distance),
                     num(s.median_distance), num(s.mean_distance_sq), num(s.se_distance_sq),
                     num(s.mean_spectral), num(s.se_spectral), num(s.mean_spectral_sq),
                     num(s.se_spectral_sq), opt(s.frac_r_tau_correct), opt(s.frac_r_eta_within)});
    }
    return out;
}

/// Header-indexed access to a text table with the expected columns.
class Columns {
public:
    Columns(const csv::TextTable& t, const std::vector<std::string>& expected, const std::string& path)
        : path_(path) {
        if (t.header != expected) {
            throw ParseError(path + ": header does not match the documented columns");
        }
        for (std::size_t i = 0; i < t.header.size(); ++i) index_[t.header[i]] = i;
    }
    const std::string& text(const std::vector<std::string>& row, const std::string& name) const {
        return row[index_.at(name)];
    }
    double number(const std::vector<std::string>& row, const std::string& name) const {
        const std::string& s = text(row, name);
        if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (*end != '\0') throw ParseError(path_ + ": column '" + name + "' is not numeric");
        return v;
    }
    template <typename T>
    std::optional<T> optional(const std::vector<std::string>& row, const std::string& name) const {
        if (text(row, name).empty()) return std::nullopt;
        return static_cast<T>(number(row, name));
    }

private:
    std::string path_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace

void emit(const ExperimentResult& result, OutputFormat format, const std::string& path) {
    if (format == OutputFormat::json) {
        write_text(path, to_json(result).dump(2) + "\n");
        return;
    }
    write_text(path + "_rows.csv", rows_csv(result.rows));
    write_text(path + "_summary.csv", summary_csv(result.summary));
}

nlohmann::json to_json(const ExperimentResult& result) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : result.rows) {
        rows.push_back({{"grid_index", r.grid_index},
                        {"grid_label", r.grid_label},
                        {"grid_value", jnum(r.grid_value)},
                        {"method", r.method},
                        {"replicate", r.replicate},
                        {"true_r", r.true_r},
                        {"distance", r.distance},
                        {"distance_sq", r.distance_sq},
                        {"spectral", r.spectral},
                        {"spectral_sq", r.spectral_sq},
                        {"r_tau", jopt(r.r_tau)},
                        {"r_eta", jopt(r.r_eta)},
                        {"runtime_ms", jopt(r.runtime_ms)}});
    }
    nlohmann::json summary = nlohmann::json::array();
    for (const auto& s : result.summary) {
        summary.push_back({{"grid_index", s.grid_index},
                           {"grid_label", s.grid_label},
                           {"grid_value", jnum(s.grid_value)},
                           {"method", s.method},
                           {"replicates", s.replicates},
                           {"mean_distance", s.mean_distance},
                           {"se_distance", jnum(s.se_distance)},
                           {"median_distance", s.median_distance},
                           {"mean_distance_sq", s.mean_distance_sq},
                           {"se_distance_sq", jnum(s.se_distance_sq)},
                           {"mean_spectral", s.mean_spectral},
                           {"se_spectral", jnum(s.se_spectral)},
                           {"mean_spectral_sq", s.mean_spectral_sq},
                           {"se_spectral_sq", jnum(s.se_spectral_sq)},
                           {"frac_r_tau_correct", jopt(s.frac_r_tau_correct)},
                           {"frac_r_eta_within", jopt(s.frac_r_eta_within)}});
    }
    return {{"version", 1}, {"config", to_json(result.config)}, {"rows", rows}, {"summary", summary}};
}

ExperimentResult experiment_result_from_json(const nlohmann::json& doc) {
    try {
        ExperimentResult out;
        out.config = config_from_json(doc.at("config"));
        for (const auto& j : doc.at("rows")) {
            ResultRow r;
            r.grid_index = j.at("grid_index").get<Index>();
            r.grid_label = j.at("grid_label").get<std::string>();
            r.grid_value = jget(j, "grid_value");
            r.method = j.at("method").get<std::string>();
            r.replicate = j.at("replicate").get<int>();
            r.true_r = j.at("true_r").get<Index>();
            r.distance = jget(j, "distance");
            r.distance_sq = jget(j, "distance_sq");
            r.spectral = jget(j, "spectral");
            r.spectral_sq = jget(j, "spectral_sq");
            r.r_tau = jget_opt<Index>(j, "r_tau");
            r.r_eta = jget_opt<Index>(j, "r_eta");
            r.runtime_ms = jget_opt<double>(j, "runtime_ms");
            out.rows.push_back(std::move(r));
        }
        for (const auto& j : doc.at("summary")) {
            SummaryRow s;
            s.grid_index = j.at("grid_index").get<Index>();
            s.grid_label = j.at("grid_label").get<std::string>();
            s.grid_value = jget(j, "grid_value");
            s.method = j.at("method").get<std::string>();
            s.replicates = j.at("replicates").get<int>();
            s.mean_distance = jget(j, "mean_distance");
            s.se_distance = jget(j, "se_distance");
            s.median_distance = jget(j, "median_distance");
            s.mean_distance_sq = jget(j, "mean_distance_sq");
            s.se_distance_sq = jget(j, "se_distance_sq");
            s.mean_spectral = jget(j, "mean_spectral");
            s.se_spectral = jget(j, "se_spectral");
            s.mean_spectral_sq = jget(j, "mean_spectral_sq");
            s.se_spectral_sq = jget(j, "se_spectral_sq");
            s.frac_r_tau_correct = jget_opt<double>(j, "frac_r_tau_correct");
            s.frac_r_eta_within = jget_opt<double>(j, "frac_r_eta_within");
            out.summary.push_back(std::move(s));
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed experiment result: ") + e.what());
    }
}

std::vector<SummaryRow> load_summary_csv(const std::string& path) {
    const csv::TextTable t = csv::read_text(path);
    const Columns c(t, kSummaryColumns, path);
    std::vector<SummaryRow> out;
    for (const auto& row : t.rows) {
        SummaryRow s;
        s.grid_index = static_cast<Index>(c.number(row, "grid_index"));
        s.grid_label = c.text(row, "grid_label");
        s.grid_value = c.number(row, "grid_value");
        s.method = c.text(row, "method");
        s.replicates = static_cast<int>(c.number(row, "replicates"));
        s.mean_distance = c.number(row, "mean_distance");
        s.se_distance = c.number(row, "se_distance");
        s.median_distance = c.number(row, "median_distance");
        s.mean_distance_sq = c.number(row, "mean_distance_sq");
        s.se_distance_sq = c.number(row, "se_distance_sq");
        s.mean_spectral = c.number(row, "mean_spectral");
        s.se_spectral = c.number(row, "se_spectral");
        s.mean_spectral_sq = c.number(row, "mean_spectral_sq");
        s.se_spectral_sq = c.number(row, "se_spectral_sq");
        s.frac_r_tau_correct = c.optional<double>(row, "frac_r_tau_correct");
        s.frac_r_eta_within = c.optional<double>(row, "frac_r_eta_within");
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<ResultRow> load_rows_csv(const std::string& path) {
    const csv::TextTable t = csv::read_text(path);
    const Columns c(t, kRowColumns, path);
    std::vector<ResultRow> out;
    for (const auto& row : t.rows) {
        ResultRow r;
        r.grid_index = static_cast<Index>(c.number(row, "grid_index"));
        r.grid_label = c.text(row, "grid_label");
        r.grid_value = c.number(row, "grid_value");
        r.method = c.text(row, "method");
        r.replicate = static_cast<int>(c.number(row, "replicate"));
        r.true_r = static_cast<Index>(c.number(row, "true_r"));
        r.distance = c.number(row, "distance");
        r.distance_sq = c.number(row, "distance_sq");
        r.spectral = c.number(row, "spectral");
        r.spectral_sq = c.number(row, "spectral_sq");
        r.r_tau = c.optional<Index>(row, "r_tau");
        r.r_eta = c.optional<Index>(row, "r_eta");
        r.runtime_ms = c.optional<double>(row, "runtime_ms");
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace sgmm

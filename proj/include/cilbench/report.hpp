#pragma once
// Record persistence (line-delimited JSON) and the aggregate table writers:
// CSV files plus an aligned plain-text summary in the shape of the method
// comparison table.

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cilbench/protocol.hpp"

namespace cilbench {

// Field order is fixed so reruns are byte-comparable.
inline nlohmann::ordered_json record_to_json(const RunRecord& r) {
    nlohmann::ordered_json j;
    j["method"] = r.method;
    j["d1"] = r.d1;
    j["d2"] = r.d2;
    j["n"] = r.n;
    j["repeat"] = r.repeat;
    j["seed"] = r.seed;
    j["split_seed"] = r.split_seed;
    j["split_digest"] = r.split_digest;
    if (r.acc_d1_after_p1)
        j["acc_d1_after_p1"] = *r.acc_d1_after_p1;
    else
        j["acc_d1_after_p1"] = nullptr;
    if (r.acc_d1_after_p2)
        j["acc_d1_after_p2"] = *r.acc_d1_after_p2;
    else
        j["acc_d1_after_p2"] = nullptr;
    if (r.acc_d2_after_p2)
        j["acc_d2_after_p2"] = *r.acc_d2_after_p2;
    else
        j["acc_d2_after_p2"] = nullptr;
    j["acc_all"] = r.acc_all;
    j["per_class_acc"] = r.per_class_acc;
    if (r.per_class_d1_p1)
        j["per_class_d1_p1"] = *r.per_class_d1_p1;
    else
        j["per_class_d1_p1"] = nullptr;
    return j;
}

inline RunRecord record_from_json(const nlohmann::json& j) {
    RunRecord r;
    r.method = j.at("method").get<std::string>();
    r.d1 = j.at("d1").get<std::string>();
    r.d2 = j.at("d2").get<std::string>();
    r.n = j.at("n").get<int>();
    r.repeat = j.at("repeat").get<int>();
    r.seed = j.at("seed").get<uint64_t>();
    r.split_seed = j.at("split_seed").get<uint64_t>();
    r.split_digest = j.at("split_digest").get<uint64_t>();
    auto pair_of = [](const std::string& name) {
        const auto plus = name.find('+');
        if (plus == std::string::npos)
            throw std::invalid_argument("bad pair name '" + name + "'");
        return std::array<SolverId, 2>{solver_from_name(name.substr(0, plus)),
                                       solver_from_name(name.substr(plus + 1))};
    };
    r.d1_labels = pair_of(r.d1);
    r.d2_labels = pair_of(r.d2);
    if (!j.at("acc_d1_after_p1").is_null()) r.acc_d1_after_p1 = j["acc_d1_after_p1"].get<double>();
    if (!j.at("acc_d1_after_p2").is_null()) r.acc_d1_after_p2 = j["acc_d1_after_p2"].get<double>();
    if (!j.at("acc_d2_after_p2").is_null()) r.acc_d2_after_p2 = j["acc_d2_after_p2"].get<double>();
    r.acc_all = j.at("acc_all").get<double>();
    r.per_class_acc = j.at("per_class_acc").get<std::array<double, kSolverCount>>();
    if (!j.at("per_class_d1_p1").is_null())
        r.per_class_d1_p1 = j["per_class_d1_p1"].get<std::array<double, 2>>();
    return r;
}

inline void save_records(const std::vector<RunRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    for (const auto& r : records) out << record_to_json(r).dump() << "\n";
}

inline std::vector<RunRecord> load_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::vector<RunRecord> records;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            records.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (records.empty()) throw std::runtime_error(path + ": no records");
    return records;
}

// ---------------------------------------------------------------------------
// Formatting helpers.

inline std::string fmt(double v, int precision = 6) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

inline std::string fmt_cell(const Stat& s) {
    if (s.n == 0) return "N/A";
    return fmt(s.mean, 3) + " (" + fmt(s.stddev, 3) + ")";
}

// ---------------------------------------------------------------------------
// CSV writers. All numbers use fixed six-decimal notation so files are
// diffable across reruns.

inline void write_table1_csv(const AggregateReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << "method,records,acc_d1_after_p1_mean,acc_d1_after_p1_std,acc_d1_after_p2_mean,"
           "acc_d1_after_p2_std,acc_d2_after_p2_mean,acc_d2_after_p2_std,acc_all_mean,"
           "acc_all_std\n";
    for (const auto& m : report.methods) {
        out << m.method << "," << m.records;
        for (const Stat* s : {&m.acc_d1_after_p1, &m.acc_d1_after_p2, &m.acc_d2_after_p2,
                              &m.acc_all}) {
            if (s->n == 0)
                out << ",,";
            else
                out << "," << fmt(s->mean) << "," << fmt(s->stddev);
        }
        out << "\n";
    }
}

inline void write_table2_csv(const AggregateReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << "method,d1,class_a,class_b,p1_a,p1_b,p2_a,p2_b,loss_a,loss_b,runs\n";
    for (const auto& row : report.table2) {
        const auto plus = row.d1.find('+');
        out << report.table_method << "," << row.d1 << "," << row.d1.substr(0, plus) << ","
            << row.d1.substr(plus + 1) << "," << fmt(row.p1[0]) << "," << fmt(row.p1[1]) << ","
            << fmt(row.p2[0]) << "," << fmt(row.p2[1]) << "," << fmt(row.loss[0]) << ","
            << fmt(row.loss[1]) << "," << row.runs << "\n";
    }
}

inline void write_table3_csv(const AggregateReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << "method,pair,class_a,class_b,as_d1_a,as_d1_b,as_d2_a,as_d2_b,diff_a,diff_b,"
           "runs_d1,runs_d2\n";
    for (const auto& row : report.table3) {
        const auto plus = row.pair.find('+');
        out << report.table_method << "," << row.pair << "," << row.pair.substr(0, plus) << ","
            << row.pair.substr(plus + 1) << "," << fmt(row.as_d1[0]) << "," << fmt(row.as_d1[1])
            << "," << fmt(row.as_d2[0]) << "," << fmt(row.as_d2[1]) << "," << fmt(row.diff[0])
            << "," << fmt(row.diff[1]) << "," << row.runs_d1 << "," << row.runs_d2 << "\n";
    }
}

inline void write_forgetting_csv(const AggregateReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << "method,retention_loss\n";
    for (const auto& e : forgetting_summary(report)) out << e.method << "," << fmt(e.loss) << "\n";
}

// Per-record rows backing accuracy-versus-size plots.
inline void write_figure_csv(const std::vector<RunRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << "method,d1,d2,n,repeat,acc_d1_after_p1,acc_d1_after_p2,acc_d2_after_p2,acc_all\n";
    auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
    for (const auto& r : records) {
        out << r.method << "," << r.d1 << "," << r.d2 << "," << r.n << "," << r.repeat << ","
            << opt(r.acc_d1_after_p1) << "," << opt(r.acc_d1_after_p2) << ","
            << opt(r.acc_d2_after_p2) << "," << fmt(r.acc_all) << "\n";
    }
}

// Aligned text in the shape of the four-column method comparison table.
inline std::string format_table1_text(const AggregateReport& report) {
    const std::vector<std::string> headers{"Method", "D1 acc after D1", "D1 acc after D2",
                                           "D2 acc after D2", "All-class acc"};
    std::vector<std::vector<std::string>> rows;
    for (const auto& m : report.methods)
        rows.push_back({m.method, fmt_cell(m.acc_d1_after_p1), fmt_cell(m.acc_d1_after_p2),
                        fmt_cell(m.acc_d2_after_p2), fmt_cell(m.acc_all)});
    std::vector<size_t> width(headers.size());
    for (size_t c = 0; c < headers.size(); ++c) width[c] = headers[c].size();
    for (const auto& row : rows)
        for (size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    std::ostringstream os;
    auto emit = [&](const std::vector<std::string>& row) {
        for (size_t c = 0; c < row.size(); ++c)
            os << std::left << std::setw(static_cast<int>(width[c]) + 2) << row[c];
        os << "\n";
    };
    emit(headers);
    for (size_t c = 0; c < width.size(); ++c) os << std::string(width[c], '-') << "  ";
    os << "\n";
    for (const auto& row : rows) emit(row);
    return os.str();
}

}  // namespace cilbench

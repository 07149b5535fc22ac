#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdcs/errors.hpp"
#include "mdcs/metrics.hpp"

namespace mdcs::run {

enum class ReportFormat { Text, Csv, Json };

inline ReportFormat parse_format(const std::string& name) {
    if (name == "text") return ReportFormat::Text;
    if (name == "csv") return ReportFormat::Csv;
    if (name == "json") return ReportFormat::Json;
    throw ConfigError("unknown format '" + name + "' (expected text, csv, or json)");
}

inline const char* format_extension(ReportFormat format) {
    switch (format) {
        case ReportFormat::Text: return "txt";
        case ReportFormat::Csv: return "csv";
        case ReportFormat::Json: return "json";
    }
    return "txt";
}

/// Accuracy table in the usual layout: one row per expert, then the ensemble
/// row and the diversity-factor row, each over Many/Medium/Few/All. The
/// config echo makes the report self-describing; wall clock time is kept
/// in memory only so that report files stay bit-reproducible.
struct ExperimentReport {
    int experts = 0;
    std::vector<metrics::GroupValues> expert_acc;
    metrics::GroupValues ensemble_acc;
    metrics::GroupValues sigma;
    std::string config_echo;
    double wall_clock_s = 0.0;
};

/// Output of the m-model variance protocol. `no_cs` is present in paired
/// mode and holds the alpha = 0 column.
struct VarianceReport {
    int members = 0;
    metrics::GroupValues configured;
    std::optional<metrics::GroupValues> no_cs;
    std::string config_echo;
};

namespace detail {
inline std::string pct(const std::optional<double>& v) {
    if (!v) return "-";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", *v * 100.0);
    return buf;
}

inline std::string full(const std::optional<double>& v) {
    if (!v) return "";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", *v);
    return buf;
}

inline std::string fixed6(const std::optional<double>& v) {
    if (!v) return "-";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", *v);
    return buf;
}

inline void text_row(std::ostream& out, const std::string& name,
                     const metrics::GroupValues& g) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%-10s %8s %8s %8s %8s\n", name.c_str(),
                  pct(g.many).c_str(), pct(g.medium).c_str(), pct(g.few).c_str(),
                  pct(std::optional<double>(g.all)).c_str());
    out << buf;
}

inline void csv_row(std::ostream& out, const std::string& name,
                    const metrics::GroupValues& g) {
    out << name << ',' << full(g.many) << ',' << full(g.medium) << ',' << full(g.few) << ','
        << full(std::optional<double>(g.all)) << '\n';
}

inline nlohmann::json group_json(const metrics::GroupValues& g) {
    nlohmann::json j;
    j["many"] = g.many ? nlohmann::json(*g.many) : nlohmann::json(nullptr);
    j["medium"] = g.medium ? nlohmann::json(*g.medium) : nlohmann::json(nullptr);
    j["few"] = g.few ? nlohmann::json(*g.few) : nlohmann::json(nullptr);
    j["all"] = g.all;
    return j;
}

inline void echo_as_comments(std::ostream& out, const std::string& echo) {
    std::istringstream in(echo);
    std::string line;
    while (std::getline(in, line)) out << "# " << line << '\n';
}
}  // namespace detail

inline void write_report(const ExperimentReport& report, ReportFormat format,
                         std::ostream& out) {
    switch (format) {
        case ReportFormat::Text: {
            out << "MDCS experiment report\n\n";
            out << "[config]\n" << report.config_echo << "\n[results] (accuracy %, "
                << "sigma = diversity factor %)\n";
            char buf[128];
            std::snprintf(buf, sizeof(buf), "%-10s %8s %8s %8s %8s\n", "model", "many",
                          "medium", "few", "all");
            out << buf;
            for (int m = 0; m < report.experts; ++m) {
                detail::text_row(out, "E" + std::to_string(m + 1),
                                 report.expert_acc[static_cast<std::size_t>(m)]);
            }
            detail::text_row(out, "ensemble", report.ensemble_acc);
            detail::text_row(out, "sigma", report.sigma);
            break;
        }
        case ReportFormat::Csv: {
            detail::echo_as_comments(out, report.config_echo);
            out << "model,many,medium,few,all\n";
            for (int m = 0; m < report.experts; ++m) {
                detail::csv_row(out, "E" + std::to_string(m + 1),
                                report.expert_acc[static_cast<std::size_t>(m)]);
            }
            detail::csv_row(out, "ensemble", report.ensemble_acc);
            detail::csv_row(out, "sigma", report.sigma);
            break;
        }
        case ReportFormat::Json: {
            nlohmann::json j;
            j["config"] = report.config_echo;
            j["experts"] = report.experts;
            nlohmann::json experts = nlohmann::json::array();
            for (const auto& acc : report.expert_acc) {
                experts.push_back(detail::group_json(acc));
            }
            j["expert_accuracy"] = experts;
            j["ensemble_accuracy"] = detail::group_json(report.ensemble_acc);
            j["diversity_factor"] = detail::group_json(report.sigma);
            out << j.dump(2) << '\n';
            break;
        }
    }
}

inline void write_variance_report(const VarianceReport& report, ReportFormat format,
                                  std::ostream& out) {
    switch (format) {
        case ReportFormat::Text: {
            out << "MDCS variance report\n\n";
            out << "[config]\n" << report.config_echo << "\n[variance] members = "
                << report.members << '\n';
            char buf[128];
            if (report.no_cs) {
                std::snprintf(buf, sizeof(buf), "%-8s %12s %12s\n", "group", "no_cs",
                              "with_cs");
                out << buf;
                auto row = [&](const char* name, const std::optional<double>& off,
                               const std::optional<double>& on) {
                    std::snprintf(buf, sizeof(buf), "%-8s %12s %12s\n", name,
                                  detail::fixed6(off).c_str(), detail::fixed6(on).c_str());
                    out << buf;
                };
                row("many", report.no_cs->many, report.configured.many);
                row("medium", report.no_cs->medium, report.configured.medium);
                row("few", report.no_cs->few, report.configured.few);
                row("all", report.no_cs->all, report.configured.all);
            } else {
                std::snprintf(buf, sizeof(buf), "%-8s %12s\n", "group", "var");
                out << buf;
                auto row = [&](const char* name, const std::optional<double>& v) {
                    std::snprintf(buf, sizeof(buf), "%-8s %12s\n", name,
                                  detail::fixed6(v).c_str());
                    out << buf;
                };
                row("many", report.configured.many);
                row("medium", report.configured.medium);
                row("few", report.configured.few);
                row("all", report.configured.all);
            }
            break;
        }
        case ReportFormat::Csv: {
            detail::echo_as_comments(out, report.config_echo);
            if (report.no_cs) {
                out << "group,var_no_cs,var_with_cs\n";
                auto row = [&out](const char* name, const std::optional<double>& off,
                                  const std::optional<double>& on) {
                    out << name << ',' << detail::full(off) << ',' << detail::full(on)
                        << '\n';
                };
                row("many", report.no_cs->many, report.configured.many);
                row("medium", report.no_cs->medium, report.configured.medium);
                row("few", report.no_cs->few, report.configured.few);
                row("all", report.no_cs->all, report.configured.all);
            } else {
                out << "group,var\n";
                auto row = [&out](const char* name, const std::optional<double>& v) {
                    out << name << ',' << detail::full(v) << '\n';
                };
                row("many", report.configured.many);
                row("medium", report.configured.medium);
                row("few", report.configured.few);
                row("all", report.configured.all);
            }
            break;
        }
        case ReportFormat::Json: {
            nlohmann::json j;
            j["config"] = report.config_echo;
            j["members"] = report.members;
            j["variance"] = detail::group_json(report.configured);
            if (report.no_cs) j["variance_no_cs"] = detail::group_json(*report.no_cs);
            out << j.dump(2) << '\n';
            break;
        }
    }
}

inline void write_report_file(const ExperimentReport& report, ReportFormat format,
                              const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write report: " + path);
    write_report(report, format, out);
}

inline void write_variance_file(const VarianceReport& report, ReportFormat format,
                                const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write variance report: " + path);
    write_variance_report(report, format, out);
}

}  // namespace mdcs::run

#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include "rnnkit/train.hpp"

namespace rnnkit {

namespace {

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

struct RatioRow {
    std::string family;
    double params = 0.0;
    double time = 0.0;
};

// simplified/baseline ratios per family, in first-appearance order.
std::vector<RatioRow> ratios(const std::vector<TrainReport>& reports) {
    std::vector<RatioRow> out;
    std::vector<std::string> families;
    for (const auto& r : reports)
        if (std::find(families.begin(), families.end(), r.family) == families.end())
            families.push_back(r.family);
    for (const auto& family : families) {
        const TrainReport* base = nullptr;
        const TrainReport* simp = nullptr;
        for (const auto& r : reports) {
            if (r.family != family) continue;
            if (r.variant == "baseline" && !base) base = &r;
            if (r.variant == "simplified" && !simp) simp = &r;
        }
        if (!base || !simp) continue;
        RatioRow row;
        row.family = family;
        row.params = base->trainable_params > 0
                         ? static_cast<double>(simp->trainable_params) / base->trainable_params
                         : 0.0;
        row.time = base->median_secs_per_epoch() > 0.0
                       ? simp->median_secs_per_epoch() / base->median_secs_per_epoch()
                       : 0.0;
        out.push_back(row);
    }
    return out;
}

void emit_csv(const std::vector<TrainReport>& reports, std::ostream& os) {
    os << "model,variant,params,median_secs_per_epoch,epochs,metric1_name,metric1,metric2_name,"
          "metric2,diverged\n";
    for (const auto& r : reports)
        os << r.family << ',' << r.variant << ',' << r.trainable_params << ','
           << num(r.median_secs_per_epoch()) << ',' << r.epochs_run << ',' << r.metric_names[0] << ','
           << num(r.final_metrics[0]) << ',' << r.metric_names[1] << ',' << num(r.final_metrics[1])
           << ',' << (r.diverged ? 1 : 0) << '\n';
    for (const auto& row : ratios(reports))
        os << row.family << ",simplified/baseline," << num(row.params) << ',' << num(row.time)
           << ",,,,,,\n";
}

void emit_markdown(const std::vector<TrainReport>& reports, std::ostream& os) {
    os << "| model | variant | params | secs/epoch x epochs | " << reports.front().metric_names[0]
       << " | " << reports.front().metric_names[1] << " |\n";
    os << "|---|---|---|---|---|---|\n";
    for (const auto& r : reports)
        os << "| " << r.family << " | " << r.variant << " | " << r.trainable_params << " | "
           << num(r.median_secs_per_epoch()) << " x " << r.epochs_run << " | "
           << num(r.final_metrics[0]) << (r.diverged ? " (diverged)" : "") << " | "
           << num(r.final_metrics[1]) << " |\n";
    for (const auto& row : ratios(reports))
        os << "| " << row.family << " | simplified/baseline | " << num(row.params) << " | "
           << num(row.time) << " |  |  |\n";
}

}  // namespace

void emit_report(const std::vector<TrainReport>& reports, ReportFormat format, std::ostream& os) {
    if (reports.empty()) throw std::invalid_argument("emit_report: no reports to emit");
    if (format == ReportFormat::Csv)
        emit_csv(reports, os);
    else
        emit_markdown(reports, os);
}

void emit_report_file(const std::vector<TrainReport>& reports, ReportFormat format,
                      const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("emit_report: cannot open '" + path + "' for writing");
    emit_report(reports, format, out);
    if (!out) throw std::runtime_error("emit_report: write failure on '" + path + "'");
}

}  // namespace rnnkit

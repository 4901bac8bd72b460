#pragma once

// Report consumption: load one or more audit reports, merge their rows, and
// render an aligned text table with percentage-point deltas against the
// matching scale-None baseline row.

#include <algorithm>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "polyaudit/audit.hpp"
#include "polyaudit/common.hpp"
#include "polyaudit/json_util.hpp"

namespace polyaudit {

struct LoadedReport {
    std::string path;
    std::string config_hash;
    json body;
};

inline LoadedReport load_report(const std::string& path) {
    LoadedReport r;
    r.path = path;
    r.body = parse_json_text(read_text_file(path), "report " + path);
    JsonReader top(r.body, "report");
    require_data(top.get<std::string>("schema") == kReportSchema,
                 "report " + path + ": unknown schema id");
    r.config_hash = top.get<std::string>("config_hash");
    return r;
}

namespace detail {

// A merged table line: all (seed, fold) metric values pooled for one
// (probe, input, scale, mask) cell.
struct TableLine {
    std::string probe, input, scale, mask;
    std::vector<double> macro_f1, recall_large;
    long seeds = 0;
};

inline std::string fixed3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

inline std::string fixed1_signed(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%+.1f", v);
    return buf;
}

}  // namespace detail

// Merges rows across reports.  Reports produced by different configs refuse
// to merge unless `force` is set — mixing grids silently would make the
// deltas meaningless.
inline std::string render_report_table(const std::vector<LoadedReport>& reports,
                                       bool force,
                                       std::string* merged_csv = nullptr) {
    require_data(!reports.empty(), "report: need at least one input");
    for (const LoadedReport& r : reports)
        require_data(force || r.config_hash == reports.front().config_hash,
                     "report: config hash mismatch between " +
                         reports.front().path + " and " + r.path +
                         " (pass --force to merge anyway)");

    std::map<std::tuple<std::string, std::string, std::string, std::string>,
             detail::TableLine>
        lines;
    if (merged_csv)
        *merged_csv = "probe,input,scale,mask,seed,fold,macro_f1,recall_large\n";
    for (const LoadedReport& r : reports) {
        require_data(r.body.contains("rows") && r.body.at("rows").is_array(),
                     "report " + r.path + ": missing rows");
        for (const json& row : r.body.at("rows")) {
            const std::string probe = row.at("probe").get<std::string>();
            const std::string input = row.at("input").get<std::string>();
            const std::string scale = row.at("scale").get<std::string>();
            const std::string mask = row.at("mask").get<std::string>();
            auto& line = lines[{probe, input, scale, mask}];
            line.probe = probe;
            line.input = input;
            line.scale = scale;
            line.mask = mask;
            line.seeds += 1;
            for (const json& fr : row.at("per_fold")) {
                const double f1 = fr.at("macro_f1").get<double>();
                const double rec = fr.at("recall_large").get<double>();
                line.macro_f1.push_back(f1);
                line.recall_large.push_back(rec);
                if (merged_csv) {
                    *merged_csv += probe + ',' + input + ',' + scale + ',' +
                                   mask + ',' +
                                   std::to_string(
                                       row.at("seed").get<uint64_t>()) +
                                   ',' +
                                   std::to_string(fr.at("fold").get<int>()) +
                                   ',' + format_double(f1) + ',' +
                                   format_double(rec) + '\n';
                }
            }
        }
    }
    require_data(!lines.empty(), "report: no rows to render");

    // baseline per (probe, input, mask): the scale-None line
    std::map<std::tuple<std::string, std::string, std::string>, double>
        baseline_f1;
    for (const auto& [key, line] : lines) {
        if (line.scale != "None") continue;
        const auto [mean, stddev] = aggregate_folds(line.macro_f1);
        (void)stddev;
        baseline_f1[{line.probe, line.input, line.mask}] = mean;
    }

    std::vector<std::vector<std::string>> grid;
    grid.push_back({"probe", "input", "scale", "mask", "cells", "macro_f1",
                    "recall_large", "delta_pp"});
    for (const auto& [key, line] : lines) {
        const auto [f1_mean, f1_std] = aggregate_folds(line.macro_f1);
        const auto [rec_mean, rec_std] = aggregate_folds(line.recall_large);
        std::string delta = "-";
        const auto base =
            baseline_f1.find({line.probe, line.input, line.mask});
        if (base != baseline_f1.end() && line.scale != "None")
            delta = detail::fixed1_signed(100.0 * (f1_mean - base->second));
        grid.push_back({line.probe, line.input, line.scale, line.mask,
                        std::to_string(line.seeds) + "x" +
                            std::to_string(line.macro_f1.size() / line.seeds),
                        detail::fixed3(f1_mean) + " +/- " +
                            detail::fixed3(f1_std),
                        detail::fixed3(rec_mean) + " +/- " +
                            detail::fixed3(rec_std),
                        delta});
    }

    std::vector<size_t> widths(grid.front().size(), 0);
    for (const auto& row : grid)
        for (size_t c = 0; c < row.size(); ++c)
            widths[c] = std::max(widths[c], row[c].size());
    std::string out;
    for (size_t r = 0; r < grid.size(); ++r) {
        for (size_t c = 0; c < grid[r].size(); ++c) {
            std::string cell = grid[r][c];
            cell.resize(widths[c], ' ');
            out += cell;
            if (c + 1 < grid[r].size()) out += "  ";
        }
        while (!out.empty() && out.back() == ' ') out.pop_back();
        out.push_back('\n');
        if (r == 0) {
            for (size_t c = 0; c < widths.size(); ++c) {
                out += std::string(widths[c], '-');
                if (c + 1 < widths.size()) out += "  ";
            }
            out.push_back('\n');
        }
    }
    return out;
}

}  // namespace polyaudit

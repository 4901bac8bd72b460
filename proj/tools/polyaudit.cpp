// Command-line front end: generate synthetic datasets, run the intervention
// audit, and render report tables.  Exit codes: 0 success, 2 configuration
// error, 3 data/I-O error, 4 numeric failure.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "polyaudit/audit.hpp"
#include "polyaudit/config.hpp"
#include "polyaudit/report.hpp"

namespace {

using namespace polyaudit;

RunConfig load_run_config(const std::string& path) {
    return parse_run_config_text(read_text_file(path));
}

int cmd_generate(const std::string& config_path, const std::string& out_path,
                 int64_t seed_override) {
    RunConfig rc = load_run_config(config_path);
    if (seed_override >= 0) rc.gen.seed = static_cast<uint64_t>(seed_override);
    const Dataset ds = generate_dataset(rc.gen);
    write_dataset(ds, out_path);
    int n_small = 0, n_large = 0;
    for (const PolypInstance& p : ds.cohort)
        (p.size_class == SizeClass::Large ? n_large : n_small) += 1;
    std::printf(
        "dataset: %d patients, %zu polyps (%d Small / %d Large), %zu frames, "
        "%d environments -> %s\n",
        ds.config.cohort.n_patients, ds.cohort.size(), n_small, n_large,
        ds.frames.size(), ds.n_environments(), out_path.c_str());
    return 0;
}

int cmd_audit(const std::string& config_path, const std::string& dataset_path,
              const std::string& out_dir_flag, int64_t seed_override,
              int workers) {
    RunConfig rc = load_run_config(config_path);
    if (seed_override >= 0) rc.seeds = {static_cast<uint64_t>(seed_override)};
    const Dataset ds = read_dataset(dataset_path);
    require_data(
        gen_config_to_json(rc.gen) == gen_config_to_json(ds.config),
        "audit: dataset was generated with a different generator config "
        "than the one supplied (" +
            dataset_path + ")");

    const std::string out_dir =
        out_dir_flag.empty() ? rc.output_dir : out_dir_flag;
    std::filesystem::create_directories(out_dir);

    const AuditReport report = run_audit(ds, rc, workers);
    const std::string json_path = out_dir + "/report.json";
    const std::string csv_path = out_dir + "/report.csv";
    write_text_file(json_path, report_to_json(report).dump(2) + "\n");
    write_text_file(csv_path, report_to_csv(report));

    std::printf("audit: %zu rows (%zu probes x %zu plans x %zu seeds), "
                "%zu partition comparisons -> %s\n",
                report.rows.size(), rc.probes.size(), rc.plans.size(),
                rc.seeds.size(), report.partitions.size(), out_dir.c_str());
    if (report.leak_check.ran) {
        std::printf("leak check: %ld predictions re-scored with hidden depth "
                    "zeroed -> %s\n",
                    report.leak_check.n_predictions,
                    report.leak_check.passed ? "identical" : "DIFFERENT");
        require_data(report.leak_check.passed,
                     "leak check failed: a scale-None prediction changed when "
                     "hidden metric depth was zeroed");
    }
    return 0;
}

int cmd_report(const std::vector<std::string>& paths, bool force,
               const std::string& merge_csv_path) {
    std::vector<LoadedReport> reports;
    reports.reserve(paths.size());
    for (const std::string& p : paths) reports.push_back(load_report(p));
    std::string merged_csv;
    const std::string table = render_report_table(
        reports, force, merge_csv_path.empty() ? nullptr : &merged_csv);
    std::fputs(table.c_str(), stdout);
    if (!merge_csv_path.empty()) write_text_file(merge_csv_path, merged_csv);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Monocular size-classification audit harness"};
    app.require_subcommand(1);

    std::string config_path, dataset_path, out_path, out_dir, merge_csv_path;
    int64_t seed_override = -1;
    int workers = 1;
    bool force = false;
    std::vector<std::string> report_paths;

    CLI::App* generate =
        app.add_subcommand("generate", "Render a synthetic dataset file");
    generate->add_option("--config", config_path, "Run config (JSON)")
        ->required();
    generate->add_option("--out", out_path, "Output dataset file")->required();
    generate->add_option("--seed", seed_override,
                         "Override the generator seed");

    CLI::App* audit = app.add_subcommand(
        "audit", "Train probes over the intervention grid and write reports");
    audit->add_option("--config", config_path, "Run config (JSON)")
        ->required();
    audit->add_option("--dataset", dataset_path, "Dataset file from generate")
        ->required();
    audit->add_option("--out-dir", out_dir,
                      "Report directory (defaults to config output_dir)");
    audit->add_option("--seed", seed_override,
                      "Run a single audit seed instead of the config list");
    audit->add_option("--workers", workers, "Worker thread count");

    CLI::App* report = app.add_subcommand(
        "report", "Render (and optionally merge) audit reports as a table");
    report->add_option("reports", report_paths, "report.json files")
        ->required();
    report->add_flag("--force", force,
                     "Merge reports even if their config hashes differ");
    report->add_option("--merge-csv", merge_csv_path,
                       "Also write the merged per-fold rows as CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (generate->parsed())
            return cmd_generate(config_path, out_path, seed_override);
        if (audit->parsed())
            return cmd_audit(config_path, dataset_path, out_dir, seed_override,
                             workers);
        return cmd_report(report_paths, force, merge_csv_path);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}

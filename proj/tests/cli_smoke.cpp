// End-to-end exercise of the CLI surface: generate-data, train, evaluate,
// calibrate (+ --verify), metrics (+ --verify) and compare, including exit
// codes for config and data errors. Runs the real binary via std::system.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int failures = 0;

void expect(bool ok, const std::string& what) {
    if (!ok) {
        ++failures;
        std::cerr << "FAIL: " << what << "\n";
    }
}

int run(const std::string& cmd) {
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: cli_smoke <path-to-ssmll-binary>\n";
        return 2;
    }
    const std::string bin = argv[1];
    const fs::path work = fs::temp_directory_path() / "ssmll_cli_smoke";
    fs::remove_all(work);
    fs::create_directories(work);
    const std::string quiet = " > " + (work / "stdout.txt").string() + " 2>&1";

    // generate-data
    const json synth = {{"num_classes", 5}, {"feature_dim", 8},  {"patches", 2},
                        {"n_total", 240},   {"n_test", 60},      {"pi", 0.3},
                        {"rho_corr", 0.2},  {"sigma_proto", 1.0}, {"sigma_feat", 0.8},
                        {"seed", 4}};
    {
        std::ofstream out(work / "synth.json");
        out << synth.dump(2);
    }
    const fs::path data_dir = work / "data";
    expect(run(bin + " generate-data " + (work / "synth.json").string() + " --out " +
               data_dir.string() + quiet) == 0,
           "generate-data exits 0");
    expect(fs::exists(data_dir / "manifest.json"), "manifest written");
    expect(fs::exists(data_dir / "features_global.csv"), "global features written");

    // generate-data is deterministic: a second run writes identical bytes
    const fs::path data_dir2 = work / "data2";
    run(bin + " generate-data " + (work / "synth.json").string() + " --out " + data_dir2.string() +
        quiet);
    expect(read_file(data_dir / "labels.csv") == read_file(data_dir2 / "labels.csv"),
           "generate-data reruns byte-identical");

    // train against the manifest
    const json train = {{"dataset", {{"manifest", (data_dir / "manifest.json").string()},
                                     {"p", 0.15},
                                     {"split_seed", 2}}},
                        {"epochs", 3},
                        {"warmup_epochs", 2},
                        {"batch_labeled", 8},
                        {"lr", 5e-3},
                        {"hidden_width", 16},
                        {"strategy", "mat"},
                        {"grid_step", 0.05},
                        {"seed", 9}};
    {
        std::ofstream out(work / "train.json");
        out << train.dump(2);
    }
    const fs::path run_dir = work / "run";
    expect(run(bin + " train " + (work / "train.json").string() + " --out " + run_dir.string() +
               quiet) == 0,
           "train exits 0");
    for (const char* f : {"report.json", "trace_epochs.csv", "trace_thresholds.csv",
                          "scores_test.csv", "labels_test.csv", "model.json"})
        expect(fs::exists(run_dir / f), std::string("train writes ") + f);

    // evaluate the saved model on the test split
    expect(run(bin + " evaluate " + (run_dir / "model.json").string() + " " +
               (data_dir / "manifest.json").string() + " --out " +
               (work / "eval.json").string() + quiet) == 0,
           "evaluate exits 0");
    {
        json ev, rep;
        std::ifstream(work / "eval.json") >> ev;
        std::ifstream(run_dir / "report.json") >> rep;
        expect(ev.contains("mAP"), "evaluate reports mAP");
        expect(std::abs(ev["mAP"].get<double>() - rep["final_test"]["mAP"].get<double>()) < 1e-12,
               "evaluate matches the training report");
    }

    // the labeled and unlabeled (audit) splits are also evaluable
    expect(run(bin + " evaluate " + (run_dir / "model.json").string() + " " +
               (data_dir / "manifest.json").string() + " --split labeled" + quiet) == 0,
           "evaluate --split labeled exits 0");
    expect(run(bin + " evaluate " + (run_dir / "model.json").string() + " " +
               (data_dir / "manifest.json").string() + " --split unlabeled" + quiet) == 0,
           "evaluate --split unlabeled (audit path) exits 0");

    // calibrate with oracle verification on the exported test scores
    expect(run(bin + " calibrate --scores " + (run_dir / "scores_test.csv").string() +
               " --labels " + (run_dir / "labels_test.csv").string() +
               " --metric fbeta --beta 0.5 --step 0.01 --verify --threads 3 --out " +
               (work / "thresholds.json").string() + quiet) == 0,
           "calibrate --verify exits 0");
    {
        json th;
        std::ifstream(work / "thresholds.json") >> th;
        expect(th["verified"].get<bool>(), "calibrate verified against the brute-force search");
        expect(th["thresholds"].size() == 5, "one threshold per class");
    }

    // metrics report with verification
    expect(run(bin + " metrics --scores " + (run_dir / "scores_test.csv").string() + " --labels " +
               (run_dir / "labels_test.csv").string() + " --verify --out " +
               (work / "metrics.json").string() + quiet) == 0,
           "metrics --verify exits 0");
    {
        json mj;
        std::ifstream(work / "metrics.json") >> mj;
        expect(mj["verified"].get<bool>(), "metrics verified against the naive implementation");
    }

    // compare: tiny two-run sweep
    json sweep_base = train;
    sweep_base["epochs"] = 2;
    sweep_base["warmup_epochs"] = 1;
    const json sweep = {
        {"name", "smoke"},
        {"base", sweep_base},
        {"runs", json::array({json{{"name", "mat"}, {"overrides", {{"strategy", "mat"}}}},
                              json{{"name", "sup"}, {"overrides", {{"strategy", "supervised"}}}}})},
        {"seeds", json::array({1})}};
    {
        std::ofstream out(work / "sweep.json");
        out << sweep.dump(2);
    }
    const fs::path cmp_dir = work / "cmp";
    expect(run(bin + " compare " + (work / "sweep.json").string() + " --out " + cmp_dir.string() +
               quiet) == 0,
           "compare exits 0");
    expect(fs::exists(cmp_dir / "comparison.csv"), "comparison.csv written");
    expect(fs::exists(cmp_dir / "summary.csv"), "summary.csv written");

    // SSMLL_OUT_DIR is honored when --out is absent
    const fs::path env_dir = work / "envout";
    fs::create_directories(env_dir);
    expect(run("SSMLL_OUT_DIR=" + env_dir.string() + " " + bin + " metrics --scores " +
               (run_dir / "scores_test.csv").string() + " --labels " +
               (run_dir / "labels_test.csv").string() + quiet) == 0,
           "metrics with env out dir exits 0");
    expect(fs::exists(env_dir / "report.json"), "env out dir used for report.json");

    // exit code 2 for config errors, 3 for data errors
    {
        std::ofstream out(work / "bad_cfg.json");
        out << "{\"dataset\": {\"p\": 0.5}}";
    }
    expect(run(bin + " train " + (work / "bad_cfg.json").string() + " --out " +
               (work / "bad_run").string() + quiet) == 2,
           "config error exits 2");
    {
        std::ofstream out(work / "bad.csv");
        out << "class_0\n0.5\nnot_a_number\n";
    }
    expect(run(bin + " metrics --scores " + (work / "bad.csv").string() + " --labels " +
               (work / "bad.csv").string() + quiet) == 3,
           "data error exits 3");

    if (failures == 0) {
        std::cout << "cli_smoke: all checks passed\n";
        fs::remove_all(work);
        return 0;
    }
    std::cerr << "cli_smoke: " << failures << " checks failed (work dir kept at " << work << ")\n";
    return 1;
}

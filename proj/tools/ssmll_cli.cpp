// Command-line front end: dataset generation, training, evaluation, offline
// threshold calibration, metric reports and strategy sweeps.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ssmll/csv.hpp"
#include "ssmll/harness.hpp"
#include "ssmll/oracle.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string default_out_dir() {
    const char* env = std::getenv("SSMLL_OUT_DIR");
    return env && *env ? env : ".";
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ssmll::config_error("cannot open config file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ssmll::config_error(path + ": invalid JSON: " + e.what());
    }
    return j;
}

void write_json_file(const std::string& path, const json& j) {
    fs::create_directories(fs::path(path).parent_path().empty() ? "." : fs::path(path).parent_path().string());
    std::ofstream out(path);
    if (!out) throw ssmll::data_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

ssmll::MetricKind metric_from_flags(const std::string& metric, double beta, const std::string& denom) {
    ssmll::MetricKind kind;
    if (metric == "fbeta")
        kind.type = ssmll::MetricType::fbeta;
    else if (metric == "precision")
        kind.type = ssmll::MetricType::precision;
    else if (metric == "recall")
        kind.type = ssmll::MetricType::recall;
    else
        throw ssmll::config_error("--metric: unknown value '" + metric + "'");
    kind.beta = beta;
    if (denom == "beta_squared")
        kind.denom = ssmll::FBetaDenom::beta_squared;
    else if (denom == "beta_linear")
        kind.denom = ssmll::FBetaDenom::beta_linear;
    else
        throw ssmll::config_error("--denominator: unknown value '" + denom + "'");
    return kind;
}

int cmd_generate_data(const std::string& cfg_path, const std::string& out_dir) {
    const json j = load_json_file(cfg_path);
    const ssmll::SynthConfig cfg = ssmll::synth_config_from_json(j, "");
    const ssmll::SynthData data = ssmll::generate_synthetic(cfg);
    ssmll::save_dataset(out_dir, data);
    std::cout << "wrote dataset (" << cfg.n_total << " instances, K=" << cfg.num_classes
              << ", n=" << cfg.patches << ") to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& cfg_path, const std::string& out_dir) {
    const ssmll::TrainConfig cfg = ssmll::train_config_from_json(load_json_file(cfg_path));
    const ssmll::ExperimentReport report = ssmll::run_experiment(cfg, out_dir);
    std::cout << "strategy=" << ssmll::strategy_name(cfg.strategy)
              << " epochs_run=" << report.epochs_run << " best_epoch=" << report.best_epoch
              << " test mAP=" << report.final_test.map << " CF1=" << report.final_test.cf1
              << " OF1=" << report.final_test.of1 << "\n";
    std::cout << "report written to " << out_dir << "\n";
    return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& manifest_path,
                 const std::string& split, double p_override, long long seed_override,
                 const std::string& out_file) {
    const ssmll::LoadedModel lm = ssmll::model_from_json(load_json_file(model_path));
    const json& meta = lm.meta;
    ssmll::DatasetSpec spec;
    spec.manifest = manifest_path;
    spec.p = p_override > 0 ? p_override : meta.value("p", 0.05);
    spec.split_seed = seed_override >= 0 ? static_cast<std::uint64_t>(seed_override)
                                         : meta.value("split_seed", std::uint64_t{1});
    const double alpha = meta.value("alpha", 1.0);
    const bool use_ema = lm.ema_ready && meta.value("eval_use_ema", true);
    const std::string heads = meta.value("eval_heads", std::string("mean"));
    ssmll::EvalHeads policy = ssmll::EvalHeads::mean;
    if (heads == "generator") policy = ssmll::EvalHeads::generator;
    if (heads == "utilizer") policy = ssmll::EvalHeads::utilizer;

    const ssmll::SsmllDataset ds = ssmll::materialize_dataset(spec);
    const ssmll::InstanceBlock* block = &ds.test;
    const ssmll::LabelMatrix* truth = &ds.test_labels;
    if (split == "labeled") {
        block = &ds.labeled;
        truth = &ds.labeled_labels;
    } else if (split == "unlabeled") {
        block = &ds.unlabeled;
        truth = &ds.audit_labels();  // quality audit path
    } else if (split != "test") {
        throw ssmll::config_error("--split: unknown value '" + split + "'");
    }
    const ssmll::EvalBundle b =
        ssmll::evaluate_model(lm.model, lm.ema, use_ema, policy, alpha, *block, *truth);
    json out = ssmll::eval_bundle_to_json(b);
    out["split"] = split;
    out["n_instances"] = block->size();
    if (!out_file.empty()) write_json_file(out_file, out);
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_calibrate(const std::string& scores_path, const std::string& labels_path,
                  const std::string& metric, double beta, const std::string& denom, double step,
                  unsigned threads, bool verify, const std::string& out_file) {
    const ssmll::ScoreMatrix scores = ssmll::load_matrix(scores_path);
    const ssmll::LabelMatrix labels = ssmll::load_matrix(labels_path);
    const ssmll::MetricKind kind = metric_from_flags(metric, beta, denom);
    const ssmll::GridSpec grid{step};
    const std::vector<double> pts = grid.points();
    const ssmll::MatSearchResult res = ssmll::mat_search(scores, labels, kind, pts, threads);

    json out;
    out["metric"] = metric;
    out["beta"] = beta;
    out["fbeta_denominator"] = denom;
    out["step"] = step;
    out["thresholds"] = res.tau;
    out["achieved"] = res.achieved;
    json degenerate = json::array();
    for (std::size_t k = 0; k < res.degenerate.size(); ++k)
        if (res.degenerate[k]) degenerate.push_back(k);
    out["degenerate_classes"] = degenerate;

    if (verify) {
        const ssmll::MatSearchResult ref =
            ssmll::oracle::brute_force_thresholds(scores, labels, kind, pts);
        const bool ok = ref.tau == res.tau && ref.achieved == res.achieved &&
                        ref.degenerate == res.degenerate;
        out["verified"] = ok;
        if (!ok) {
            std::cerr << "calibrate: verification against the brute-force search FAILED\n";
            write_json_file(out_file, out);
            return 1;
        }
    }
    write_json_file(out_file, out);
    std::cout << "thresholds written to " << out_file << "\n";
    return 0;
}

int cmd_metrics(const std::string& scores_path, const std::string& labels_path, double threshold,
                double beta, bool verify, const std::string& out_file) {
    const ssmll::ScoreMatrix scores = ssmll::load_matrix(scores_path);
    const ssmll::LabelMatrix labels = ssmll::load_matrix(labels_path);
    if (!ssmll::is_binary(labels)) throw ssmll::data_error(labels_path + ": labels must be binary");
    const ssmll::LabelMatrix preds = ssmll::binarize(scores, threshold);

    const ssmll::MapResult mr = ssmll::mean_average_precision(scores, labels);
    const ssmll::PrF1Summary s = ssmll::cf1_of1(preds, labels);
    json out;
    out["mAP"] = mr.map;
    out["per_class_ap"] = mr.per_class_ap;
    out["skipped_classes"] = mr.skipped_classes;
    out["CF1"] = s.cf1;
    out["OF1"] = s.of1;
    out["CP"] = s.class_precision;
    out["CR"] = s.class_recall;
    out["OP"] = s.overall_precision;
    out["OR"] = s.overall_recall;
    out["threshold"] = threshold;

    const auto counts = ssmll::confusion_counts(preds, labels);
    json per_class = json::array();
    for (const auto& c : counts) {
        const double p = ssmll::precision_of(c);
        const double r = ssmll::recall_of(c);
        per_class.push_back({{"precision", p},
                             {"recall", r},
                             {"fbeta", ssmll::fbeta_of(p, r, beta, ssmll::FBetaDenom::beta_squared)}});
    }
    out["per_class"] = per_class;

    if (verify) {
        const ssmll::oracle::OracleMetricBundle ref =
            ssmll::oracle::naive_metrics(scores, preds, labels, beta);
        const bool ok = ref.map == mr.map && ref.cf1 == s.cf1 && ref.of1 == s.of1 &&
                        ref.cp == s.class_precision && ref.cr == s.class_recall &&
                        ref.op == s.overall_precision && ref.orr == s.overall_recall;
        out["verified"] = ok;
        if (!ok) {
            std::cerr << "metrics: verification against the naive implementation FAILED\n";
            write_json_file(out_file, out);
            return 1;
        }
    }
    write_json_file(out_file, out);
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_compare(const std::string& sweep_path, const std::string& out_dir) {
    const ssmll::SweepSpec spec = ssmll::sweep_from_json(load_json_file(sweep_path));
    const auto rows = ssmll::run_sweep(spec, out_dir);
    std::cout << "ran " << rows.size() << " experiments; comparison.csv and summary.csv in "
              << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"semi-supervised multi-label learning toolkit"};
    app.require_subcommand(1);

    std::string cfg_path, out_dir = default_out_dir();

    auto* gen = app.add_subcommand("generate-data", "generate a synthetic dataset from a JSON config");
    gen->add_option("config", cfg_path, "synth config JSON")->required();
    gen->add_option("--out", out_dir, "output directory (default $SSMLL_OUT_DIR or .)");

    auto* train = app.add_subcommand("train", "run one training experiment");
    train->add_option("config", cfg_path, "train config JSON")->required();
    train->add_option("--out", out_dir, "output directory");

    std::string model_path, manifest_path, split = "test", eval_out;
    double p_override = -1.0;
    long long seed_override = -1;
    auto* ev = app.add_subcommand("evaluate", "evaluate a saved model on a dataset split");
    ev->add_option("model", model_path, "model.json produced by train")->required();
    ev->add_option("manifest", manifest_path, "dataset manifest.json")->required();
    ev->add_option("--split", split, "test | labeled | unlabeled (default test)");
    ev->add_option("--p", p_override, "labeled proportion override");
    ev->add_option("--split-seed", seed_override, "split seed override");
    ev->add_option("--out", eval_out, "also write the metric bundle JSON here");

    std::string scores_path, labels_path, metric = "fbeta", denom = "beta_squared";
    double beta = 0.5, step = 0.01, threshold = 0.5;
    unsigned threads = 1;
    bool verify = false;
    std::string calib_out, metrics_out;
    auto* cal = app.add_subcommand("calibrate", "per-class threshold search on score/label CSVs");
    cal->add_option("--scores", scores_path, "score matrix CSV")->required();
    cal->add_option("--labels", labels_path, "binary label matrix CSV")->required();
    cal->add_option("--metric", metric, "fbeta | precision | recall");
    cal->add_option("--beta", beta, "beta for fbeta");
    cal->add_option("--denominator", denom, "beta_squared | beta_linear");
    cal->add_option("--step", step, "grid step in (0,1]");
    cal->add_option("--threads", threads, "parallel per-class search workers");
    cal->add_flag("--verify", verify, "cross-check against the brute-force search");
    cal->add_option("--out", calib_out, "output JSON path (default <out dir>/thresholds.json)");

    auto* met = app.add_subcommand("metrics", "metric report for score/label CSVs");
    met->add_option("--scores", scores_path, "score matrix CSV")->required();
    met->add_option("--labels", labels_path, "binary label matrix CSV")->required();
    met->add_option("--threshold", threshold, "binarization threshold for the F1 family");
    met->add_option("--beta", beta, "beta for the per-class fbeta column");
    met->add_flag("--verify", verify, "cross-check against the naive implementation");
    met->add_option("--out", metrics_out, "output JSON path (default <out dir>/report.json)");

    auto* cmp = app.add_subcommand("compare", "run a sweep of experiments and tabulate results");
    cmp->add_option("sweep", cfg_path, "sweep JSON")->required();
    cmp->add_option("--out", out_dir, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_generate_data(cfg_path, out_dir);
        if (train->parsed()) return cmd_train(cfg_path, out_dir);
        if (ev->parsed())
            return cmd_evaluate(model_path, manifest_path, split, p_override, seed_override, eval_out);
        if (cal->parsed()) {
            if (calib_out.empty()) calib_out = (fs::path(out_dir) / "thresholds.json").string();
            return cmd_calibrate(scores_path, labels_path, metric, beta, denom, step, threads,
                                 verify, calib_out);
        }
        if (met->parsed()) {
            if (metrics_out.empty()) metrics_out = (fs::path(out_dir) / "report.json").string();
            return cmd_metrics(scores_path, labels_path, threshold, beta, verify, metrics_out);
        }
        if (cmp->parsed()) return cmd_compare(cfg_path, out_dir);
    } catch (const ssmll::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ssmll::data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

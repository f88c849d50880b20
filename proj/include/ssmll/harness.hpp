#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssmll/csv.hpp"
#include "ssmll/d2l.hpp"
#include "ssmll/data.hpp"
#include "ssmll/matrix.hpp"
#include "ssmll/metrics.hpp"
#include "ssmll/optim.hpp"
#include "ssmll/thresholding.hpp"

namespace ssmll {

using nlohmann::json;

// ---------------------------------------------------------------------------
// config parsing

namespace cfgdetail {

inline double num(const json& j, const std::string& key, double def, const std::string& ctx) {
    if (!j.contains(key)) return def;
    if (!j.at(key).is_number()) throw config_error(ctx + key + ": expected a number");
    return j.at(key).get<double>();
}

inline long long integer(const json& j, const std::string& key, long long def, const std::string& ctx) {
    if (!j.contains(key)) return def;
    if (!j.at(key).is_number_integer()) throw config_error(ctx + key + ": expected an integer");
    return j.at(key).get<long long>();
}

inline bool boolean(const json& j, const std::string& key, bool def, const std::string& ctx) {
    if (!j.contains(key)) return def;
    if (!j.at(key).is_boolean()) throw config_error(ctx + key + ": expected a boolean");
    return j.at(key).get<bool>();
}

inline std::string str(const json& j, const std::string& key, const std::string& def,
                       const std::string& ctx) {
    if (!j.contains(key)) return def;
    if (!j.at(key).is_string()) throw config_error(ctx + key + ": expected a string");
    return j.at(key).get<std::string>();
}

}  // namespace cfgdetail

/// FNV-1a over the canonical (key-sorted) JSON dump; used as the dataset
/// config fingerprint in manifests and model files.
inline std::string config_hash(const json& j) {
    const std::string s = j.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline SynthConfig synth_config_from_json(const json& j, const std::string& ctx = "synth.") {
    if (!j.is_object()) throw config_error(ctx + ": expected an object");
    SynthConfig c;
    c.num_classes = static_cast<std::size_t>(cfgdetail::integer(j, "num_classes", 10, ctx));
    c.feature_dim = static_cast<std::size_t>(cfgdetail::integer(j, "feature_dim", 32, ctx));
    c.patches = static_cast<std::size_t>(cfgdetail::integer(j, "patches", 4, ctx));
    c.n_total = static_cast<std::size_t>(cfgdetail::integer(j, "n_total", 1000, ctx));
    c.n_test = static_cast<std::size_t>(cfgdetail::integer(j, "n_test", 200, ctx));
    if (j.contains("pi")) {
        if (j.at("pi").is_number()) {
            c.pi.assign(c.num_classes, j.at("pi").get<double>());
        } else if (j.at("pi").is_array()) {
            c.pi = j.at("pi").get<std::vector<double>>();
        } else {
            throw config_error(ctx + "pi: expected a number or an array");
        }
    } else {
        c.pi.assign(c.num_classes, 0.25);
    }
    c.rho_corr = cfgdetail::num(j, "rho_corr", 0.0, ctx);
    if (j.contains("blocks")) {
        if (!j.at("blocks").is_array()) throw config_error(ctx + "blocks: expected an array of arrays");
        c.blocks = j.at("blocks").get<std::vector<std::vector<std::size_t>>>();
    }
    c.sigma_proto = cfgdetail::num(j, "sigma_proto", 1.0, ctx);
    c.sigma_feat = cfgdetail::num(j, "sigma_feat", 1.0, ctx);
    c.require_positive = cfgdetail::boolean(j, "require_positive", true, ctx);
    c.seed = static_cast<std::uint64_t>(cfgdetail::integer(j, "seed", 1, ctx));
    c.validate();
    return c;
}

inline json synth_config_to_json(const SynthConfig& c) {
    json j;
    j["num_classes"] = c.num_classes;
    j["feature_dim"] = c.feature_dim;
    j["patches"] = c.patches;
    j["n_total"] = c.n_total;
    j["n_test"] = c.n_test;
    j["pi"] = c.pi;
    j["rho_corr"] = c.rho_corr;
    j["blocks"] = c.blocks;
    j["sigma_proto"] = c.sigma_proto;
    j["sigma_feat"] = c.sigma_feat;
    j["require_positive"] = c.require_positive;
    j["seed"] = c.seed;
    return j;
}

enum class Strategy { mat, cap, fixed, topk, supervised };

inline Strategy strategy_from_string(const std::string& s, const std::string& ctx) {
    if (s == "mat") return Strategy::mat;
    if (s == "cap") return Strategy::cap;
    if (s == "fixed") return Strategy::fixed;
    if (s == "topk") return Strategy::topk;
    if (s == "supervised") return Strategy::supervised;
    throw config_error(ctx + "strategy: unknown value '" + s + "'");
}

inline std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::mat: return "mat";
        case Strategy::cap: return "cap";
        case Strategy::fixed: return "fixed";
        case Strategy::topk: return "topk";
        case Strategy::supervised: return "supervised";
    }
    return "?";
}

enum class EvalHeads { auto_pick, mean, generator, utilizer };

struct DatasetSpec {
    std::string manifest;  // path; empty when synth is inline
    bool has_synth = false;
    SynthConfig synth;
    double p = 0.05;
    std::uint64_t split_seed = 1;
};

struct TrainConfig {
    DatasetSpec dataset;
    std::size_t epochs = 40;
    std::size_t warmup_epochs = 12;
    std::size_t batch_labeled = 16;
    std::size_t batch_unlabeled = 0;  // 0: batch_labeled * min(4, ceil(M/N))
    double lr = 1e-4;
    double weight_decay = 1e-4;
    double ema_decay = 0.9997;
    bool use_ema_scores = true;  // thresholds + pseudo-labels from EMA generator
    MetricKind metric = fbeta_metric(0.5);
    double alpha = 1.0;
    double grid_step = 0.01;
    Strategy strategy = Strategy::mat;
    double fixed_tau = 0.5;
    std::size_t topk_k = 2;
    LossSpec loss;
    std::size_t hidden_width = 64;
    AugmentSpec aug;  // mode field unused here; both strengths carried
    std::uint64_t seed = 1;
    std::size_t patience = 10;
    EvalHeads eval_heads = EvalHeads::auto_pick;
    bool eval_use_ema = true;
    bool init_utilizer_from_generator = true;
    unsigned mat_threads = 1;

    EvalHeads resolved_eval_heads() const {
        if (eval_heads != EvalHeads::auto_pick) return eval_heads;
        return strategy == Strategy::supervised ? EvalHeads::generator : EvalHeads::mean;
    }

    void validate() const {
        if (batch_labeled == 0) throw config_error("batch_labeled: must be >= 1");
        if (!(lr > 0.0)) throw config_error("lr: must be > 0");
        if (!(weight_decay >= 0.0)) throw config_error("weight_decay: must be >= 0");
        if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw config_error("ema_decay: must be in [0,1)");
        if (!(alpha > 0.0)) throw config_error("alpha: must be > 0");
        if (!(grid_step > 0.0 && grid_step <= 1.0)) throw config_error("grid_step: must be in (0,1]");
        if (!(fixed_tau >= 0.0 && fixed_tau <= 1.0)) throw config_error("fixed_tau: must be in [0,1]");
        if (topk_k == 0) throw config_error("topk_k: must be >= 1");
        if (!(metric.beta > 0.0)) throw config_error("beta: must be > 0");
        if (!(dataset.p > 0.0 && dataset.p < 1.0)) throw config_error("dataset.p: must be in (0,1)");
        if (dataset.manifest.empty() && !dataset.has_synth)
            throw config_error("dataset: needs either 'manifest' or 'synth'");
    }
};

inline TrainConfig train_config_from_json(const json& j) {
    if (!j.is_object()) throw config_error("config root: expected an object");
    TrainConfig c;
    if (!j.contains("dataset")) throw config_error("dataset: missing");
    const json& dj = j.at("dataset");
    if (!dj.is_object()) throw config_error("dataset: expected an object");
    c.dataset.manifest = cfgdetail::str(dj, "manifest", "", "dataset.");
    if (dj.contains("synth")) {
        c.dataset.has_synth = true;
        c.dataset.synth = synth_config_from_json(dj.at("synth"), "dataset.synth.");
    }
    c.dataset.p = cfgdetail::num(dj, "p", 0.05, "dataset.");
    c.dataset.split_seed = static_cast<std::uint64_t>(cfgdetail::integer(dj, "split_seed", 1, "dataset."));

    c.epochs = static_cast<std::size_t>(cfgdetail::integer(j, "epochs", 40, ""));
    c.warmup_epochs = static_cast<std::size_t>(cfgdetail::integer(j, "warmup_epochs", 12, ""));
    c.batch_labeled = static_cast<std::size_t>(cfgdetail::integer(j, "batch_labeled", 16, ""));
    c.batch_unlabeled = static_cast<std::size_t>(cfgdetail::integer(j, "batch_unlabeled", 0, ""));
    c.lr = cfgdetail::num(j, "lr", 1e-4, "");
    c.weight_decay = cfgdetail::num(j, "weight_decay", 1e-4, "");
    c.ema_decay = cfgdetail::num(j, "ema_decay", 0.9997, "");
    c.use_ema_scores = cfgdetail::boolean(j, "use_ema_scores", true, "");

    const std::string metric = cfgdetail::str(j, "metric", "fbeta", "");
    if (metric == "fbeta")
        c.metric.type = MetricType::fbeta;
    else if (metric == "precision")
        c.metric.type = MetricType::precision;
    else if (metric == "recall")
        c.metric.type = MetricType::recall;
    else
        throw config_error("metric: unknown value '" + metric + "'");
    c.metric.beta = cfgdetail::num(j, "beta", 0.5, "");
    const std::string denom = cfgdetail::str(j, "fbeta_denominator", "beta_squared", "");
    if (denom == "beta_squared")
        c.metric.denom = FBetaDenom::beta_squared;
    else if (denom == "beta_linear")
        c.metric.denom = FBetaDenom::beta_linear;
    else
        throw config_error("fbeta_denominator: unknown value '" + denom + "'");

    c.alpha = cfgdetail::num(j, "alpha", 1.0, "");
    c.grid_step = cfgdetail::num(j, "grid_step", 0.01, "");
    c.strategy = strategy_from_string(cfgdetail::str(j, "strategy", "mat", ""), "");
    c.fixed_tau = cfgdetail::num(j, "fixed_tau", 0.5, "");
    c.topk_k = static_cast<std::size_t>(cfgdetail::integer(j, "topk_k", 2, ""));

    const std::string loss = cfgdetail::str(j, "loss", "asl", "");
    if (loss == "asl")
        c.loss.kind = LossKind::asl;
    else if (loss == "bce")
        c.loss.kind = LossKind::bce;
    else
        throw config_error("loss: unknown value '" + loss + "'");
    if (j.contains("asl")) {
        const json& aj = j.at("asl");
        c.loss.asl.gamma_pos = cfgdetail::num(aj, "gamma_pos", 0.0, "asl.");
        c.loss.asl.gamma_neg = cfgdetail::num(aj, "gamma_neg", 4.0, "asl.");
        c.loss.asl.margin = cfgdetail::num(aj, "margin", 0.05, "asl.");
        if (!(c.loss.asl.gamma_pos >= 0.0 && c.loss.asl.gamma_neg >= 0.0))
            throw config_error("asl.gamma_pos/gamma_neg: must be >= 0");
        if (!(c.loss.asl.margin >= 0.0 && c.loss.asl.margin < 1.0))
            throw config_error("asl.margin: must be in [0,1)");
    }

    c.hidden_width = static_cast<std::size_t>(cfgdetail::integer(j, "hidden_width", 64, ""));
    if (j.contains("augment")) {
        const json& gj = j.at("augment");
        c.aug.weak_sigma = cfgdetail::num(gj, "weak_sigma", 0.05, "augment.");
        c.aug.strong_sigma = cfgdetail::num(gj, "strong_sigma", 0.2, "augment.");
        c.aug.strong_dropout = cfgdetail::num(gj, "strong_dropout", 0.2, "augment.");
        if (!(c.aug.strong_dropout >= 0.0 && c.aug.strong_dropout < 1.0))
            throw config_error("augment.strong_dropout: must be in [0,1)");
    }
    c.seed = static_cast<std::uint64_t>(cfgdetail::integer(j, "seed", 1, ""));
    c.patience = static_cast<std::size_t>(cfgdetail::integer(j, "patience", 10, ""));

    const std::string eh = cfgdetail::str(j, "eval_heads", "auto", "");
    if (eh == "auto")
        c.eval_heads = EvalHeads::auto_pick;
    else if (eh == "mean")
        c.eval_heads = EvalHeads::mean;
    else if (eh == "generator")
        c.eval_heads = EvalHeads::generator;
    else if (eh == "utilizer")
        c.eval_heads = EvalHeads::utilizer;
    else
        throw config_error("eval_heads: unknown value '" + eh + "'");
    c.eval_use_ema = cfgdetail::boolean(j, "eval_use_ema", true, "");
    c.init_utilizer_from_generator = cfgdetail::boolean(j, "init_utilizer_from_generator", true, "");
    c.mat_threads = static_cast<unsigned>(cfgdetail::integer(j, "mat_threads", 1, ""));
    c.validate();
    return c;
}

inline json train_config_to_json(const TrainConfig& c) {
    json j;
    json dj;
    if (!c.dataset.manifest.empty()) dj["manifest"] = c.dataset.manifest;
    if (c.dataset.has_synth) dj["synth"] = synth_config_to_json(c.dataset.synth);
    dj["p"] = c.dataset.p;
    dj["split_seed"] = c.dataset.split_seed;
    j["dataset"] = dj;
    j["epochs"] = c.epochs;
    j["warmup_epochs"] = c.warmup_epochs;
    j["batch_labeled"] = c.batch_labeled;
    j["batch_unlabeled"] = c.batch_unlabeled;
    j["lr"] = c.lr;
    j["weight_decay"] = c.weight_decay;
    j["ema_decay"] = c.ema_decay;
    j["use_ema_scores"] = c.use_ema_scores;
    j["metric"] = metric_name(c.metric);
    j["beta"] = c.metric.beta;
    j["fbeta_denominator"] = c.metric.denom == FBetaDenom::beta_squared ? "beta_squared" : "beta_linear";
    j["alpha"] = c.alpha;
    j["grid_step"] = c.grid_step;
    j["strategy"] = strategy_name(c.strategy);
    j["fixed_tau"] = c.fixed_tau;
    j["topk_k"] = c.topk_k;
    j["loss"] = c.loss.kind == LossKind::asl ? "asl" : "bce";
    j["asl"] = {{"gamma_pos", c.loss.asl.gamma_pos},
                {"gamma_neg", c.loss.asl.gamma_neg},
                {"margin", c.loss.asl.margin}};
    j["hidden_width"] = c.hidden_width;
    j["augment"] = {{"weak_sigma", c.aug.weak_sigma},
                    {"strong_sigma", c.aug.strong_sigma},
                    {"strong_dropout", c.aug.strong_dropout}};
    j["seed"] = c.seed;
    j["patience"] = c.patience;
    switch (c.eval_heads) {
        case EvalHeads::auto_pick: j["eval_heads"] = "auto"; break;
        case EvalHeads::mean: j["eval_heads"] = "mean"; break;
        case EvalHeads::generator: j["eval_heads"] = "generator"; break;
        case EvalHeads::utilizer: j["eval_heads"] = "utilizer"; break;
    }
    j["eval_use_ema"] = c.eval_use_ema;
    j["init_utilizer_from_generator"] = c.init_utilizer_from_generator;
    j["mat_threads"] = c.mat_threads;
    return j;
}

// ---------------------------------------------------------------------------
// dataset files

inline void save_dataset(const std::string& dir, const SynthData& data) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    save_matrix((fs::path(dir) / "features_global.csv").string(), data.instances.global);
    save_matrix((fs::path(dir) / "features_patches.csv").string(), data.instances.patches);
    save_matrix((fs::path(dir) / "labels.csv").string(), data.labels);
    json manifest;
    manifest["K"] = data.cfg.num_classes;
    manifest["d"] = data.cfg.feature_dim;
    manifest["n"] = data.cfg.patches;
    manifest["n_total"] = data.cfg.n_total;
    manifest["n_test"] = data.cfg.n_test;
    manifest["seed"] = data.cfg.seed;
    manifest["config"] = synth_config_to_json(data.cfg);
    manifest["config_hash"] = config_hash(synth_config_to_json(data.cfg));
    manifest["files"] = {{"global", "features_global.csv"},
                         {"patches", "features_patches.csv"},
                         {"labels", "labels.csv"}};
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw data_error("save_dataset: cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

inline SynthData load_dataset(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    std::ifstream in(manifest_path);
    if (!in) throw data_error("load_dataset: cannot open " + manifest_path);
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw data_error("load_dataset: " + manifest_path + ": " + e.what());
    }
    SynthData data;
    data.cfg = synth_config_from_json(manifest.at("config"), "manifest.config.");
    const fs::path base = fs::path(manifest_path).parent_path();
    const json& files = manifest.at("files");
    data.instances.global = load_matrix((base / files.at("global").get<std::string>()).string());
    data.instances.patches = load_matrix((base / files.at("patches").get<std::string>()).string());
    data.labels = load_matrix((base / files.at("labels").get<std::string>()).string());
    data.instances.n = data.cfg.patches;
    if (data.instances.global.rows != data.cfg.n_total ||
        data.instances.patches.rows != data.cfg.n_total * data.cfg.patches ||
        data.labels.rows != data.cfg.n_total)
        throw data_error("load_dataset: file row counts disagree with manifest");
    return data;
}

// ---------------------------------------------------------------------------
// experiment report

struct EvalBundle {
    double map = 0.0, cf1 = 0.0, of1 = 0.0;
    double cp = 0.0, cr = 0.0, op = 0.0, orr = 0.0;
    std::vector<std::size_t> skipped_classes;
};

inline json eval_bundle_to_json(const EvalBundle& b) {
    json j;
    j["mAP"] = b.map;
    j["CF1"] = b.cf1;
    j["OF1"] = b.of1;
    j["CP"] = b.cp;
    j["CR"] = b.cr;
    j["OP"] = b.op;
    j["OR"] = b.orr;
    j["skipped_classes"] = b.skipped_classes;
    return j;
}

struct EpochRow {
    std::size_t epoch = 0;
    std::string phase;  // warmup | joint
    double loss_labeled = 0.0;
    double loss_unlabeled = 0.0;
    double monitor = 0.0;       // labeled-set mean per-class F_beta at 0.5
    double pseudo_cf1 = std::numeric_limits<double>::quiet_NaN();
    double pseudo_cp = std::numeric_limits<double>::quiet_NaN();
    double pseudo_cr = std::numeric_limits<double>::quiet_NaN();
    std::size_t degenerate_count = 0;
};

struct ExperimentReport {
    json config_echo;
    std::size_t n_labeled = 0, n_unlabeled = 0, n_test = 0;
    std::size_t num_classes = 0, feature_dim = 0, patches = 1;
    std::vector<EpochRow> epochs;
    std::vector<ThresholdVector> tau_trace;                  // joint epochs, threshold strategies
    std::vector<std::vector<std::size_t>> tau_degenerate;    // classes flagged per joint epoch
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    bool stopped_early = false;
    EvalBundle final_test;
    double final_pseudo_cf1 = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::size_t> degenerate_labeled_classes;
    ScoreMatrix test_scores;  // exported for external verification
    double wall_time_seconds = 0.0;
};

inline json report_to_json(const ExperimentReport& r) {
    json j;
    j["config"] = r.config_echo;
    j["dataset"] = {{"n_labeled", r.n_labeled}, {"n_unlabeled", r.n_unlabeled},
                    {"n_test", r.n_test},       {"K", r.num_classes},
                    {"d", r.feature_dim},       {"n", r.patches}};
    j["epochs_run"] = r.epochs_run;
    j["best_epoch"] = r.best_epoch;
    j["stopped_early"] = r.stopped_early;
    j["final_test"] = eval_bundle_to_json(r.final_test);
    if (std::isfinite(r.final_pseudo_cf1)) j["final_pseudo_cf1"] = r.final_pseudo_cf1;
    j["degenerate_labeled_classes"] = r.degenerate_labeled_classes;
    j["wall_time_seconds"] = r.wall_time_seconds;
    return j;
}

/// Score a split with the requested head-pair policy and binarize at 0.5 for
/// the F1 family; mAP comes from the raw score ranking.
inline EvalBundle evaluate_model(const DualModel& model, const EmaState& ema, bool use_ema,
                                 EvalHeads policy, double alpha, const InstanceBlock& split,
                                 const LabelMatrix& truth, ScoreMatrix* scores_out = nullptr) {
    if (split.size() == 0) throw data_error("evaluate: empty split");
    const DualModel m = use_ema ? with_tensors(model, ema.shadow) : model;
    ScoreMatrix scores;
    switch (policy) {
        case EvalHeads::generator:
            scores = pair_final_probs(m, HeadPair::generator, split, alpha);
            break;
        case EvalHeads::utilizer:
            scores = pair_final_probs(m, HeadPair::utilizer, split, alpha);
            break;
        default: {
            scores = pair_final_probs(m, HeadPair::generator, split, alpha);
            const ScoreMatrix u = pair_final_probs(m, HeadPair::utilizer, split, alpha);
            for (std::size_t i = 0; i < scores.data.size(); ++i)
                scores.data[i] = 0.5 * (scores.data[i] + u.data[i]);
            break;
        }
    }
    EvalBundle b;
    const MapResult mr = mean_average_precision(scores, truth);
    b.map = mr.map;
    b.skipped_classes = mr.skipped_classes;
    const PrF1Summary s = cf1_of1(binarize(scores, 0.5), truth);
    b.cf1 = s.cf1;
    b.of1 = s.of1;
    b.cp = s.class_precision;
    b.cr = s.class_recall;
    b.op = s.overall_precision;
    b.orr = s.overall_recall;
    if (scores_out) *scores_out = scores;
    return b;
}

// ---------------------------------------------------------------------------
// trainer

class Trainer {
public:
    Trainer(TrainConfig cfg, SsmllDataset dataset)
        : cfg_(std::move(cfg)), ds_(std::move(dataset)), rng_(cfg_.seed) {
        if (ds_.labeled.size() == 0) throw data_error("trainer: empty labeled set");
        Rng init_rng(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
        model_ = make_dual_model(ds_.feature_dim, ds_.num_classes, cfg_.hidden_width, init_rng);

        const std::size_t n_l = ds_.labeled.size();
        const std::size_t m_u = cfg_.strategy == Strategy::supervised ? 0 : ds_.unlabeled.size();
        batch_u_ = cfg_.batch_unlabeled;
        if (batch_u_ == 0 && m_u > 0) {
            const std::size_t ratio = (m_u + n_l - 1) / n_l;
            batch_u_ = cfg_.batch_labeled * std::min<std::size_t>(4, std::max<std::size_t>(1, ratio));
        }
        steps_warmup_ = (n_l + cfg_.batch_labeled - 1) / cfg_.batch_labeled;
        steps_joint_ = steps_warmup_;
        if (m_u > 0) steps_joint_ = std::max(steps_joint_, (m_u + batch_u_ - 1) / batch_u_);

        auto tensors = param_tensors(model_);
        std::vector<std::size_t> sizes;
        for (auto& t : tensors) sizes.push_back(t.size());
        AdamwConfig ac;
        ac.lr = cfg_.lr;
        ac.weight_decay = cfg_.weight_decay;
        opt_ = OptimizerState::for_sizes(sizes, ac);
        // warm-up runs at the constant peak lr; the one-cycle schedule covers
        // the joint phase only
        sched_.peak_lr = cfg_.lr;
        sched_.total_steps = static_cast<long long>(cfg_.epochs * steps_joint_);

        report_.config_echo = train_config_to_json(cfg_);
        report_.n_labeled = ds_.labeled.size();
        report_.n_unlabeled = ds_.unlabeled.size();
        report_.n_test = ds_.test.size();
        report_.num_classes = ds_.num_classes;
        report_.feature_dim = ds_.feature_dim;
        report_.patches = ds_.patches;
        report_.degenerate_labeled_classes = ds_.degenerate_labeled_classes;
    }

    const DualModel& model() const { return model_; }
    const EmaState& ema() const { return ema_; }
    bool ema_ready() const { return ema_ready_; }
    const ExperimentReport& report() const { return report_; }
    const TrainConfig& config() const { return cfg_; }
    const SsmllDataset& dataset() const { return ds_; }

    /// Supervised-only phase on the generator pair; the utilizer pair and the
    /// EMA are untouched until it completes.
    void warmup() {
        for (std::size_t e = 1; e <= cfg_.warmup_epochs; ++e) {
            std::vector<std::size_t> order = shuffled_indices(ds_.labeled.size());
            double loss_sum = 0.0;
            for (std::size_t s = 0; s < steps_warmup_; ++s) {
                const std::vector<std::size_t> idx =
                    cyclic_slice(order, s * cfg_.batch_labeled, cfg_.batch_labeled);
                InstanceBlock block = gather_instances(ds_.labeled, idx);
                LabelMatrix labels = gather_rows(ds_.labeled_labels, idx);
                block = augment(block, strong_spec(), rng_);
                InstanceBlock empty;
                const D2lLossResult res =
                    d2l_losses(model_, block, labels, empty, LabelMatrix(), cfg_.alpha, cfg_.loss);
                loss_sum += res.loss_labeled;
                optimizer_step(res.grads, /*warmup=*/true);
            }
            EpochRow row;
            row.epoch = e;
            row.phase = "warmup";
            row.loss_labeled = loss_sum;
            row.monitor = monitor_value();
            report_.epochs.push_back(row);
        }
        if (cfg_.warmup_epochs > 0 && cfg_.init_utilizer_from_generator) model_.util = model_.gen;
        init_ema();
    }

    /// One pass of the joint phase: thresholds re-estimated once, the whole
    /// unlabeled pool pseudo-labeled once, then minibatch updates with the
    /// decoupled loss routing and per-step EMA updates.
    void train_epoch(std::size_t epoch_index) {
        if (!ema_ready_) init_ema();
        EpochRow row;
        row.epoch = epoch_index;
        row.phase = "joint";

        const bool uses_pseudo = cfg_.strategy != Strategy::supervised && ds_.unlabeled.size() > 0;
        LabelMatrix pseudo;
        if (uses_pseudo) {
            ThresholdVector tau;
            std::vector<std::size_t> degenerate;
            ScoreMatrix scores_u;
            switch (cfg_.strategy) {
                case Strategy::mat: {
                    // labeled predictions first, then the threshold search,
                    // then the unlabeled pool is scored and pseudo-labeled
                    const ScoreMatrix scores_l = weak_scores(ds_.labeled);
                    const MatSearchResult r =
                        mat_search(scores_l, ds_.labeled_labels, cfg_.metric,
                                   GridSpec{cfg_.grid_step}, cfg_.mat_threads);
                    tau = r.tau;
                    for (std::size_t k = 0; k < r.degenerate.size(); ++k)
                        if (r.degenerate[k]) degenerate.push_back(k);
                    scores_u = weak_scores(ds_.unlabeled);
                    break;
                }
                case Strategy::cap: {
                    scores_u = weak_scores(ds_.unlabeled);
                    const CapResult r = cap_thresholds(scores_u, ds_.labeled_labels);
                    tau = r.tau;
                    for (std::size_t k = 0; k < r.degenerate.size(); ++k)
                        if (r.degenerate[k]) degenerate.push_back(k);
                    break;
                }
                case Strategy::fixed:
                    tau = fixed_thresholds(cfg_.fixed_tau, ds_.num_classes);
                    scores_u = weak_scores(ds_.unlabeled);
                    break;
                case Strategy::topk:
                case Strategy::supervised:
                    scores_u = weak_scores(ds_.unlabeled);
                    break;
            }
            if (cfg_.strategy == Strategy::topk) {
                pseudo = topk_pseudo_labels(scores_u, std::min(cfg_.topk_k, ds_.num_classes));
            } else {
                pseudo = generate_pseudo_labels(scores_u, tau);
                report_.tau_trace.push_back(tau);
                report_.tau_degenerate.push_back(degenerate);
                row.degenerate_count = degenerate.size();
            }
            const PrF1Summary q = cf1_of1(pseudo, ds_.audit_labels());
            row.pseudo_cf1 = q.cf1;
            row.pseudo_cp = q.class_precision;
            row.pseudo_cr = q.class_recall;
            report_.final_pseudo_cf1 = q.cf1;
        }

        std::vector<std::size_t> order_l = shuffled_indices(ds_.labeled.size());
        std::vector<std::size_t> order_u =
            uses_pseudo ? shuffled_indices(ds_.unlabeled.size()) : std::vector<std::size_t>{};
        double loss_l_sum = 0.0, loss_u_sum = 0.0;
        for (std::size_t s = 0; s < steps_joint_; ++s) {
            const std::vector<std::size_t> li =
                cyclic_slice(order_l, s * cfg_.batch_labeled, cfg_.batch_labeled);
            InstanceBlock block_l = gather_instances(ds_.labeled, li);
            LabelMatrix labels_l = gather_rows(ds_.labeled_labels, li);
            block_l = augment(block_l, strong_spec(), rng_);

            InstanceBlock block_u;
            LabelMatrix pseudo_batch;
            if (uses_pseudo) {
                const std::vector<std::size_t> ui = cyclic_slice(order_u, s * batch_u_, batch_u_);
                block_u = gather_instances(ds_.unlabeled, ui);
                pseudo_batch = gather_rows(pseudo, ui);
                block_u = augment(block_u, strong_spec(), rng_);
            }
            const D2lLossResult res =
                d2l_losses(model_, block_l, labels_l, block_u, pseudo_batch, cfg_.alpha, cfg_.loss);
            loss_l_sum += res.loss_labeled;
            loss_u_sum += res.loss_unlabeled;
            optimizer_step(res.grads, /*warmup=*/false);
            ema_step();
        }
        row.loss_labeled = loss_l_sum;
        row.loss_unlabeled = loss_u_sum;
        row.monitor = monitor_value();
        report_.epochs.push_back(row);
    }

    /// Labeled-set mean per-class F_beta of the generator pair, EMA when
    /// ready, un-augmented features, threshold 0.5. The early-stopping signal.
    double monitor_value() {
        const DualModel m = scoring_model(/*respect_eval_flag=*/false);
        const ScoreMatrix probs = pair_final_probs(m, HeadPair::generator, ds_.labeled, cfg_.alpha);
        const std::vector<ConfusionCounts> counts =
            confusion_counts(binarize(probs, 0.5), ds_.labeled_labels);
        double sum = 0.0;
        for (const ConfusionCounts& c : counts)
            sum += class_metric(c, fbeta_metric(cfg_.metric.beta));
        return counts.empty() ? 0.0 : sum / static_cast<double>(counts.size());
    }

    EvalBundle evaluate_on(const InstanceBlock& split, const LabelMatrix& truth,
                           ScoreMatrix* scores_out = nullptr) {
        return evaluate_model(model_, ema_, ema_ready_ && cfg_.eval_use_ema,
                              cfg_.resolved_eval_heads(), cfg_.alpha, split, truth, scores_out);
    }

    /// Full run: warm-up, joint epochs with early stopping on the monitor,
    /// restore of the best snapshot, final test evaluation.
    ExperimentReport run() {
        const auto t0 = std::chrono::steady_clock::now();
        warmup();
        double best = monitor_value();
        std::size_t best_epoch = 0;
        Snapshot best_snap = snapshot();
        for (std::size_t e = 1; e <= cfg_.epochs; ++e) {
            train_epoch(e);
            report_.epochs_run = e;
            const double mon = report_.epochs.back().monitor;
            if (mon > best) {
                best = mon;
                best_epoch = e;
                best_snap = snapshot();
            } else if (e - best_epoch >= cfg_.patience) {
                report_.stopped_early = true;
                break;
            }
        }
        restore(best_snap);
        report_.best_epoch = best_epoch;
        report_.final_test = evaluate_on(ds_.test, ds_.test_labels, &report_.test_scores);
        report_.wall_time_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return report_;
    }

    /// EMA-materialized copy used for scoring paths (falls back to raw
    /// parameters before the EMA exists or when disabled).
    DualModel scoring_model(bool respect_eval_flag) const {
        const bool use_ema = ema_ready_ && (respect_eval_flag ? cfg_.eval_use_ema : cfg_.use_ema_scores);
        if (!use_ema) return model_;
        return with_tensors(model_, ema_.shadow);
    }

private:
    struct Snapshot {
        std::vector<std::vector<double>> params;
        std::vector<std::vector<double>> shadow;
        long long opt_step = 0;
    };

    Snapshot snapshot() const {
        Snapshot s;
        for (auto t : param_tensors(model_)) s.params.emplace_back(t.begin(), t.end());
        s.shadow = ema_.shadow;
        s.opt_step = opt_.step;
        return s;
    }

    void restore(const Snapshot& s) {
        auto tensors = param_tensors(model_);
        for (std::size_t i = 0; i < tensors.size(); ++i)
            std::copy(s.params[i].begin(), s.params[i].end(), tensors[i].begin());
        ema_.shadow = s.shadow;
    }

    void init_ema() {
        auto tensors = param_tensors(model_);
        std::vector<std::span<const double>> views(tensors.begin(), tensors.end());
        ema_ = EmaState::from(views, cfg_.ema_decay);
        ema_ready_ = true;
    }

    void ema_step() {
        auto tensors = param_tensors(model_);
        std::vector<std::span<const double>> views(tensors.begin(), tensors.end());
        ema_update(ema_, views);
    }

    AugmentSpec weak_spec() const {
        AugmentSpec s = cfg_.aug;
        s.mode = AugmentMode::weak;
        return s;
    }
    AugmentSpec strong_spec() const {
        AugmentSpec s = cfg_.aug;
        s.mode = AugmentMode::strong;
        return s;
    }

    /// Weak-augmented generator-pair probabilities, the pseudo-label and
    /// threshold-estimation path. Fresh augmentation noise every call.
    ScoreMatrix weak_scores(const InstanceBlock& block) {
        const InstanceBlock aug_block = augment(block, weak_spec(), rng_);
        const DualModel m = scoring_model(/*respect_eval_flag=*/false);
        return pair_final_probs(m, HeadPair::generator, aug_block, cfg_.alpha);
    }

    std::vector<std::size_t> shuffled_indices(std::size_t n) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        rng_.shuffle(idx);
        return idx;
    }

    static std::vector<std::size_t> cyclic_slice(const std::vector<std::size_t>& order,
                                                 std::size_t start, std::size_t count) {
        std::vector<std::size_t> out;
        out.reserve(count);
        const std::size_t n = order.size();
        for (std::size_t i = 0; i < count && n > 0; ++i) out.push_back(order[(start + i) % n]);
        return out;
    }

    void optimizer_step(const ModelGrads& grads, bool warmup_phase) {
        opt_.cfg.lr = warmup_phase ? cfg_.lr : sched_.lr_at(joint_steps_done_++);
        auto params = param_tensors(model_);
        auto gview = grad_tensors(grads, model_.backbone.hidden_width > 0);
        std::vector<AdamwBinding> bindings;
        // generator heads + backbone come first in tensor order; the utilizer
        // pair occupies the last four slots and stays untouched in warm-up
        const std::size_t active = warmup_phase ? params.size() - 4 : params.size();
        bindings.reserve(active);
        for (std::size_t i = 0; i < active; ++i) bindings.push_back({i, params[i], gview[i]});
        adamw_step(opt_, bindings);
    }

    TrainConfig cfg_;
    SsmllDataset ds_;
    DualModel model_;
    OptimizerState opt_;
    EmaState ema_;
    bool ema_ready_ = false;
    Rng rng_;
    OneCycleSchedule sched_;
    std::size_t steps_warmup_ = 1;
    std::size_t steps_joint_ = 1;
    std::size_t batch_u_ = 0;
    long long joint_steps_done_ = 0;
    ExperimentReport report_;
};

// ---------------------------------------------------------------------------
// experiment orchestration

inline SsmllDataset materialize_dataset(const DatasetSpec& spec) {
    SynthData data;
    if (!spec.manifest.empty())
        data = load_dataset(spec.manifest);
    else if (spec.has_synth)
        data = generate_synthetic(spec.synth);
    else
        throw config_error("dataset: needs either 'manifest' or 'synth'");
    return split_labeled(data, spec.p, spec.split_seed);
}

inline void write_epoch_traces(const std::string& dir, const ExperimentReport& r) {
    namespace fs = std::filesystem;
    std::ofstream out(fs::path(dir) / "trace_epochs.csv");
    out << "epoch,phase,loss_labeled,loss_unlabeled,monitor,pseudo_cf1,pseudo_cp,pseudo_cr,"
           "degenerate_count\n";
    for (const EpochRow& e : r.epochs) {
        out << e.epoch << ',' << e.phase << ',' << format_g17(e.loss_labeled) << ','
            << format_g17(e.loss_unlabeled) << ',' << format_g17(e.monitor) << ','
            << format_g17(e.pseudo_cf1) << ',' << format_g17(e.pseudo_cp) << ','
            << format_g17(e.pseudo_cr) << ',' << e.degenerate_count << '\n';
    }
    if (!r.tau_trace.empty()) {
        std::ofstream tout(fs::path(dir) / "trace_thresholds.csv");
        tout << "epoch";
        for (std::size_t k = 0; k < r.tau_trace.front().size(); ++k) tout << ",tau_" << k;
        tout << '\n';
        for (std::size_t e = 0; e < r.tau_trace.size(); ++e) {
            tout << (e + 1);
            for (double v : r.tau_trace[e]) tout << ',' << format_g17(v);
            tout << '\n';
        }
    }
}

inline json model_to_json(const DualModel& m, const EmaState& ema, bool ema_ready) {
    json j;
    j["d"] = m.d;
    j["K"] = m.num_classes;
    j["hidden_width"] = m.backbone.hidden_width;
    json params = json::array();
    for (auto t : param_tensors(m)) params.push_back(std::vector<double>(t.begin(), t.end()));
    j["params"] = params;
    if (ema_ready) {
        json shadow = json::array();
        for (const auto& t : ema.shadow) shadow.push_back(t);
        j["ema"] = shadow;
        j["ema_decay"] = ema.decay;
    }
    return j;
}

struct LoadedModel {
    DualModel model;
    EmaState ema;
    bool ema_ready = false;
    json meta;
};

inline LoadedModel model_from_json(const json& j) {
    LoadedModel lm;
    Rng dummy(0);
    lm.model = make_dual_model(j.at("d").get<std::size_t>(), j.at("K").get<std::size_t>(),
                               j.at("hidden_width").get<std::size_t>(), dummy);
    std::vector<std::vector<double>> tensors;
    for (const auto& t : j.at("params")) tensors.push_back(t.get<std::vector<double>>());
    lm.model = with_tensors(lm.model, tensors);
    if (j.contains("ema")) {
        lm.ema.decay = j.value("ema_decay", 0.9997);
        for (const auto& t : j.at("ema")) lm.ema.shadow.push_back(t.get<std::vector<double>>());
        lm.ema_ready = true;
    }
    lm.meta = j.contains("meta") ? j.at("meta") : json::object();
    return lm;
}

/// Run one experiment; when out_dir is non-empty, writes report.json, epoch
/// and threshold traces, test score/label CSVs and model.json there.
inline ExperimentReport run_experiment(const TrainConfig& cfg, const std::string& out_dir = "") {
    Trainer trainer(cfg, materialize_dataset(cfg.dataset));
    ExperimentReport report = trainer.run();
    if (!out_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(out_dir);
        {
            std::ofstream out(fs::path(out_dir) / "report.json");
            if (!out) throw data_error("run_experiment: cannot write report in " + out_dir);
            out << report_to_json(report).dump(2) << "\n";
        }
        write_epoch_traces(out_dir, report);
        save_matrix((fs::path(out_dir) / "scores_test.csv").string(), report.test_scores);
        save_matrix((fs::path(out_dir) / "labels_test.csv").string(), trainer.dataset().test_labels);
        json mj = model_to_json(trainer.model(), trainer.ema(), trainer.ema_ready());
        json meta;
        meta["alpha"] = cfg.alpha;
        meta["n"] = trainer.dataset().patches;
        meta["p"] = cfg.dataset.p;
        meta["split_seed"] = cfg.dataset.split_seed;
        meta["eval_use_ema"] = cfg.eval_use_ema;
        meta["eval_heads"] = train_config_to_json(cfg)["eval_heads"];
        if (cfg.dataset.has_synth)
            meta["dataset_config_hash"] = config_hash(synth_config_to_json(cfg.dataset.synth));
        mj["meta"] = meta;
        std::ofstream mout(fs::path(out_dir) / "model.json");
        mout << mj.dump() << "\n";
    }
    return report;
}

// ---------------------------------------------------------------------------
// sweep / comparison runner

struct SweepRun {
    std::string name;
    json overrides;
};

struct SweepSpec {
    std::string name = "sweep";
    json base;  // full train-config json including "dataset"
    std::vector<SweepRun> runs;
    std::vector<std::uint64_t> seeds;
    bool reseed_split = true;  // seed also selects the labeled/unlabeled split
};

inline SweepSpec sweep_from_json(const json& j) {
    if (!j.is_object()) throw config_error("sweep root: expected an object");
    SweepSpec s;
    s.name = cfgdetail::str(j, "name", "sweep", "sweep.");
    if (!j.contains("base")) throw config_error("sweep.base: missing");
    s.base = j.at("base");
    if (!j.contains("runs") || !j.at("runs").is_array())
        throw config_error("sweep.runs: expected an array");
    for (const auto& rj : j.at("runs")) {
        SweepRun r;
        r.name = cfgdetail::str(rj, "name", "run", "sweep.runs[].");
        r.overrides = rj.contains("overrides") ? rj.at("overrides") : json::object();
        s.runs.push_back(r);
    }
    if (j.contains("seeds"))
        s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    else
        s.seeds = {1};
    s.reseed_split = cfgdetail::boolean(j, "reseed_split", true, "sweep.");
    return s;
}

struct SweepRowResult {
    std::string run_name;
    std::uint64_t seed = 0;
    ExperimentReport report;
};

/// Execute every run x seed combination. Identical dataset specs are
/// generated once and shared; the seed selects the split and the training
/// stream, so strategies are compared on paired splits.
inline std::vector<SweepRowResult> run_sweep(const SweepSpec& spec,
                                             const std::string& out_dir = "") {
    std::map<std::string, SynthData> dataset_cache;
    std::vector<SweepRowResult> rows;
    for (const SweepRun& run : spec.runs) {
        for (std::uint64_t seed : spec.seeds) {
            json cj = spec.base;
            cj.merge_patch(run.overrides);
            cj["seed"] = seed;
            if (spec.reseed_split) cj["dataset"]["split_seed"] = seed;
            const TrainConfig cfg = train_config_from_json(cj);

            SsmllDataset ds;
            if (!cfg.dataset.manifest.empty()) {
                ds = materialize_dataset(cfg.dataset);
            } else {
                const std::string key = synth_config_to_json(cfg.dataset.synth).dump();
                auto it = dataset_cache.find(key);
                if (it == dataset_cache.end())
                    it = dataset_cache.emplace(key, generate_synthetic(cfg.dataset.synth)).first;
                ds = split_labeled(it->second, cfg.dataset.p, cfg.dataset.split_seed);
            }
            Trainer trainer(cfg, std::move(ds));
            SweepRowResult row;
            row.run_name = run.name;
            row.seed = seed;
            row.report = trainer.run();
            if (!out_dir.empty()) {
                namespace fs = std::filesystem;
                const std::string sub =
                    (fs::path(out_dir) / (run.name + "_seed" + std::to_string(seed))).string();
                fs::create_directories(sub);
                std::ofstream out(fs::path(sub) / "report.json");
                out << report_to_json(row.report).dump(2) << "\n";
                write_epoch_traces(sub, row.report);
            }
            rows.push_back(std::move(row));
        }
    }
    if (!out_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(out_dir);
        std::ofstream out(fs::path(out_dir) / "comparison.csv");
        out << "run,seed,test_map,test_cf1,test_of1,final_pseudo_cf1,best_epoch,epochs_run\n";
        for (const SweepRowResult& r : rows) {
            out << r.run_name << ',' << r.seed << ',' << format_g17(r.report.final_test.map) << ','
                << format_g17(r.report.final_test.cf1) << ',' << format_g17(r.report.final_test.of1)
                << ',' << format_g17(r.report.final_pseudo_cf1) << ',' << r.report.best_epoch << ','
                << r.report.epochs_run << '\n';
        }
        // mean/std per run
        std::ofstream sout(fs::path(out_dir) / "summary.csv");
        sout << "run,n_seeds,mean_map,std_map,mean_cf1,mean_of1,mean_final_pseudo_cf1\n";
        std::vector<std::string> seen;
        for (const SweepRowResult& r : rows) {
            if (std::find(seen.begin(), seen.end(), r.run_name) != seen.end()) continue;
            seen.push_back(r.run_name);
            std::vector<double> maps, cf1s, of1s, pcf1s;
            for (const SweepRowResult& q : rows) {
                if (q.run_name != r.run_name) continue;
                maps.push_back(q.report.final_test.map);
                cf1s.push_back(q.report.final_test.cf1);
                of1s.push_back(q.report.final_test.of1);
                if (std::isfinite(q.report.final_pseudo_cf1))
                    pcf1s.push_back(q.report.final_pseudo_cf1);
            }
            auto mean = [](const std::vector<double>& v) {
                return v.empty() ? std::numeric_limits<double>::quiet_NaN()
                                 : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
            };
            const double mu = mean(maps);
            double var = 0.0;
            for (double v : maps) var += (v - mu) * (v - mu);
            const double sd = maps.size() > 1 ? std::sqrt(var / (maps.size() - 1)) : 0.0;
            sout << r.run_name << ',' << maps.size() << ',' << format_g17(mu) << ','
                 << format_g17(sd) << ',' << format_g17(mean(cf1s)) << ',' << format_g17(mean(of1s))
                 << ',' << format_g17(mean(pcf1s)) << '\n';
        }
    }
    return rows;
}

}  // namespace ssmll

// pgcnet command-line tool: train, predict, evaluate, synth.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pgcnet/checkpoint.hpp"
#include "pgcnet/config.hpp"
#include "pgcnet/data_io.hpp"
#include "pgcnet/evaluation.hpp"
#include "pgcnet/inference.hpp"
#include "pgcnet/synth.hpp"
#include "pgcnet/training.hpp"

namespace fs = std::filesystem;
using namespace pgcnet;

namespace {

constexpr const char* kOutputRootEnv = "PGCNET_OUTPUT_ROOT";

int exit_code(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::kConfig:
        case ErrorCategory::kParameter:
            return 2;
        case ErrorCategory::kData:
        case ErrorCategory::kFormat:
        case ErrorCategory::kShape:
        case ErrorCategory::kIo:
            return 3;
        case ErrorCategory::kNumerical:
            return 4;
    }
    return 1;
}

// Relative output paths are placed under $PGCNET_OUTPUT_ROOT when it is set.
fs::path resolve_output(const std::string& dir) {
    fs::path p(dir);
    if (p.is_relative()) {
        if (const char* root = std::getenv(kOutputRootEnv); root && *root) p = fs::path(root) / p;
    }
    return p;
}

std::string timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

Json run_record(const std::string& command, const std::vector<std::string>& argv) {
    return Json{{"command", command}, {"argv", argv}, {"started", timestamp()}, {"build", build_info()}};
}

Json report_json(const MetricsReport& r) {
    Json j{{"bad1", r.bad1}, {"bad3", r.bad3}, {"bad5", r.bad5}, {"mae", r.mae}, {"rmse", r.rmse},
           {"n_valid", r.n_valid}};
    if (r.mean_aleatoric_px) j["mean_aleatoric_px"] = *r.mean_aleatoric_px;
    if (r.mean_epistemic_px) j["mean_epistemic_px"] = *r.mean_epistemic_px;
    if (r.mean_combined_px) j["mean_combined_px"] = *r.mean_combined_px;
    return j;
}

Grid<float> to_float(const Grid<double>& g) { return g.cast<float>(); }

Grid<double> crop_grid(const Grid<double>& g, int h, int w) {
    Grid<double> out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out(y, x) = g(y, x);
    return out;
}

// ---------------------------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
    std::string resume;
    int log_every = 100;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv) {
    Json j = a.config.empty() ? Json(TrainConfig{}) : read_json_file(a.config);
    for (const auto& o : a.overrides) apply_override(j, o);
    TrainConfig cfg;
    try {
        cfg = j.get<TrainConfig>();
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (!a.out.empty()) cfg.output_dir = a.out;
    if (cfg.output_dir.empty()) cfg.output_dir = "train_run";
    const fs::path out = resolve_output(cfg.output_dir);
    cfg.output_dir = out.string();
    cfg.validate();
    fs::create_directories(out);

    Json record = run_record("train", argv);
    record["config"] = cfg;
    record["seed"] = cfg.seed;
    write_json(out / "config.json", Json(cfg));
    write_json(out / "run.json", record);

    std::optional<TrainSession> session;
    if (a.resume.empty()) {
        session.emplace(cfg);
    } else {
        session.emplace(cfg, load_checkpoint(a.resume));
    }
    std::ofstream log(out / "loss_log.csv", a.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw IoError("cannot write '" + (out / "loss_log.csv").string() + "'");
    log << std::setprecision(17);
    if (a.resume.empty()) {
        log << "step,epoch,sample,regression,kl,kl_weight,total,crop_mae,mean_log_variance,min_log_variance\n";
    }
    const auto result = session->run([&](const StepRecord& r) {
        log << r.step << ',' << r.epoch << ',' << r.sample << ',' << r.loss.regression << ',' << r.loss.kl << ','
            << r.loss.kl_weight << ',' << r.loss.total << ',' << r.crop_mae << ',' << r.mean_log_variance << ','
            << r.min_log_variance << '\n';
        if (a.log_every > 0 && (r.step + 1) % a.log_every == 0) {
            std::cerr << "step " << r.step + 1 << " epoch " << r.epoch << " loss " << r.loss.total << " regression "
                      << r.loss.regression << " crop_mae " << r.crop_mae << "\n";
        }
    });
    log.close();

    record["finished"] = timestamp();
    record["steps"] = result.steps;
    record["epochs_completed"] = result.epochs_completed;
    record["seconds"] = result.seconds;
    record["checkpoint"] = (out / "checkpoint.bin").string();
    record["checkpoint_digest"] = file_digest(out / "checkpoint.bin");
    if (result.validation) {
        record["validation"] = report_json(*result.validation);
        write_json(out / "metrics.json", record["validation"]);
        std::cout << format_report_table({{"validation", *result.validation}});
    }
    write_json(out / "run.json", record);
    std::cout << "trained " << result.steps << " steps in " << std::fixed << std::setprecision(1) << result.seconds
              << " s; checkpoint " << (out / "checkpoint.bin").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------------------------
// predict

struct PredictArgs {
    std::string checkpoint;
    std::string left, right, stem;
    std::string dataset;
    std::vector<std::string> dataset_overrides;
    int limit = 0;
    int passes = 50;
    std::uint64_t seed = 0;
    std::string out = "predictions";
};

void predict_one(Network<float>& net, const StereoSample& raw, const std::string& stem, int passes,
                 std::uint64_t seed, const fs::path& out, const Json& meta_base) {
    // Reflection-pad to the network's size multiple, then crop the maps back.
    const StereoSample padded = reflect_pad(raw, net.config().size_multiple());
    const UncertainDisparity u = mc_predict(net, padded, passes, seed);
    const UncertaintyStddev sd = uncertainty_stddev_maps(u);
    const int h = raw.height(), w = raw.width();
    write_pfm(out / (stem + "_disparity.pfm"), to_float(crop_grid(u.mean_disparity, h, w)));
    write_pfm(out / (stem + "_aleatoric.pfm"), to_float(crop_grid(sd.aleatoric, h, w)));
    write_pfm(out / (stem + "_epistemic.pfm"), to_float(crop_grid(sd.epistemic, h, w)));
    write_pfm(out / (stem + "_combined.pfm"), to_float(crop_grid(sd.combined, h, w)));
    Json meta = meta_base;
    meta["stem"] = stem;
    meta["T"] = passes;
    meta["seed"] = seed;
    meta["width"] = w;
    meta["height"] = h;
    meta["padded_width"] = padded.width();
    meta["padded_height"] = padded.height();
    meta["units"] = "px; uncertainty maps hold standard deviations";
    write_json(out / (stem + "_meta.json"), meta);
}

int cmd_predict(const PredictArgs& a, const std::vector<std::string>& argv) {
    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    Network<float> net = network_from_checkpoint(ckpt);
    const fs::path out = resolve_output(a.out);
    fs::create_directories(out);
    Json meta{{"checkpoint", fs::absolute(a.checkpoint).string()},
              {"checkpoint_digest", file_digest(a.checkpoint)},
              {"network", ckpt.network},
              {"build", build_info()}};
    Json record = run_record("predict", argv);
    record["seed"] = a.seed;
    record["T"] = a.passes;
    record["checkpoint_digest"] = meta["checkpoint_digest"];
    std::vector<std::string> stems;
    if (!a.left.empty() || !a.right.empty()) {
        if (a.left.empty() || a.right.empty()) throw ConfigError("predict: --left and --right go together");
        StereoSample s;
        s.left = read_image(a.left, ckpt.network.in_channels);
        s.right = read_image(a.right, ckpt.network.in_channels);
        s.name = a.stem.empty() ? fs::path(a.left).stem().string() : a.stem;
        s.validate();
        predict_one(net, s, s.name, a.passes, a.seed, out, meta);
        stems.push_back(s.name);
    } else if (!a.dataset.empty()) {
        Json j = read_json_file(a.dataset);
        for (const auto& o : a.dataset_overrides) apply_override(j, o);
        const Dataset data(j.get<DatasetSpec>());
        record["dataset"] = data.spec();
        const std::size_t n = a.limit > 0 ? std::min<std::size_t>(a.limit, data.size()) : data.size();
        for (std::size_t i = 0; i < n; ++i) {
            const StereoSample s = data.load(i);
            predict_one(net, s, data.stem(i), a.passes, derive_seed(a.seed, i), out, meta);
            stems.push_back(data.stem(i));
        }
    } else {
        throw ConfigError("predict: give --left/--right or --dataset");
    }
    record["stems"] = stems;
    record["finished"] = timestamp();
    write_json(out / "predict_run.json", record);
    std::cout << "wrote " << stems.size() << " prediction(s) to " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
    std::string predictions;
    std::string gt_dir;
    std::string dataset;
    std::string out = "evaluation";
    int steps = 100;
    int bins = 50;
    double error_max = 0.0;
    double sigma_max = 0.0;
};

std::optional<DisparityMap> find_ground_truth(const fs::path& dir, const std::string& stem) {
    for (const auto& rel : {stem + ".pfm", "disparity/" + stem + ".pfm", stem + "_disparity.pfm"}) {
        if (fs::exists(dir / rel)) return load_pfm_disparity(dir / rel);
    }
    for (const auto& rel : {stem + ".png", "disp_occ_0/" + stem + ".png"}) {
        if (fs::exists(dir / rel)) return load_kitti_disparity(dir / rel);
    }
    return std::nullopt;
}

std::optional<Grid<double>> load_map(const fs::path& path) {
    if (!fs::exists(path)) return std::nullopt;
    return read_pfm(path).plane().cast<double>();
}

int cmd_evaluate(const EvaluateArgs& a, const std::vector<std::string>& argv) {
    const fs::path pred(a.predictions);
    if (!fs::is_directory(pred)) throw IoError("prediction directory '" + pred.string() + "' not found");
    // <stem>_disparity.pfm as written by predict; plain <stem>.pfm when there are none.
    auto collect = [&](const std::string& suffix) {
        std::vector<std::string> found;
        for (const auto& e : fs::directory_iterator(pred)) {
            const std::string name = e.path().filename().string();
            if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
                found.push_back(name.substr(0, name.size() - suffix.size()));
        }
        std::sort(found.begin(), found.end());
        return found;
    };
    std::string suffix = "_disparity.pfm";
    std::vector<std::string> stems = collect(suffix);
    if (stems.empty()) {
        suffix = ".pfm";
        stems = collect(suffix);
    }

    std::map<std::string, DisparityMap> gts;
    std::vector<std::string> missing;
    if (!a.dataset.empty()) {
        const Dataset data(read_json_file(a.dataset).get<DatasetSpec>());
        std::map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < data.size(); ++i) index[data.stem(i)] = i;
        for (const auto& s : stems) {
            if (auto it = index.find(s); it != index.end()) {
                const StereoSample smp = data.load(it->second);
                gts[s] = DisparityMap{smp.gt_disparity, smp.valid_mask};
            }
        }
        for (const auto& [s, _] : index)
            if (!std::binary_search(stems.begin(), stems.end(), s)) missing.push_back(s + " (no prediction)");
    } else if (!a.gt_dir.empty()) {
        for (const auto& s : stems)
            if (auto g = find_ground_truth(a.gt_dir, s)) gts[s] = std::move(*g);
    } else {
        throw ConfigError("evaluate: give --gt-dir or --dataset");
    }
    for (const auto& s : stems)
        if (!gts.count(s)) missing.push_back(s + " (no ground truth)");
    for (const auto& m : missing) std::cerr << "warning: skipping " << m << "\n";
    if (gts.empty()) throw DataError("evaluate: no prediction/ground-truth pairs found");

    const fs::path out = resolve_output(a.out);
    fs::create_directories(out);
    MetricsAccumulator total;
    Json per_image = Json::array();
    std::vector<std::pair<std::string, MetricsReport>> rows;
    std::vector<double> err_all, ale_all, epi_all, com_all;
    bool have_uncertainty = true;
    for (const auto& [stem, gt] : gts) {
        const Grid<double> d = read_pfm(pred / (stem + suffix)).plane().cast<double>();
        if (!d.same_shape(gt.disparity)) {
            throw ShapeError("prediction '" + stem + "' is " + std::to_string(d.width()) + "x" +
                             std::to_string(d.height()) + " but ground truth is " +
                             std::to_string(gt.disparity.width()) + "x" + std::to_string(gt.disparity.height()));
        }
        const auto ale = load_map(pred / (stem + "_aleatoric.pfm"));
        const auto epi = load_map(pred / (stem + "_epistemic.pfm"));
        const auto com = load_map(pred / (stem + "_combined.pfm"));
        const bool has_u = ale && epi && com;
        have_uncertainty = have_uncertainty && has_u;
        MetricsAccumulator acc;
        const Mask valid = effective_mask(gt.disparity, gt.valid);
        for (std::size_t i = 0; i < valid.size(); ++i) {
            if (!valid[i]) continue;
            const double e = std::abs(d[i] - gt.disparity[i]);
            acc.add(e);
            err_all.push_back(e);
            if (has_u) {
                acc.add_uncertainty((*ale)[i], (*epi)[i], (*com)[i]);
                ale_all.push_back((*ale)[i]);
                epi_all.push_back((*epi)[i]);
                com_all.push_back((*com)[i]);
            }
        }
        if (acc.n == 0) {
            std::cerr << "warning: " << stem << " has no valid ground truth\n";
            continue;
        }
        const MetricsReport r = acc.report();
        Json row = report_json(r);
        row["stem"] = stem;
        per_image.push_back(row);
        rows.emplace_back(stem, r);
        total.merge(acc);
    }
    if (total.n == 0) throw DataError("evaluate: no valid ground-truth pixels");
    const MetricsReport agg = total.report();
    rows.emplace_back("aggregate", agg);

    Json report{{"per_image", per_image}, {"aggregate", report_json(agg)}, {"missing", missing}};
    report["record"] = run_record("evaluate", argv);
    if (have_uncertainty) {
        const int n = static_cast<int>(err_all.size());
        auto as_grid = [n](const std::vector<double>& v) {
            Grid<double> g(1, n);
            std::copy(v.begin(), v.end(), g.values().begin());
            return g;
        };
        const Grid<double> err = as_grid(err_all);
        const Mask all(1, n, 1);
        Json ause;
        for (const auto& [name, values] : {std::pair{"combined", &com_all}, std::pair{"aleatoric", &ale_all},
                                           std::pair{"epistemic", &epi_all}}) {
            const SparsificationCurve c = sparsification(err, as_grid(*values), all, a.steps);
            write_text(out / (std::string("sparsification_") + name + ".csv"), curve_to_csv(c));
            ause[name] = c.ause;
        }
        report["ause"] = ause;
        report["ause_note"] = "AUSE is an extension to the sparsification protocol (mean gap to the oracle curve)";
        const Histogram2D h =
            error_uncertainty_histogram(err, as_grid(com_all), all, a.bins, a.bins, a.error_max, a.sigma_max);
        write_text(out / "histogram_error_vs_combined.csv", histogram_to_csv(h));
    } else {
        std::cerr << "warning: uncertainty maps incomplete; sparsification and histogram files skipped\n";
    }
    write_json(out / "report.json", report);
    const std::string table = format_report_table(rows);
    write_text(out / "report.txt", table);
    std::cout << table;
    return 0;
}

// ---------------------------------------------------------------------------------------------
// synth

struct SynthArgs {
    std::string out = "synthetic";
    int count = 10;
    std::uint64_t seed = 0;
    std::string split = "train";
    std::string params;
    std::vector<std::string> overrides;
};

int cmd_synth(const SynthArgs& a, const std::vector<std::string>& argv) {
    Json pj = a.params.empty() ? Json(SynthParams{}) : read_json_file(a.params);
    for (const auto& o : a.overrides) apply_override(pj, o);
    if (a.count < 0) throw ParameterError("synth: count must be >= 0");
    DatasetSpec spec;
    spec.kind = DatasetKind::kSynthetic;
    spec.synth = pj.get<SynthParams>();
    spec.synth.validate();
    spec.count = a.count;
    spec.seed = a.seed;
    spec.split = parse_split(a.split);
    const Dataset data(spec);

    const fs::path out = resolve_output(a.out);
    for (const char* sub : {"left", "right", "disparity"}) fs::create_directories(out / sub);
    std::vector<std::string> stems;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const StereoSample s = data.load(i);
        const std::string& stem = data.stem(i);
        write_image(out / "left" / (stem + ".png"), s.left);
        write_image(out / "right" / (stem + ".png"), s.right);
        save_pfm_disparity(out / "disparity" / (stem + ".pfm"), s.gt_disparity, s.valid_mask);
        stems.push_back(stem);
    }
    Json manifest{{"generator", "pgcnet synth"}, {"params", spec.synth}, {"seed", spec.seed},
                  {"split", to_string(spec.split)}, {"count", spec.count}, {"stems", stems},
                  {"layout", {{"left", "left/<stem>.png"}, {"right", "right/<stem>.png"},
                              {"disparity", "disparity/<stem>.pfm (px, +inf where invalid)"}}},
                  {"record", run_record("synth", argv)}};
    write_json(out / "manifest.json", manifest);
    std::cout << "wrote " << stems.size() << " pairs to " << out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::string> args(argv, argv + argc);
    CLI::App app{"Probabilistic stereo matching with aleatoric and epistemic uncertainty"};
    app.require_subcommand(1);
    app.set_version_flag("--version", PGCNET_VERSION);

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train a network from a JSON config");
    train->add_option("-c,--config", ta.config, "JSON training config (defaults when omitted)");
    train->add_option("-s,--set", ta.overrides, "Override a config value, e.g. network.max_disparity=32");
    train->add_option("-o,--out", ta.out, "Output directory (relative paths go under $PGCNET_OUTPUT_ROOT)");
    train->add_option("--resume", ta.resume, "Continue from a checkpoint written by train");
    train->add_option("--log-every", ta.log_every, "Progress line every N steps (0 = silent)");

    PredictArgs pa;
    auto* predict = app.add_subcommand("predict", "Monte-Carlo disparity and uncertainty maps");
    predict->add_option("-k,--checkpoint", pa.checkpoint, "Checkpoint file")->required();
    predict->add_option("--left", pa.left, "Left image (PNG)");
    predict->add_option("--right", pa.right, "Right image (PNG)");
    predict->add_option("--stem", pa.stem, "Output name for a single pair (default: left file stem)");
    predict->add_option("--dataset", pa.dataset, "JSON dataset spec to predict instead of a single pair");
    predict->add_option("--set", pa.dataset_overrides, "Override a dataset spec value");
    predict->add_option("--limit", pa.limit, "Predict only the first N dataset pairs");
    predict->add_option("-T,--passes", pa.passes, "Stochastic forward passes")->check(CLI::PositiveNumber);
    predict->add_option("--seed", pa.seed, "Master seed for the weight draws");
    predict->add_option("-o,--out", pa.out, "Output directory");

    EvaluateArgs ea;
    auto* evaluate = app.add_subcommand("evaluate", "Accuracy and uncertainty metrics for a prediction directory");
    evaluate->add_option("-p,--predictions", ea.predictions, "Directory with <stem>_disparity.pfm files")->required();
    evaluate->add_option("--gt-dir", ea.gt_dir, "Ground truth directory (<stem>.pfm, disparity/<stem>.pfm or KITTI PNG)");
    evaluate->add_option("--dataset", ea.dataset, "JSON dataset spec providing ground truth");
    evaluate->add_option("-o,--out", ea.out, "Report directory");
    evaluate->add_option("--steps", ea.steps, "Sparsification density steps")->check(CLI::PositiveNumber);
    evaluate->add_option("--bins", ea.bins, "Histogram bins per axis")->check(CLI::PositiveNumber);
    evaluate->add_option("--error-max", ea.error_max, "Histogram error range in px (0 = data maximum)");
    evaluate->add_option("--sigma-max", ea.sigma_max, "Histogram stddev range in px (0 = data maximum)");

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "Write a random-dot stereogram dataset to disk");
    synth->add_option("-o,--out", sa.out, "Output directory");
    synth->add_option("-n,--count", sa.count, "Number of pairs");
    synth->add_option("--seed", sa.seed, "Master seed");
    synth->add_option("--split", sa.split, "Split tag mixed into the seed: train, val or test");
    synth->add_option("--params", sa.params, "JSON generator parameters");
    synth->add_option("--set", sa.overrides, "Override a generator parameter, e.g. domain_shift=texture_swap");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    try {
        if (*train) return cmd_train(ta, args);
        if (*predict) return cmd_predict(pa, args);
        if (*evaluate) return cmd_evaluate(ea, args);
        if (*synth) return cmd_synth(sa, args);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.category());
    } catch (const Json::exception& e) {
        std::cerr << "error: configuration: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

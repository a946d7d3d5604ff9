// Command-line front end: dataset generation, training, evaluation,
// ablation grids, ERF analysis and model inspection.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "urwkv/config.hpp"
#include "urwkv/erf.hpp"

namespace fs = std::filesystem;
using namespace urwkv;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

std::string read_text_file(const std::string& path) {
    std::ifstream f(path);
    if (!f.good()) throw ConfigError("cannot open config file '" + path + "'");
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    check(f.good(), "cannot open '" + path + "' for writing");
    f << text;
}

std::vector<SegSample<float>> load_samples(const DataSpec& spec) {
    try {
        if (spec.synthetic) return gen_synthetic<float>(spec.seed, spec.count, spec.size);
        return load_dataset<float>(spec.dir);
    } catch (const std::exception& e) {
        throw DataError(e.what());
    }
}

void check_samples_fit(const std::vector<SegSample<float>>& samples, const ModelConfig& mc) {
    if (samples.empty()) throw DataError("dataset is empty");
    for (const auto& s : samples) {
        if (s.h != mc.input_size || s.w != mc.input_size || s.channels != mc.input_channels)
            throw DataError("sample '" + s.id + "' has shape " + std::to_string(s.channels) + "x" +
                            std::to_string(s.h) + "x" + std::to_string(s.w) + " but the model expects " +
                            std::to_string(mc.input_channels) + "x" + std::to_string(mc.input_size) + "x" +
                            std::to_string(mc.input_size));
    }
}

std::string history_csv(const std::vector<EpochStats>& history) {
    std::string out = "epoch,loss,dice,iou\n";
    char buf[128];
    for (const auto& row : history) {
        std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g\n", static_cast<long long>(row.epoch), row.train_loss,
                      row.val_dice, row.val_iou);
        out += buf;
    }
    return out;
}

int cmd_gen_data(std::uint64_t seed, std::int64_t count, std::int64_t size, const std::string& out_dir) {
    auto samples = gen_synthetic<float>(seed, count, size);
    fs::create_directories(out_dir);
    write_dataset(out_dir, samples);
    nlohmann::json manifest{{"generator", "ellipse-union"}, {"seed", seed}, {"count", count}, {"size", size},
                            {"noise_sigma", 0.05}};
    write_text_file((fs::path(out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
    std::cout << "wrote " << samples.size() << " image/mask pairs to " << out_dir << "\n";
    return 0;
}

struct TrainOutputs {
    RunConfig cfg;
    TrainResult<float> result;
};

TrainOutputs run_training(const RunConfig& cfg, const std::string& out_dir) {
    auto samples = load_samples(cfg.data);
    check_samples_fit(samples, cfg.model);
    auto model = build<float>(cfg.model);

    fs::create_directories(out_dir);
    write_text_file((fs::path(out_dir) / "resolved-config.json").string(), run_config_to_json(cfg).dump(2) + "\n");

    TrainOutputs out{cfg, {}};
    out.result = train(model, samples, cfg.train);

    write_text_file((fs::path(out_dir) / "history.csv").string(), history_csv(out.result.history));
    save_model((fs::path(out_dir) / "last.urwk").string(), model);
    if (!out.result.best_state.empty()) {
        apply_state(model, out.result.best_state);
    }
    save_model((fs::path(out_dir) / "best.urwk").string(), model);
    return out;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
    auto cfg = parse_run_config_text(read_text_file(config_path));
    auto out = run_training(cfg, out_dir);
    for (const auto& row : out.result.history) {
        std::cout << "epoch " << row.epoch << "  loss " << row.train_loss << "  val dice " << row.val_dice
                  << "  val iou " << row.val_iou << "\n";
    }
    std::cout << "artifacts in " << out_dir << "\n";
    return 0;
}

nlohmann::json metrics_json(const EvalMetrics& m) {
    nlohmann::json j;
    j["dice"] = m.dice;
    j["iou"] = m.iou;
    if (m.hd95_defined > 0) {
        j["hd95"] = m.hd95;
    } else {
        j["hd95"] = nullptr;
    }
    j["n"] = m.n;
    return j;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& config_path,
             const std::string& out_path) {
    Model<float> model = [&] {
        try {
            return load_model<float>(checkpoint);
        } catch (const std::exception& e) {
            throw DataError(e.what());
        }
    }();

    DataSpec spec;
    std::vector<std::int64_t> val;
    const std::vector<std::int64_t>* subset = nullptr;
    if (!config_path.empty()) {
        auto cfg = parse_run_config_text(read_text_file(config_path));
        spec = cfg.data;
        if (!data_dir.empty()) {
            spec.synthetic = false;
            spec.dir = data_dir;
        }
        auto samples = load_samples(spec);
        check_samples_fit(samples, model.cfg);
        auto split = make_split(static_cast<std::int64_t>(samples.size()), cfg.train.split, cfg.train.seed);
        val = split.val;
        subset = &val;
        auto metrics = evaluate(model, samples, subset, /*with_hd95=*/true);
        auto j = metrics_json(metrics);
        std::cout << j.dump(2) << "\n";
        if (!out_path.empty()) write_text_file(out_path, j.dump(2) + "\n");
        return 0;
    }
    if (data_dir.empty()) throw ConfigError("eval: need --data or --config");
    spec.synthetic = false;
    spec.dir = data_dir;
    auto samples = load_samples(spec);
    check_samples_fit(samples, model.cfg);
    auto metrics = evaluate(model, samples, nullptr, /*with_hd95=*/true);
    auto j = metrics_json(metrics);
    std::cout << j.dump(2) << "\n";
    if (!out_path.empty()) write_text_file(out_path, j.dump(2) + "\n");
    return 0;
}

int cmd_erf(const std::vector<std::string>& checkpoints, const std::string& out_dir, std::vector<double> grid,
            std::int64_t probe_count, std::uint64_t probe_seed, bool untrained) {
    check(!checkpoints.empty() && checkpoints.size() <= 2, "erf: give one or two --checkpoint files");
    if (grid.empty()) grid = {0.50, 0.90, 0.95, 0.99};
    fs::create_directories(out_dir);

    std::vector<std::string> names;
    std::vector<std::vector<double>> ratio_cols;
    for (std::size_t i = 0; i < checkpoints.size(); ++i) {
        Model<float> model = [&] {
            try {
                auto m = load_model<float>(checkpoints[i]);
                if (untrained) return build<float>(m.cfg);  // probe the initialization instead
                return m;
            } catch (const std::exception& e) {
                throw DataError(e.what());
            }
        }();
        Rng rng(probe_seed);
        auto probes = Tensor<float>::randn({probe_count, model.cfg.input_channels, model.cfg.input_size,
                                            model.cfg.input_size},
                                           rng);
        auto map = erf_map(model, probes);
        const std::string name = "model" + std::to_string(i + 1);
        names.push_back(name);
        write_heatmap_png(map, (fs::path(out_dir) / ("erf_" + name + ".png")).string());
        std::vector<double> col;
        for (double t : grid) col.push_back(high_contribution_ratio(map, t));
        ratio_cols.push_back(std::move(col));
    }
    write_ratio_csv((fs::path(out_dir) / "ratios.csv").string(), names, grid, ratio_cols);
    for (std::size_t i = 0; i < names.size(); ++i) {
        std::cout << names[i] << " (" << checkpoints[i] << "):";
        for (std::size_t g = 0; g < grid.size(); ++g)
            std::cout << "  ratio@" << grid[g] << " = " << ratio_cols[i][g];
        std::cout << "\n";
    }
    std::cout << "artifacts in " << out_dir << "\n";
    return 0;
}

int cmd_info(const std::string& config_path, const std::string& checkpoint, const std::string& json_out) {
    ModelConfig mc;
    if (!config_path.empty()) {
        mc = parse_run_config_text(read_text_file(config_path)).model;
    } else if (!checkpoint.empty()) {
        try {
            mc = load_model<float>(checkpoint).cfg;
        } catch (const std::exception& e) {
            throw DataError(e.what());
        }
    } else {
        throw ConfigError("info: need --config or --checkpoint");
    }
    auto model = build<float>(mc);
    const auto params = param_count(model);
    const auto rep = flops_estimate(model, {mc.input_channels, mc.input_size, mc.input_size});

    nlohmann::json j;
    j["params"] = params;
    j["macs"] = rep.total;
    j["input_size"] = mc.input_size;
    j["variant"] = mc.variant;
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& [name, macs] : rep.per_stage) stages.push_back({{"stage", name}, {"macs", macs}});
    j["stages"] = stages;

    std::cout << "parameters: " << params << "\n";
    std::cout << "MACs/sample @ " << mc.input_size << "x" << mc.input_size << ": " << rep.total << "\n";
    std::cout << "stage table:\n";
    for (const auto& [name, macs] : rep.per_stage)
        std::cout << "  " << name << "  " << macs << "\n";
    if (!json_out.empty()) write_text_file(json_out, j.dump(2) + "\n");
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir, int jobs) {
    auto base = parse_run_config_text(read_text_file(config_path));
    fs::create_directories(out_dir);

    struct Row {
        std::string label;
        Ablation ab;
    };
    const ScanDirection LR = ScanDirection::LR, RL = ScanDirection::RL, TB = ScanDirection::TB,
                        BT = ScanDirection::BT;
    auto dirs = [](std::vector<ScanDirection> v) {
        Ablation a;
        a.direction_subset = std::move(v);
        return a;
    };
    std::vector<Row> rows = {
        {"LR", dirs({LR})},
        {"RL", dirs({RL})},
        {"TB", dirs({TB})},
        {"BT", dirs({BT})},
        {"LR+RL", dirs({LR, RL})},
        {"TB+BT", dirs({TB, BT})},
        {"LR+TB", dirs({LR, TB})},
        {"RL+BT", dirs({RL, BT})},
        {"no_dual_rwkv", [] { Ablation a; a.dual_rwkv = false; return a; }()},
        {"no_darm", [] { Ablation a; a.darm = false; return a; }()},
        {"no_sase", [] { Ablation a; a.sase = false; return a; }()},
        {"full", Ablation{}},
    };

    auto samples = load_samples(base.data);
    check_samples_fit(samples, base.model);

    struct RowResult {
        std::string status = "ok";
        double dice = 0.0, iou = 0.0;
        std::uint64_t split_hash = 0;
    };
    std::vector<RowResult> results(rows.size());
    auto run_row = [&](std::size_t i) {
        RunConfig cfg = base;
        cfg.model.ablation = rows[i].ab;
        try {
            auto model = build<float>(cfg.model);
            auto result = train(model, samples, cfg.train);
            check(!result.history.empty(), "ablate: zero-epoch training has no metrics");
            results[i].dice = result.history.back().val_dice;
            results[i].iou = result.history.back().val_iou;
            results[i].split_hash = result.split.hash;
        } catch (const TrainAbort&) {
            results[i].status = "aborted";
        }
    };

    // Rows are fully independent; --jobs > 1 runs them in worker threads.
    if (jobs <= 1) {
        for (std::size_t i = 0; i < rows.size(); ++i) run_row(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> workers;
        for (int t = 0; t < jobs; ++t)
            workers.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < rows.size(); i = next.fetch_add(1)) run_row(i);
            });
        for (auto& w : workers) w.join();
    }

    std::string csv = "row,label,directions,status,dice,iou,split_hash\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::string dir_names;
        if (rows[i].ab.darm) {
            for (auto d : rows[i].ab.direction_subset) {
                if (!dir_names.empty()) dir_names += "+";
                dir_names += to_string(d);
            }
        }
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%zu,%s,%s,%s,%.9g,%.9g,%016llx\n", i + 1, rows[i].label.c_str(),
                      dir_names.c_str(), results[i].status.c_str(), results[i].dice, results[i].iou,
                      static_cast<unsigned long long>(results[i].split_hash));
        csv += buf;
        std::cout << rows[i].label << ": " << results[i].status << " dice " << results[i].dice << " iou "
                  << results[i].iou << "\n";
    }
    write_text_file((fs::path(out_dir) / "ablation.csv").string(), csv);
    write_text_file((fs::path(out_dir) / "resolved-config.json").string(), run_config_to_json(base).dump(2) + "\n");
    std::cout << "grid written to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"U-RWKV segmentation workbench"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic ellipse segmentation dataset");
    std::uint64_t gen_seed = 7;
    std::int64_t gen_count = 200, gen_size = 64;
    std::string gen_out;
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--count", gen_count, "number of samples");
    gen->add_option("--size", gen_size, "square image size");
    gen->add_option("--out", gen_out, "output directory")->required();

    auto* tr = app.add_subcommand("train", "train a model from a run config");
    std::string tr_config, tr_out;
    tr->add_option("--config", tr_config, "run config JSON")->required();
    tr->add_option("--out", tr_out, "output directory")->required();

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string ev_ckpt, ev_data, ev_config, ev_out;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--data", ev_data, "dataset directory");
    ev->add_option("--config", ev_config, "resolved run config; restricts evaluation to its validation split");
    ev->add_option("--out", ev_out, "metrics JSON output path");

    auto* er = app.add_subcommand("erf", "effective receptive field analysis");
    std::vector<std::string> er_ckpts;
    std::string er_out;
    std::vector<double> er_grid;
    std::int64_t er_count = 32;
    std::uint64_t er_seed = 1234;
    bool er_untrained = false;
    er->add_option("--checkpoint", er_ckpts, "checkpoint file (repeat for a side-by-side comparison)")
        ->required()
        ->expected(1, 2);
    er->add_option("--out", er_out, "output directory")->required();
    er->add_option("--threshold-grid", er_grid, "thresholds in (0,1]");
    er->add_option("--probe-count", er_count, "number of probe images");
    er->add_option("--probe-seed", er_seed, "probe RNG seed");
    er->add_flag("--untrained", er_untrained, "probe the model at its seed initialization");

    auto* in = app.add_subcommand("info", "parameter count, MAC estimate and stage table");
    std::string in_config, in_ckpt, in_json;
    in->add_option("--config", in_config, "run config JSON");
    in->add_option("--checkpoint", in_ckpt, "checkpoint file");
    in->add_option("--json", in_json, "also write a JSON report here");

    auto* ab = app.add_subcommand("ablate", "train and evaluate the 12-row ablation grid");
    std::string ab_config, ab_out;
    int ab_jobs = 1;
    ab->add_option("--config", ab_config, "base run config JSON")->required();
    ab->add_option("--out", ab_out, "output directory")->required();
    ab->add_option("--jobs", ab_jobs, "rows trained concurrently (rows are independent)")->check(CLI::Range(1, 12));

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_seed, gen_count, gen_size, gen_out);
        if (tr->parsed()) return cmd_train(tr_config, tr_out);
        if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_config, ev_out);
        if (er->parsed()) return cmd_erf(er_ckpts, er_out, er_grid, er_count, er_seed, er_untrained);
        if (in->parsed()) return cmd_info(in_config, in_ckpt, in_json);
        if (ab->parsed()) return cmd_ablate(ab_config, ab_out, ab_jobs);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const TrainAbort& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return 0;
}

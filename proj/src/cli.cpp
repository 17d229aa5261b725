#include "elok/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "elok/common.hpp"
#include "elok/dataset.hpp"
#include "elok/ecg.hpp"
#include "elok/evaluation.hpp"
#include "elok/io.hpp"
#include "elok/plot.hpp"
#include "elok/training.hpp"

namespace elok {

namespace {

namespace fs = std::filesystem;

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create directory '" + dir + "': " + ec.message());
}

std::string join_args(const std::vector<std::string>& args) {
    std::string s;
    for (const std::string& a : args) {
        if (!s.empty()) s += ' ';
        s += a;
    }
    return s;
}

// Effective train/sweep configuration: config file first, then --set pairs,
// then the --seed flag; flags win over the file.
TrainConfig build_config(const std::string& config_path, const std::vector<std::string>& sets,
                         bool seed_given, std::uint64_t seed) {
    KeyValues kv;
    if (!config_path.empty()) kv = read_key_value_file(config_path);
    for (const std::string& pair : sets) {
        std::size_t eq = pair.find('=');
        if (eq == std::string::npos || eq == 0)
            throw UsageError("--set expects KEY=VALUE, got '" + pair + "'");
        kv[pair.substr(0, eq)] = pair.substr(eq + 1);
    }
    if (seed_given) kv["seed"] = std::to_string(seed);
    return TrainConfig::from_key_values(kv);
}

std::string config_keys_footer() {
    std::string s = "Config keys (key=value lines in --config, overridable with --set; "
                    "unknown keys are errors):\n";
    for (const auto& [k, v] : TrainConfig{}.to_key_values())
        s += "  " + k + "  (default " + v + ")\n";
    return s;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv_table(const std::string& path) {
    CsvTable t;
    for (const std::string& line : split_char(read_text_file(path), '\n')) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells = split_char(line, ',');
        if (t.header.empty()) {
            t.header = cells;
        } else {
            if (cells.size() != t.header.size())
                throw DataError(path + ": row has " + std::to_string(cells.size()) +
                                " cells, header has " + std::to_string(t.header.size()));
            t.rows.push_back(std::move(cells));
        }
    }
    if (t.header.empty()) throw DataError(path + ": empty CSV");
    return t;
}

std::size_t column_index(const CsvTable& t, const std::string& name, const std::string& path) {
    for (std::size_t i = 0; i < t.header.size(); ++i)
        if (t.header[i] == name) return i;
    std::string have;
    for (const std::string& h : t.header) have += (have.empty() ? "" : ", ") + h;
    throw UsageError("plot: column '" + name + "' not found in " + path + " (have: " + have +
                     ")");
}

double parse_cell(const std::string& cell, const std::string& path) {
    try {
        std::size_t pos = 0;
        double v = std::stod(cell, &pos);
        if (pos != cell.size()) throw std::invalid_argument(cell);
        return v;
    } catch (const std::exception&) {
        throw DataError(path + ": not a number: '" + cell + "'");
    }
}

// One command's deterministic run record plus where to put it.
struct CommandOutcome {
    RunManifest manifest;
    std::string manifest_path;
    int exit_code = 0;
};

// ---------------------------------------------------------------------------
// Subcommand handlers
// ---------------------------------------------------------------------------

struct GenerateArgs {
    std::size_t subjects = 10;
    std::uint64_t seed = 0;
    std::string out;
    int threads = 1;
    double train_frac = 0.60;
    double val_frac = 0.10;
};

CommandOutcome cmd_generate(const GenerateArgs& a, std::ostream& out) {
    ensure_dir(a.out);
    MakeDatasetOptions opt;
    opt.n_subjects = a.subjects;
    opt.seed = a.seed;
    opt.out_dir = a.out;
    opt.threads = a.threads;
    opt.train_frac = a.train_frac;
    opt.val_frac = a.val_frac;
    DatasetManifest m = make_dataset(opt);

    KeyValues kv;
    kv["n_subjects"] = std::to_string(opt.n_subjects);
    kv["seed"] = std::to_string(opt.seed);
    kv["train_frac"] = format_g(opt.train_frac, 17);
    kv["val_frac"] = format_g(opt.val_frac, 17);
    std::uint64_t cfg_hash = fnv1a64(canonical_key_values(kv));

    out << "generate: n=" << m.n_subjects << " -> train=" << m.ids_for_split("train").size()
        << " val=" << m.ids_for_split("val").size() << " test=" << m.ids_for_split("test").size()
        << " dataset_hash=" << hex64(hash_directory(a.out)) << "\n";

    CommandOutcome o;
    o.manifest.config_hash = hex64(cfg_hash);
    o.manifest.seeds = std::to_string(a.seed);
    o.manifest.outputs = {a.out + "/manifest.txt", a.out + "/subjects"};
    o.manifest_path = a.out + "/run_manifest.txt";
    return o;
}

struct TrainArgs {
    std::string data;
    std::string out;
    std::string config_path;
    std::vector<std::string> sets;
    bool seed_given = false;
    std::uint64_t seed = 0;
    std::string variant = "tim";
    std::string resume;
    int threads = 1;
};

CommandOutcome cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    TrainConfig cfg = variant_config(build_config(a.config_path, a.sets, a.seed_given, a.seed),
                                     a.variant);
    ensure_dir(a.out);
    TrainOptions opt;
    opt.config = cfg;
    opt.out_dir = a.out;
    opt.resume_checkpoint = a.resume;
    opt.threads = a.threads;
    TrainResult r = train_dataset(a.data, opt);

    CommandOutcome o;
    o.manifest.config_hash = hex64(cfg.hash());
    o.manifest.seeds = std::to_string(cfg.seed);
    o.manifest.inputs = {a.data};
    if (!a.resume.empty()) o.manifest.inputs.push_back(a.resume);
    o.manifest.outputs = {a.out + "/metrics.csv", a.out + "/val.csv",
                          a.out + "/checkpoint_last.txt"};
    if (r.state.has_best) o.manifest.outputs.push_back(a.out + "/checkpoint_best.txt");
    o.manifest_path = a.out + "/run_manifest.txt";

    if (r.aborted) {
        err << "train: aborted: " << r.abort_reason << "\n";
        o.exit_code = 4;
        return o;
    }
    out << "train: variant=" << a.variant << " epochs=" << r.state.epoch
        << " iterations=" << r.state.iteration;
    if (r.state.has_best)
        out << " best_epoch=" << r.state.best_epoch << " best_val_ed="
            << format_g(r.state.best_val_ed, 6);
    out << "\n";
    return o;
}

struct SweepArgs {
    std::string data;
    std::string out;
    std::string config_path;
    std::vector<std::string> sets;
    bool seed_given = false;
    std::uint64_t seed = 0;
    std::string axis;
    std::string values;
    int threads = 1;
};

CommandOutcome cmd_sweep(const SweepArgs& a, std::ostream& out) {
    TrainConfig base = build_config(a.config_path, a.sets, a.seed_given, a.seed);
    std::vector<std::size_t> values;
    for (const std::string& tok : split_char(a.values, ',')) {
        try {
            values.push_back(static_cast<std::size_t>(std::stoull(tok)));
        } catch (const std::exception&) {
            throw UsageError("--values expects a comma-separated integer list, got '" + tok +
                             "'");
        }
    }
    ensure_dir(a.out);
    std::vector<SweepRow> rows = sweep(a.data, base, a.axis, values, a.out, a.threads);
    for (const SweepRow& r : rows) {
        out << "sweep: " << a.axis << "=" << r.value;
        if (r.failed)
            out << " failed: " << r.error;
        else
            out << " ed=" << format_g(r.ed_mean, 6) << "+-" << format_g(r.ed_sd, 6);
        out << "\n";
    }
    CommandOutcome o;
    o.manifest.config_hash = hex64(base.hash());
    o.manifest.seeds = std::to_string(base.seed);
    o.manifest.inputs = {a.data};
    o.manifest.outputs = {a.out + "/sweep.csv"};
    o.manifest_path = a.out + "/run_manifest.txt";
    return o;
}

struct InferArgs {
    std::string data;
    std::string checkpoint;
    std::string subject;
    std::string out;
    bool seed_given = false;
    std::uint64_t seed = 0;
};

CommandOutcome cmd_infer(const InferArgs& a, std::ostream& out) {
    TrainState state = load_checkpoint(a.checkpoint);
    Subject subject = load_subject(a.data, a.subject);
    // Default to the seed stream evaluation uses, so `infer` reproduces the
    // prediction `evaluate` scores for this subject.
    std::uint64_t seed = a.seed_given ? a.seed : mix_seed(state.config.seed, kEvalSeedStream);
    SubjectPrediction pred = predict_subject(state.params, subject, seed);
    ensure_dir(a.out);

    CommandOutcome o;
    write_electrodes(a.out + "/electrodes.txt", pred.electrodes);
    o.manifest.outputs.push_back(a.out + "/electrodes.txt");
    auto dump_cloud = [&](const PointCloud& c, const std::string& name) {
        if (c.empty()) return;
        write_point_cloud(a.out + "/" + name, c);
        o.manifest.outputs.push_back(a.out + "/" + name);
    };
    dump_cloud(pred.keypoints, "keypoints.xyz");
    dump_cloud(pred.coarse, "coarse.xyz");
    dump_cloud(pred.dense, "dense.xyz");

    out << "infer: subject=" << a.subject << " seed=" << seed << " -> " << a.out
        << "/electrodes.txt\n";
    o.manifest.config_hash = hex64(state.config.hash());
    o.manifest.seeds = std::to_string(seed);
    o.manifest.inputs = {a.data, a.checkpoint};
    o.manifest_path = a.out + "/run_manifest.txt";
    return o;
}

struct EvaluateArgs {
    std::string data;
    std::string checkpoint;
    std::string split = "test";
    std::string out;
    int threads = 1;
};

CommandOutcome cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
    TrainState state = load_checkpoint(a.checkpoint);
    EvaluationReport report = evaluate_dataset(a.data, a.checkpoint, a.split, a.threads);
    ensure_dir(a.out);

    CommandOutcome o;
    write_text_file_atomic(a.out + "/results.csv", results_to_csv(report));
    o.manifest.outputs.push_back(a.out + "/results.csv");

    if (report.results.size() >= 2) {
        write_text_file_atomic(a.out + "/electrodes.csv",
                               electrode_stats_to_csv(per_electrode_stats(report.results)));
        o.manifest.outputs.push_back(a.out + "/electrodes.csv");
    } else {
        out << "evaluate: < 2 subjects, skipping electrodes.csv\n";
    }

    std::vector<double> scale, ed, cd;
    for (const SubjectResult& r : report.results) {
        if (!std::isfinite(r.scale_factor)) continue;
        scale.push_back(r.scale_factor);
        ed.push_back(r.mean_ed);
        cd.push_back(r.cd_torso);
    }
    std::vector<std::pair<std::string, CorrelationReport>> corr;
    auto try_corr = [&](const std::string& name, const std::vector<double>& y) {
        std::vector<double> xs, ys;
        for (std::size_t i = 0; i < y.size(); ++i) {
            if (!std::isfinite(y[i])) continue;
            xs.push_back(scale[i]);
            ys.push_back(y[i]);
        }
        if (xs.size() < 3) return;
        try {
            corr.emplace_back(name, correlate(xs, ys));
        } catch (const NumericError&) {
            // constant column: nothing to correlate
        }
    };
    try_corr("ed_vs_scale", ed);
    try_corr("cd_vs_scale", cd);
    if (!corr.empty()) {
        write_text_file_atomic(a.out + "/correlations.csv", correlations_to_csv(corr));
        o.manifest.outputs.push_back(a.out + "/correlations.csv");
    }

    const Aggregate& g = report.aggregate;
    out << "evaluate: split=" << a.split << " n=" << g.n << " ed=" << format_g(g.ed_mean, 6)
        << "+-" << format_g(g.ed_sd, 6);
    if (std::isfinite(g.cd_mean))
        out << " cd=" << format_g(g.cd_mean, 6) << "+-" << format_g(g.cd_sd, 6);
    if (!report.skipped.empty()) out << " skipped=" << report.skipped.size();
    out << "\n";

    o.manifest.config_hash = hex64(state.config.hash());
    o.manifest.seeds = std::to_string(mix_seed(state.config.seed, kEvalSeedStream));
    o.manifest.inputs = {a.data, a.checkpoint};
    o.manifest_path = a.out + "/run_manifest.txt";
    return o;
}

struct SimulateArgs {
    std::string electrodes;
    std::string phantom;
    std::string out;
    double upstroke_ms = 10.0;
    double dt_ms = 1.0;
    double t_end_ms = -1.0;
    int threads = 1;
};

CommandOutcome cmd_simulate_ecg(const SimulateArgs& a, std::ostream& out) {
    ElectrodeSet electrodes = read_electrodes(a.electrodes);
    PhantomSpec spec;
    if (!a.phantom.empty()) {
        spec = phantom_spec_from_text(read_text_file(a.phantom));
    } else {
        // Artifact convention: anchor the default phantom at the centroid of
        // the ten electrodes.
        Vec3 centroid{};
        for (const Vec3& p : electrodes.positions) centroid += p;
        centroid = centroid * (1.0 / static_cast<double>(kNumElectrodes));
        spec = default_phantom_spec(centroid);
    }
    HeartPhantom phantom = build_phantom(spec);

    SimulationOptions opt;
    opt.upstroke_ms = a.upstroke_ms;
    opt.dt_ms = a.dt_ms;
    opt.t_end_ms = a.t_end_ms;
    opt.threads = a.threads;
    EcgTrace trace = simulate_ecg(phantom, electrodes, opt);

    ensure_dir(a.out);
    write_text_file_atomic(a.out + "/ecg.csv", ecg_to_csv(trace));
    write_text_file_atomic(a.out + "/phantom.txt", phantom_spec_to_text(spec));

    out << "simulate-ecg: samples=" << trace.samples() << " dt_ms=" << format_g(trace.dt_ms, 6)
        << " qrs_ms=" << format_g(qrs_duration_ms(trace), 6) << "\n";

    CommandOutcome o;
    o.manifest.config_hash = hex64(fnv1a64(phantom_spec_to_text(spec)));
    o.manifest.seeds = "-";
    o.manifest.inputs = {a.electrodes};
    if (!a.phantom.empty()) o.manifest.inputs.push_back(a.phantom);
    o.manifest.outputs = {a.out + "/ecg.csv", a.out + "/phantom.txt"};
    o.manifest_path = a.out + "/run_manifest.txt";
    return o;
}

struct PlotArgs {
    std::string kind;
    std::string in;
    std::string in2;
    std::string out;
    std::string x_col = "scale_factor";
    std::string y_col = "ed_mean";
    std::string title;
};

CommandOutcome cmd_plot(const PlotArgs& a, std::ostream& out) {
    std::string svg;
    if (a.kind == "boxplot") {
        CsvTable t = read_csv_table(a.in);
        std::vector<std::string> want = {"electrode", "mean", "sd",    "min",
                                         "q1",        "median", "q3", "max"};
        if (t.header != want)
            throw DataError(a.in + ": expected per-electrode stats CSV header "
                                   "'electrode,mean,sd,min,q1,median,q3,max'");
        std::vector<ElectrodeStats> stats;
        for (const auto& row : t.rows) {
            ElectrodeStats e;
            e.name = row[0];
            e.mean = parse_cell(row[1], a.in);
            e.sd = parse_cell(row[2], a.in);
            e.min = parse_cell(row[3], a.in);
            e.q1 = parse_cell(row[4], a.in);
            e.median = parse_cell(row[5], a.in);
            e.q3 = parse_cell(row[6], a.in);
            e.max = parse_cell(row[7], a.in);
            stats.push_back(e);
        }
        svg = svg_boxplot(stats, a.title.empty() ? "Per-electrode error" : a.title);
    } else if (a.kind == "scatter") {
        CsvTable t = read_csv_table(a.in);
        std::size_t xi = column_index(t, a.x_col, a.in);
        std::size_t yi = column_index(t, a.y_col, a.in);
        std::vector<double> xs, ys;
        for (const auto& row : t.rows) {
            double xv = parse_cell(row[xi], a.in);
            double yv = parse_cell(row[yi], a.in);
            if (!std::isfinite(xv) || !std::isfinite(yv)) continue;
            xs.push_back(xv);
            ys.push_back(yv);
        }
        if (xs.size() < 3)
            throw DataError("plot: scatter needs >= 3 finite points, got " +
                            std::to_string(xs.size()));
        svg = svg_scatter(xs, ys, correlate(xs, ys), a.x_col, a.y_col,
                          a.title.empty() ? a.y_col + " vs " + a.x_col : a.title);
    } else if (a.kind == "ecg-overlay") {
        EcgTrace ta = ecg_from_csv(read_text_file(a.in));
        EcgTrace tb;
        bool have_b = !a.in2.empty();
        if (have_b) tb = ecg_from_csv(read_text_file(a.in2));
        svg = svg_ecg_overlay(ta, have_b ? &tb : nullptr,
                              a.title.empty() ? "Simulated 12-lead ECG" : a.title);
    } else {
        throw UsageError("plot: unknown kind '" + a.kind +
                         "' (expected boxplot, scatter, or ecg-overlay)");
    }

    fs::path out_path(a.out);
    if (out_path.has_parent_path()) ensure_dir(out_path.parent_path().string());
    write_text_file_atomic(a.out, svg);
    out << "plot: kind=" << a.kind << " -> " << a.out << "\n";

    CommandOutcome o;
    o.manifest.config_hash = "-";
    o.manifest.seeds = "-";
    o.manifest.inputs = {a.in};
    if (!a.in2.empty()) o.manifest.inputs.push_back(a.in2);
    o.manifest.outputs = {a.out};
    o.manifest_path = a.out + ".manifest.txt";
    return o;
}

}  // namespace

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

std::string RunManifest::to_text() const {
    std::string s;
    s += "command=" + command + "\n";
    s += "tool_version=" + std::string(kToolVersion) + "\n";
    s += "config_hash=" + config_hash + "\n";
    s += "seeds=" + seeds + "\n";
    for (std::size_t i = 0; i < inputs.size(); ++i)
        s += "input." + std::to_string(i) + "=" + inputs[i] + "\n";
    for (std::size_t i = 0; i < outputs.size(); ++i)
        s += "output." + std::to_string(i) + "=" + outputs[i] + "\n";
    // kept last so reruns differ in at most this line
    s += "wall_clock_ms=" + format_g(wall_clock_ms, 6) + "\n";
    return s;
}

std::uint64_t hash_directory(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: '" + dir + "'");
    std::vector<std::string> rel;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().filename() != "run_manifest.txt")
            rel.push_back(fs::relative(entry.path(), dir).generic_string());
    std::sort(rel.begin(), rel.end());
    std::uint64_t h = fnv1a64(std::string());
    for (const std::string& r : rel) {
        h = fnv1a64(r, h);
        h = fnv1a64(std::string(1, '\0'), h);
        h = fnv1a64(read_text_file((fs::path(dir) / r).string()), h);
        h = fnv1a64(std::string(1, '\0'), h);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);

    CLI::App app{"Electrode localization pipeline: synthetic torso data, model "
                 "training, evaluation, and Eikonal ECG simulation"};
    app.set_version_flag("--version", std::string(kToolVersion));
    app.require_subcommand(1);

    GenerateArgs ga;
    CLI::App* gen = app.add_subcommand("generate", "Generate a synthetic contour dataset");
    gen->add_option("--subjects", ga.subjects, "Number of subjects")->capture_default_str();
    gen->add_option("--seed", ga.seed, "Dataset seed")->capture_default_str();
    gen->add_option("--out", ga.out, "Output dataset directory (created if missing)")
        ->required();
    gen->add_option("--threads", ga.threads, "Worker threads")
        ->check(CLI::Range(1, 256))
        ->capture_default_str();
    gen->add_option("--train-frac", ga.train_frac, "Fraction of subjects in the train split")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    gen->add_option("--val-frac", ga.val_frac, "Fraction of subjects in the val split")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();

    TrainArgs ta;
    CLI::App* tr = app.add_subcommand("train", "Train an electrode localization model");
    tr->add_option("--data", ta.data, "Dataset directory from `generate`")->required();
    tr->add_option("--out", ta.out, "Output directory for checkpoints and logs")->required();
    tr->add_option("--config", ta.config_path, "Config file (key=value lines)");
    tr->add_option("--set", ta.sets, "Config override KEY=VALUE (repeatable; wins over file)");
    CLI::Option* tr_seed = tr->add_option("--seed", ta.seed, "Training seed (wins over file)");
    tr->add_option("--variant", ta.variant,
                   "Model variant: tim, tim-no-recon, tim-no-kp, pcn3fc")
        ->check(CLI::IsMember({"tim", "tim-no-recon", "tim-no-kp", "pcn3fc"}))
        ->capture_default_str();
    tr->add_option("--resume", ta.resume, "Resume from this checkpoint");
    tr->add_option("--threads", ta.threads, "Worker threads (1 = bit-exact)")
        ->check(CLI::Range(1, 256))
        ->capture_default_str();
    tr->footer(config_keys_footer());

    SweepArgs sa;
    CLI::App* sw = app.add_subcommand("sweep", "Train across one hyperparameter axis");
    sw->add_option("--data", sa.data, "Dataset directory from `generate`")->required();
    sw->add_option("--out", sa.out, "Output directory for sweep.csv and per-value runs")
        ->required();
    sw->add_option("--axis", sa.axis, "Swept axis: N_rr or N_kp")
        ->required()
        ->check(CLI::IsMember({"N_rr", "N_kp"}));
    sw->add_option("--values", sa.values, "Comma-separated values, e.g. 10,16,32,64,128")
        ->required();
    sw->add_option("--config", sa.config_path, "Config file (key=value lines)");
    sw->add_option("--set", sa.sets, "Config override KEY=VALUE (repeatable; wins over file)");
    CLI::Option* sw_seed = sw->add_option("--seed", sa.seed, "Training seed (wins over file)");
    sw->add_option("--threads", sa.threads, "Worker threads (1 = bit-exact)")
        ->check(CLI::Range(1, 256))
        ->capture_default_str();
    sw->footer(config_keys_footer());

    InferArgs ia;
    CLI::App* in = app.add_subcommand("infer", "Locate the electrodes of one subject");
    in->add_option("--data", ia.data, "Dataset directory")->required();
    in->add_option("--checkpoint", ia.checkpoint, "Trained checkpoint")->required();
    in->add_option("--subject", ia.subject, "Subject id")->required();
    in->add_option("--out", ia.out, "Output directory")->required();
    CLI::Option* in_seed = in->add_option(
        "--seed", ia.seed, "Resampling seed (default: the evaluation stream's seed)");

    EvaluateArgs ea;
    CLI::App* ev = app.add_subcommand("evaluate", "Score a checkpoint on a dataset split");
    ev->add_option("--data", ea.data, "Dataset directory")->required();
    ev->add_option("--checkpoint", ea.checkpoint, "Trained checkpoint")->required();
    ev->add_option("--split", ea.split, "Split: train, val, or test")
        ->check(CLI::IsMember({"train", "val", "test"}))
        ->capture_default_str();
    ev->add_option("--out", ea.out, "Output directory for results/electrodes/correlations CSVs")
        ->required();
    ev->add_option("--threads", ea.threads, "Worker threads")
        ->check(CLI::Range(1, 256))
        ->capture_default_str();

    SimulateArgs ma;
    CLI::App* si = app.add_subcommand("simulate-ecg",
                                      "Simulate a 12-lead ECG from electrode positions");
    si->add_option("--electrodes", ma.electrodes, "Electrode file (NAME x y z rows)")
        ->required();
    si->add_option("--phantom", ma.phantom,
                   "Phantom spec file (default: built-in phantom at the electrode centroid)");
    si->add_option("--out", ma.out, "Output directory for ecg.csv and phantom.txt")->required();
    si->add_option("--upstroke", ma.upstroke_ms, "Upstroke duration (ms)")
        ->capture_default_str();
    si->add_option("--dt", ma.dt_ms, "Sampling interval (ms)")->capture_default_str();
    si->add_option("--t-end", ma.t_end_ms, "End time (ms); negative = auto")
        ->capture_default_str();
    si->add_option("--threads", ma.threads, "Worker threads")
        ->check(CLI::Range(1, 256))
        ->capture_default_str();

    PlotArgs pa;
    CLI::App* pl = app.add_subcommand("plot", "Render a deterministic SVG chart");
    pl->add_option("--kind", pa.kind, "Chart kind: boxplot, scatter, or ecg-overlay")
        ->required();
    pl->add_option("--in", pa.in, "Input CSV")->required();
    pl->add_option("--in2", pa.in2, "Second ECG CSV (ecg-overlay only)");
    pl->add_option("--out", pa.out, "Output SVG path")->required();
    pl->add_option("--x", pa.x_col, "Scatter: x column name")->capture_default_str();
    pl->add_option("--y", pa.y_col, "Scatter: y column name")->capture_default_str();
    pl->add_option("--title", pa.title, "Chart title");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e, out, err);
        err << "error: " << e.what() << "\n";
        return 2;
    }

    auto t0 = std::chrono::steady_clock::now();
    try {
        ta.seed_given = tr_seed->count() > 0;
        sa.seed_given = sw_seed->count() > 0;
        ia.seed_given = in_seed->count() > 0;

        CommandOutcome o;
        if (gen->parsed())
            o = cmd_generate(ga, out);
        else if (tr->parsed())
            o = cmd_train(ta, out, err);
        else if (sw->parsed())
            o = cmd_sweep(sa, out);
        else if (in->parsed())
            o = cmd_infer(ia, out);
        else if (ev->parsed())
            o = cmd_evaluate(ea, out);
        else if (si->parsed())
            o = cmd_simulate_ecg(ma, out);
        else
            o = cmd_plot(pa, out);

        o.manifest.command = join_args(args);
        o.manifest.wall_clock_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        write_text_file_atomic(o.manifest_path, o.manifest.to_text());
        return o.exit_code;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        err << "error: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv;
    argv.push_back("elok");
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace elok

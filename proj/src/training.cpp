#include "elok/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace elok {

namespace {

constexpr std::uint64_t kInitStream = 0x1417;   // parameter initialization
constexpr std::uint64_t kOrderStream = 0xe90c;  // per-epoch sample shuffle

std::uint64_t sample_seed(std::uint64_t seed, const std::string& subject_id, std::size_t repeat) {
    return mix_seed(seed, fnv1a64(subject_id), repeat);
}

std::size_t parse_size(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(value, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != value.size() || value.empty() || value[0] == '-')
        throw UsageError("config key " + key + ": expected a non-negative integer, got '" + value +
                         "'");
    return static_cast<std::size_t>(v);
}

double parse_double(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != value.size() || value.empty())
        throw UsageError("config key " + key + ": expected a number, got '" + value + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw UsageError("config key " + key + ": expected true/false, got '" + value + "'");
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

void add_loss(LossBreakdown& acc, const LossBreakdown& x) {
    acc.total += x.total;
    acc.electrode += x.electrode;
    acc.keypoint += x.keypoint;
    acc.coarse += x.coarse;
    acc.dense += x.dense;
}

void scale_loss(LossBreakdown& acc, double s) {
    acc.total *= s;
    acc.electrode *= s;
    acc.keypoint *= s;
    acc.coarse *= s;
    acc.dense *= s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (batch_size == 0) throw DataError("train config: batch_size must be positive");
    if (!(initial_lr > 0.0)) throw DataError("train config: initial_lr must be positive");
    if (!(lr_decay_factor > 0.0)) throw DataError("train config: lr_decay_factor must be positive");
    if (lr_decay_every == 0) throw DataError("train config: lr_decay_every must be positive");
    if (!(weight_decay >= 0.0)) throw DataError("train config: weight_decay must be >= 0");
    if (epochs == 0) throw DataError("train config: epochs must be positive");
    if (n_rr == 0) throw DataError("train config: n_rr must be >= 1");
    weights.validate();
    model.validate();
}

KeyValues TrainConfig::to_key_values() const {
    // 17 significant digits so every double round-trips exactly
    auto g = [](double v) { return format_g(v, 17); };
    KeyValues kv;
    kv["batch_size"] = std::to_string(batch_size);
    kv["initial_lr"] = g(initial_lr);
    kv["lr_decay_factor"] = g(lr_decay_factor);
    kv["lr_decay_every"] = std::to_string(lr_decay_every);
    kv["weight_decay"] = g(weight_decay);
    kv["epochs"] = std::to_string(epochs);
    kv["n_rr"] = std::to_string(n_rr);
    kv["seed"] = std::to_string(seed);
    kv["beta"] = g(weights.beta);
    kv["lambda_keypoint"] = g(weights.lambda_keypoint);
    kv["lambda_rec"] = g(weights.lambda_rec);
    kv["n_in"] = std::to_string(model.n_in);
    kv["enc_h1"] = std::to_string(model.enc_h1);
    kv["enc_f1"] = std::to_string(model.enc_f1);
    kv["enc_h2"] = std::to_string(model.enc_h2);
    kv["enc_f2"] = std::to_string(model.enc_f2);
    kv["n_kp"] = std::to_string(model.n_kp);
    kv["head_hidden"] = std::to_string(model.head_hidden);
    kv["direct_h1"] = std::to_string(model.direct_h1);
    kv["direct_h2"] = std::to_string(model.direct_h2);
    kv["n_coarse"] = std::to_string(model.n_coarse);
    kv["coarse_hidden"] = std::to_string(model.coarse_hidden);
    kv["n_dense"] = std::to_string(model.n_dense);
    kv["refine_hidden"] = std::to_string(model.refine_hidden);
    kv["grid_extent"] = g(model.grid_extent);
    kv["skeleton_links"] = std::to_string(model.skeleton_links);
    kv["skeleton_density"] = std::to_string(model.skeleton_density);
    kv["skeleton_alpha"] = g(model.skeleton_alpha);
    kv["use_keypoint_head"] = model.use_keypoint_head ? "true" : "false";
    kv["use_skeleton"] = model.use_skeleton ? "true" : "false";
    kv["use_reconstruction"] = model.use_reconstruction ? "true" : "false";
    return kv;
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
    TrainConfig c;
    for (const auto& [key, value] : kv) {
        if (key == "batch_size") c.batch_size = parse_size(key, value);
        else if (key == "initial_lr") c.initial_lr = parse_double(key, value);
        else if (key == "lr_decay_factor") c.lr_decay_factor = parse_double(key, value);
        else if (key == "lr_decay_every") c.lr_decay_every = parse_size(key, value);
        else if (key == "weight_decay") c.weight_decay = parse_double(key, value);
        else if (key == "epochs") c.epochs = parse_size(key, value);
        else if (key == "n_rr") c.n_rr = parse_size(key, value);
        else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_size(key, value));
        else if (key == "beta") c.weights.beta = parse_double(key, value);
        else if (key == "lambda_keypoint") c.weights.lambda_keypoint = parse_double(key, value);
        else if (key == "lambda_rec") c.weights.lambda_rec = parse_double(key, value);
        else if (key == "n_in") c.model.n_in = parse_size(key, value);
        else if (key == "enc_h1") c.model.enc_h1 = parse_size(key, value);
        else if (key == "enc_f1") c.model.enc_f1 = parse_size(key, value);
        else if (key == "enc_h2") c.model.enc_h2 = parse_size(key, value);
        else if (key == "enc_f2") c.model.enc_f2 = parse_size(key, value);
        else if (key == "n_kp") c.model.n_kp = parse_size(key, value);
        else if (key == "head_hidden") c.model.head_hidden = parse_size(key, value);
        else if (key == "direct_h1") c.model.direct_h1 = parse_size(key, value);
        else if (key == "direct_h2") c.model.direct_h2 = parse_size(key, value);
        else if (key == "n_coarse") c.model.n_coarse = parse_size(key, value);
        else if (key == "coarse_hidden") c.model.coarse_hidden = parse_size(key, value);
        else if (key == "n_dense") c.model.n_dense = parse_size(key, value);
        else if (key == "refine_hidden") c.model.refine_hidden = parse_size(key, value);
        else if (key == "grid_extent") c.model.grid_extent = parse_double(key, value);
        else if (key == "skeleton_links") c.model.skeleton_links = parse_size(key, value);
        else if (key == "skeleton_density") c.model.skeleton_density = parse_size(key, value);
        else if (key == "skeleton_alpha") c.model.skeleton_alpha = parse_double(key, value);
        else if (key == "use_keypoint_head") c.model.use_keypoint_head = parse_bool(key, value);
        else if (key == "use_skeleton") c.model.use_skeleton = parse_bool(key, value);
        else if (key == "use_reconstruction") c.model.use_reconstruction = parse_bool(key, value);
        else throw UsageError("unknown config key: " + key);
    }
    return c;
}

std::uint64_t TrainConfig::hash() const { return fnv1a64(canonical_key_values(to_key_values())); }

TrainConfig variant_config(const TrainConfig& base, const std::string& variant) {
    TrainConfig c = base;
    if (variant == "tim") {
        c.model.use_keypoint_head = true;
        c.model.use_skeleton = true;
        c.model.use_reconstruction = true;
    } else if (variant == "tim-no-recon") {
        c.model.use_keypoint_head = true;
        c.model.use_skeleton = false;
        c.model.use_reconstruction = false;
        c.weights.lambda_rec = 0.0;
    } else if (variant == "tim-no-kp") {
        c.model.use_keypoint_head = false;
        c.model.use_skeleton = false;
        c.model.use_reconstruction = true;
        c.weights.lambda_keypoint = 0.0;
    } else if (variant == "pcn3fc") {
        c.model.use_keypoint_head = false;
        c.model.use_skeleton = false;
        c.model.use_reconstruction = false;
        c.weights.lambda_keypoint = 0.0;
        c.weights.lambda_rec = 0.0;
    } else {
        throw UsageError("unknown variant '" + variant +
                         "' (expected tim, tim-no-recon, tim-no-kp, pcn3fc)");
    }
    return c;
}

double lr_at(const TrainConfig& config, std::size_t iteration) {
    std::size_t k = iteration / config.lr_decay_every;
    double lr = config.initial_lr;
    for (std::size_t i = 0; i < k; ++i) lr *= config.lr_decay_factor;
    return lr;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

AdamW AdamW::init(const Params& params) {
    AdamW a;
    a.m = Params::zeros_like(params);
    a.v = Params::zeros_like(params);
    return a;
}

void AdamW::step(Params& params, const Params& grads, double lr, double weight_decay) {
    ++t;
    beta1_pow *= beta1;
    beta2_pow *= beta2;
    const double bc1 = 1.0 - beta1_pow;
    const double bc2 = 1.0 - beta2_pow;
    for (auto& [name, theta] : params.tensors) {
        const Eigen::MatrixXd& g = grads.at(name);
        Eigen::MatrixXd& mm = m.at(name);
        Eigen::MatrixXd& vv = v.at(name);
        mm = beta1 * mm + (1.0 - beta1) * g;
        vv = beta2 * vv + (1.0 - beta2) * g.cwiseProduct(g);
        theta.array() -=
            lr * ((mm.array() / bc1) / ((vv.array() / bc2).sqrt() + epsilon) +
                  weight_decay * theta.array());
    }
}

// ---------------------------------------------------------------------------
// Checkpoint serialization
// ---------------------------------------------------------------------------

namespace {

void append_tensor_section(std::string& out, const char* name, const Params& p) {
    out += "section ";
    out += name;
    out += ' ';
    out += std::to_string(p.tensors.size());
    out += '\n';
    for (const auto& [tname, mat] : p.tensors) {
        out += "tensor " + tname + ' ' + std::to_string(mat.rows()) + ' ' +
               std::to_string(mat.cols()) + '\n';
        for (Eigen::Index r = 0; r < mat.rows(); ++r) {
            for (Eigen::Index c = 0; c < mat.cols(); ++c) {
                if (c) out += ' ';
                out += format_hexdouble(mat(r, c));
            }
            out += '\n';
        }
    }
}

struct LineCursor {
    const std::string& text;
    std::size_t pos = 0;

    bool done() const { return pos >= text.size(); }

    std::string next(const char* what) {
        if (done()) throw DataError(std::string("checkpoint: truncated before ") + what);
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        return line;
    }
};

// "key rest-of-line" pairs used for the checkpoint's scalar fields
std::string expect_field(LineCursor& cur, const std::string& key) {
    std::string line = cur.next(key.c_str());
    std::size_t ws = line.find(' ');
    if (ws == std::string::npos || line.substr(0, ws) != key)
        throw DataError("checkpoint: expected field '" + key + "', got '" + line + "'");
    return line.substr(ws + 1);
}

void parse_tensor_row(const std::string& line, Eigen::MatrixXd& mat, Eigen::Index r) {
    const char* p = line.c_str();
    char* end = nullptr;
    for (Eigen::Index c = 0; c < mat.cols(); ++c) {
        double v = std::strtod(p, &end);
        if (end == p) throw DataError("checkpoint: malformed tensor row");
        mat(r, c) = v;
        p = end;
    }
    while (*p == ' ') ++p;
    if (*p != '\0') throw DataError("checkpoint: extra values in tensor row");
}

void read_tensor_section(LineCursor& cur, const char* name, Params& into) {
    std::string header = cur.next("section header");
    std::vector<std::string> parts = split_ws(header);
    if (parts.size() != 3 || parts[0] != "section" || parts[1] != name)
        throw DataError(std::string("checkpoint: expected section ") + name + ", got '" + header +
                        "'");
    std::size_t count = parse_size("section count", parts[2]);
    if (count != into.tensors.size())
        throw DataError(std::string("checkpoint: section ") + name + " holds " +
                        std::to_string(count) + " tensors, model needs " +
                        std::to_string(into.tensors.size()));
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<std::string> th = split_ws(cur.next("tensor header"));
        if (th.size() != 4 || th[0] != "tensor")
            throw DataError("checkpoint: malformed tensor header");
        auto it = into.tensors.find(th[1]);
        if (it == into.tensors.end())
            throw DataError("checkpoint: unexpected tensor '" + th[1] + "'");
        Eigen::MatrixXd& mat = it->second;
        if (std::to_string(mat.rows()) != th[2] || std::to_string(mat.cols()) != th[3])
            throw DataError("checkpoint: tensor '" + th[1] + "' has shape " + th[2] + "x" + th[3] +
                            ", model needs " + std::to_string(mat.rows()) + "x" +
                            std::to_string(mat.cols()));
        for (Eigen::Index r = 0; r < mat.rows(); ++r)
            parse_tensor_row(cur.next("tensor row"), mat, r);
    }
}

}  // namespace

std::string checkpoint_to_text(const TrainState& state) {
    KeyValues kv = state.config.to_key_values();
    std::string out;
    out += "elok-checkpoint 1\n";
    out += "config_hash " + hex64(state.config.hash()) + '\n';
    out += "config " + std::to_string(kv.size()) + '\n';
    for (const auto& [k, v] : kv) out += k + ' ' + v + '\n';
    out += "iteration " + std::to_string(state.iteration) + '\n';
    out += "epoch " + std::to_string(state.epoch) + '\n';
    out += "adam_t " + std::to_string(state.opt.t) + '\n';
    out += "adam_beta1_pow " + format_hexdouble(state.opt.beta1_pow) + '\n';
    out += "adam_beta2_pow " + format_hexdouble(state.opt.beta2_pow) + '\n';
    out += std::string("has_best ") + (state.has_best ? "1" : "0") + '\n';
    if (state.has_best) {
        out += "best_val_ed " + format_hexdouble(state.best_val_ed) + '\n';
        out += "best_epoch " + std::to_string(state.best_epoch) + '\n';
    }
    append_tensor_section(out, "params", state.params);
    append_tensor_section(out, "adam_m", state.opt.m);
    append_tensor_section(out, "adam_v", state.opt.v);
    if (state.has_best) append_tensor_section(out, "best", state.best_params);
    out += "end\n";
    return out;
}

TrainState checkpoint_from_text(const std::string& text) {
    LineCursor cur{text};
    if (cur.next("header") != "elok-checkpoint 1")
        throw DataError("checkpoint: unrecognized header");
    std::string stored_hash = expect_field(cur, "config_hash");

    std::size_t n_kv = parse_size("config count", expect_field(cur, "config"));
    KeyValues kv;
    for (std::size_t i = 0; i < n_kv; ++i) {
        std::string line = cur.next("config pair");
        std::size_t ws = line.find(' ');
        if (ws == std::string::npos) throw DataError("checkpoint: malformed config line");
        kv[line.substr(0, ws)] = line.substr(ws + 1);
    }

    TrainState st;
    st.config = TrainConfig::from_key_values(kv);
    if (hex64(st.config.hash()) != stored_hash)
        throw DataError("checkpoint: config hash mismatch");

    st.iteration = parse_size("iteration", expect_field(cur, "iteration"));
    st.epoch = parse_size("epoch", expect_field(cur, "epoch"));
    st.params = Params::init(st.config.model, 0);
    st.opt = AdamW::init(st.params);
    st.opt.t = parse_size("adam_t", expect_field(cur, "adam_t"));
    st.opt.beta1_pow = parse_hexdouble(expect_field(cur, "adam_beta1_pow"));
    st.opt.beta2_pow = parse_hexdouble(expect_field(cur, "adam_beta2_pow"));
    st.has_best = parse_bool("has_best", expect_field(cur, "has_best"));
    if (st.has_best) {
        st.best_val_ed = parse_hexdouble(expect_field(cur, "best_val_ed"));
        st.best_epoch = parse_size("best_epoch", expect_field(cur, "best_epoch"));
    }
    read_tensor_section(cur, "params", st.params);
    read_tensor_section(cur, "adam_m", st.opt.m);
    read_tensor_section(cur, "adam_v", st.opt.v);
    if (st.has_best) {
        st.best_params = Params::zeros_like(st.params);
        read_tensor_section(cur, "best", st.best_params);
    }
    if (cur.next("end") != "end") throw DataError("checkpoint: missing end marker");
    return st;
}

void save_checkpoint(const std::string& path, const TrainState& state) {
    write_text_file_atomic(path, checkpoint_to_text(state));
}

TrainState load_checkpoint(const std::string& path) {
    return checkpoint_from_text(read_text_file(path));
}

// ---------------------------------------------------------------------------
// Samples
// ---------------------------------------------------------------------------

std::vector<PointCloud> augment_resample(const Subject& subject, std::size_t n_rr,
                                         std::size_t n_points, std::uint64_t seed) {
    if (n_rr == 0) throw UsageError("augment_resample: n_rr must be >= 1");
    std::vector<PointCloud> out;
    out.reserve(n_rr);
    for (std::size_t r = 0; r < n_rr; ++r)
        out.push_back(
            resample_contours(subject.contours, n_points, sample_seed(seed, subject.id, r)));
    return out;
}

TrainSample make_sample(const Subject& subject, const PointCloud& resampled) {
    auto [cloud, transform] = normalize_cloud(resampled);
    TrainSample s;
    s.input = std::move(cloud);
    s.transform = transform;
    s.targets.electrodes = transform.apply(subject.electrodes.as_cloud());
    s.targets.topology = transform.apply(subject.topology);
    s.targets.coarse = transform.apply(subject.coarse);
    s.targets.dense = transform.apply(subject.dense);
    return s;
}

// ---------------------------------------------------------------------------
// Metrics logs
// ---------------------------------------------------------------------------

std::string metrics_to_csv(const std::vector<IterationRow>& rows) {
    std::string out = "iter,epoch,lr,L_total,L_electrode,L_keypoint,L_coarse,L_dense\n";
    for (const IterationRow& r : rows) {
        out += std::to_string(r.iter) + ',' + std::to_string(r.epoch) + ',' + format_g(r.lr, 12) +
               ',' + format_g(r.loss.total, 12) + ',' + format_g(r.loss.electrode, 12) + ',' +
               format_g(r.loss.keypoint, 12) + ',' + format_g(r.loss.coarse, 12) + ',' +
               format_g(r.loss.dense, 12) + '\n';
    }
    return out;
}

std::string validation_to_csv(const std::vector<ValidationRow>& rows) {
    std::string out = "epoch,val_ed,val_cd\n";
    for (const ValidationRow& r : rows)
        out += std::to_string(r.epoch) + ',' + format_g(r.ed, 12) + ',' + format_g(r.cd, 12) + '\n';
    return out;
}

// ---------------------------------------------------------------------------
// Inference and scoring
// ---------------------------------------------------------------------------

SubjectPrediction predict_subject(const Params& params, const Subject& subject,
                                  std::uint64_t seed) {
    const ModelConfig& cfg = params.config;
    PointCloud resampled =
        resample_contours(subject.contours, cfg.n_in, sample_seed(seed, subject.id, 0));
    auto [input, transform] = normalize_cloud(resampled);
    ModelOutput out = model_forward(input, params);
    if (out.electrodes.size() != kNumElectrodes)
        throw UsageError("predict_subject: model has " + std::to_string(out.electrodes.size()) +
                         " electrode slots, need " + std::to_string(kNumElectrodes));
    SubjectPrediction p;
    p.electrodes = ElectrodeSet::from_cloud(transform.invert(out.electrodes));
    p.keypoints = transform.invert(out.keypoints);
    p.coarse = transform.invert(out.coarse);
    p.dense = transform.invert(out.dense);
    return p;
}

SubjectScore score_subject(const Params& params, const Subject& subject, std::uint64_t seed) {
    SubjectPrediction pred = predict_subject(params, subject, seed);
    SubjectScore s;
    s.ed = euclidean_error(pred.electrodes, subject.electrodes).mean;
    if (!pred.dense.empty()) s.cd = chamfer(pred.dense, subject.dense);
    return s;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

ValidationRow run_validation(const Params& params, const std::vector<Subject>& val_subjects,
                             const TrainConfig& cfg, int threads) {
    ValidationRow row;
    const std::size_t n = val_subjects.size();
    if (n == 0) {
        row.ed = std::numeric_limits<double>::quiet_NaN();
        row.cd = std::numeric_limits<double>::quiet_NaN();
        return row;
    }
    std::vector<double> eds(n), cds(n);
    parallel_for(n, threads, [&](std::size_t i) {
        SubjectScore s =
            score_subject(params, val_subjects[i], mix_seed(cfg.seed, kEvalSeedStream));
        eds[i] = s.ed;
        cds[i] = s.cd;
    });
    row.ed = mean_of(eds);
    row.cd = cfg.model.use_reconstruction ? mean_of(cds)
                                          : std::numeric_limits<double>::quiet_NaN();
    return row;
}

}  // namespace

TrainResult train(const std::vector<Subject>& train_subjects,
                  const std::vector<Subject>& val_subjects, const TrainOptions& options) {
    const TrainConfig& cfg = options.config;
    cfg.validate();
    if (train_subjects.empty()) throw DataError("train: empty train split");

    TrainState st;
    if (!options.resume_checkpoint.empty()) {
        st = load_checkpoint(options.resume_checkpoint);
        // epochs is a run length, not part of the model/optimizer identity,
        // so resuming may extend it; everything else must match exactly
        KeyValues saved = st.config.to_key_values();
        KeyValues current = cfg.to_key_values();
        saved.erase("epochs");
        current.erase("epochs");
        if (canonical_key_values(saved) != canonical_key_values(current))
            throw UsageError("train: resume checkpoint was written with a different config");
        if (st.epoch > cfg.epochs)
            throw UsageError("train: checkpoint is already past the configured epochs");
        st.config = cfg;
    } else {
        st.config = cfg;
        st.params = Params::init(cfg.model, mix_seed(cfg.seed, kInitStream));
        st.opt = AdamW::init(st.params);
    }

    TrainResult res;

    // snapshot restored if a later batch produces a non-finite loss
    Params good_params = st.params;
    AdamW good_opt = st.opt;
    std::size_t good_iteration = st.iteration;
    std::size_t good_epoch = st.epoch;

    const std::size_t n_samples = train_subjects.size() * cfg.n_rr;
    std::vector<std::pair<std::size_t, std::size_t>> order(n_samples);

    // per-sample buffers reused across batches; the batch mean accumulates in
    // sample order, so the result is identical at any thread count
    std::vector<Params> sample_grads;
    sample_grads.reserve(cfg.batch_size);
    for (std::size_t i = 0; i < cfg.batch_size; ++i)
        sample_grads.push_back(Params::zeros_like(st.params));
    std::vector<LossBreakdown> sample_loss(cfg.batch_size);
    Params grad_sum = Params::zeros_like(st.params);

    if (!options.out_dir.empty()) std::filesystem::create_directories(options.out_dir);

    auto write_artifacts = [&](bool best_updated) {
        if (options.out_dir.empty()) return;
        save_checkpoint(options.out_dir + "/checkpoint_last.txt", st);
        if (best_updated) {
            // the best checkpoint carries the best parameters as its live set,
            // so it loads directly for inference
            TrainState best = st;
            best.params = st.best_params;
            save_checkpoint(options.out_dir + "/checkpoint_best.txt", best);
        }
        write_text_file_atomic(options.out_dir + "/metrics.csv", metrics_to_csv(res.metrics));
        write_text_file_atomic(options.out_dir + "/val.csv", validation_to_csv(res.validation));
    };

    for (std::size_t epoch = st.epoch; epoch < cfg.epochs; ++epoch) {
        std::size_t k = 0;
        for (std::size_t s = 0; s < train_subjects.size(); ++s)
            for (std::size_t r = 0; r < cfg.n_rr; ++r) order[k++] = {s, r};
        RandomStream shuffle_rng(mix_seed(cfg.seed, kOrderStream, epoch));
        shuffle_rng.shuffle(order);

        for (std::size_t b0 = 0; b0 < n_samples; b0 += cfg.batch_size) {
            const std::size_t bn = std::min(cfg.batch_size, n_samples - b0);
            try {
                parallel_for(bn, options.threads, [&](std::size_t j) {
                    const auto [si, rep] = order[b0 + j];
                    const Subject& sub = train_subjects[si];
                    PointCloud cloud = resample_contours(sub.contours, cfg.model.n_in,
                                                         sample_seed(cfg.seed, sub.id, rep));
                    TrainSample ts = make_sample(sub, cloud);
                    sample_grads[j].set_zero();
                    sample_loss[j] = model_backward(ts.input, st.params, ts.targets, cfg.weights,
                                                    sample_grads[j]);
                });
            } catch (const NumericError& e) {
                res.aborted = true;
                res.abort_reason = e.what();
                break;
            }

            grad_sum.set_zero();
            LossBreakdown mean_loss;
            for (std::size_t j = 0; j < bn; ++j) {
                for (auto& [name, g] : grad_sum.tensors) g += sample_grads[j].at(name);
                add_loss(mean_loss, sample_loss[j]);
            }
            const double inv = 1.0 / static_cast<double>(bn);
            for (auto& [name, g] : grad_sum.tensors) g *= inv;
            scale_loss(mean_loss, inv);

            if (!std::isfinite(mean_loss.total)) {
                res.aborted = true;
                res.abort_reason = "non-finite training loss";
                break;
            }

            const double lr = lr_at(cfg, st.iteration);
            st.opt.step(st.params, grad_sum, lr, cfg.weight_decay);
            res.metrics.push_back({st.iteration, epoch, lr, mean_loss});
            ++st.iteration;
        }
        if (res.aborted) break;

        st.epoch = epoch + 1;
        ValidationRow vrow = run_validation(st.params, val_subjects, cfg, options.threads);
        vrow.epoch = st.epoch;
        res.validation.push_back(vrow);

        bool best_updated = false;
        if (!val_subjects.empty() && std::isfinite(vrow.ed) && vrow.ed < st.best_val_ed) {
            st.has_best = true;
            st.best_val_ed = vrow.ed;
            st.best_epoch = st.epoch;
            st.best_params = st.params;
            best_updated = true;
        }

        good_params = st.params;
        good_opt = st.opt;
        good_iteration = st.iteration;
        good_epoch = st.epoch;
        write_artifacts(best_updated);
    }

    if (res.aborted) {
        st.params = std::move(good_params);
        st.opt = std::move(good_opt);
        st.iteration = good_iteration;
        st.epoch = good_epoch;
        if (!options.out_dir.empty()) {
            write_artifacts(false);
            write_text_file_atomic(options.out_dir + "/aborted.txt", res.abort_reason + "\n");
        }
    }
    res.state = std::move(st);
    return res;
}

TrainResult train_dataset(const std::string& dataset_dir, const TrainOptions& options) {
    DatasetManifest manifest = read_manifest(dataset_dir);
    auto load_split = [&](const char* split) {
        std::vector<std::string> ids = manifest.ids_for_split(split);
        std::vector<Subject> subjects(ids.size());
        parallel_for(ids.size(), options.threads,
                     [&](std::size_t i) { subjects[i] = load_subject(dataset_dir, ids[i]); });
        return subjects;
    };
    std::vector<Subject> train_split = load_split("train");
    std::vector<Subject> val_split = load_split("val");
    return train(train_split, val_split, options);
}

// ---------------------------------------------------------------------------
// Parameter sweeps
// ---------------------------------------------------------------------------

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
    std::string out = "value,cd_mean,cd_sd,ed_mean,ed_sd,status\n";
    for (const SweepRow& r : rows) {
        std::string status = r.failed ? r.error : "ok";
        for (char& c : status)
            if (c == ',' || c == '\n') c = ';';
        out += std::to_string(r.value) + ',' + format_g(r.cd_mean) + ',' + format_g(r.cd_sd) +
               ',' + format_g(r.ed_mean) + ',' + format_g(r.ed_sd) + ',' + status + '\n';
    }
    return out;
}

std::vector<SweepRow> sweep(const std::string& dataset_dir, const TrainConfig& base,
                            const std::string& axis, const std::vector<std::size_t>& values,
                            const std::string& out_dir, int threads) {
    if (values.empty()) throw UsageError("sweep: values must be nonempty");
    if (axis != "N_rr" && axis != "N_kp")
        throw UsageError("sweep: axis must be N_rr or N_kp, got '" + axis + "'");

    DatasetManifest manifest = read_manifest(dataset_dir);
    auto load_split = [&](const char* split) {
        std::vector<std::string> ids = manifest.ids_for_split(split);
        std::vector<Subject> subjects(ids.size());
        parallel_for(ids.size(), threads,
                     [&](std::size_t i) { subjects[i] = load_subject(dataset_dir, ids[i]); });
        return subjects;
    };
    std::vector<Subject> train_split = load_split("train");
    std::vector<Subject> val_split = load_split("val");
    std::vector<Subject> test_split = load_split("test");
    if (test_split.empty()) throw DataError("sweep: empty test split");

    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    const double qnan = std::numeric_limits<double>::quiet_NaN();
    std::vector<SweepRow> rows;
    for (std::size_t value : values) {
        SweepRow row;
        row.value = value;
        try {
            TrainConfig cfg = base;
            if (axis == "N_rr")
                cfg.n_rr = value;
            else
                cfg.model.n_kp = value;
            cfg.validate();

            TrainOptions topt;
            topt.config = cfg;
            topt.threads = threads;
            if (!out_dir.empty()) topt.out_dir = out_dir + "/" + axis + "_" + std::to_string(value);
            TrainResult r = train(train_split, val_split, topt);
            if (r.aborted) throw NumericError("training aborted: " + r.abort_reason);

            const Params& params = r.state.has_best ? r.state.best_params : r.state.params;
            std::vector<double> eds(test_split.size()), cds(test_split.size());
            parallel_for(test_split.size(), threads, [&](std::size_t i) {
                SubjectScore s =
                    score_subject(params, test_split[i], mix_seed(cfg.seed, kEvalSeedStream));
                eds[i] = s.ed;
                cds[i] = s.cd;
            });
            row.ed_mean = mean_of(eds);
            row.ed_sd = sample_sd(eds);
            if (cfg.model.use_reconstruction) {
                row.cd_mean = mean_of(cds);
                row.cd_sd = sample_sd(cds);
            } else {
                row.cd_mean = qnan;
                row.cd_sd = qnan;
            }
        } catch (const std::exception& e) {
            row.failed = true;
            row.error = e.what();
            row.cd_mean = row.cd_sd = row.ed_mean = row.ed_sd = qnan;
        }
        rows.push_back(row);
        if (!out_dir.empty()) write_text_file_atomic(out_dir + "/sweep.csv", sweep_to_csv(rows));
    }
    return rows;
}

}  // namespace elok

#include "elok/evaluation.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

namespace elok {

namespace {

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

double sample_var(const std::vector<double>& v) {
    double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return ss / static_cast<double>(v.size() - 1);
}

// Pearson on pre-checked inputs; throws on zero variance.
double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double mx = mean_of(x), my = mean_of(y);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0) throw NumericError("correlation undefined: first variable is constant");
    if (syy == 0.0) throw NumericError("correlation undefined: second variable is constant");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace

// ---------------------------------------------------------------------------
// Subject-level evaluation
// ---------------------------------------------------------------------------

SubjectResult evaluate_subject(const Params& params, const Subject& subject, std::uint64_t seed) {
    SubjectPrediction pred = predict_subject(params, subject, seed);
    ElectrodeError err = euclidean_error(pred.electrodes, subject.electrodes);
    SubjectResult r;
    r.id = subject.id;
    r.per_electrode = err.per_electrode;
    r.mean_ed = err.mean;
    if (!pred.dense.empty()) r.cd_torso = chamfer(pred.dense, subject.dense);
    auto it = subject.meta.find("bmi_scale");
    if (it != subject.meta.end()) {
        try {
            r.scale_factor = std::stod(it->second);
        } catch (const std::exception&) {
            // malformed metadata is not an evaluation failure
        }
    }
    return r;
}

Aggregate aggregate_results(const std::vector<SubjectResult>& results) {
    Aggregate agg;
    agg.n = results.size();
    if (results.empty()) return agg;
    std::vector<double> eds, cds;
    eds.reserve(results.size());
    for (const SubjectResult& r : results) {
        eds.push_back(r.mean_ed);
        if (std::isfinite(r.cd_torso)) cds.push_back(r.cd_torso);
    }
    agg.ed_mean = mean_of(eds);
    agg.ed_sd = sample_sd(eds);
    if (!cds.empty()) {
        agg.cd_mean = mean_of(cds);
        agg.cd_sd = sample_sd(cds);
    }
    return agg;
}

EvaluationReport evaluate(const Params& params, const std::vector<Subject>& subjects,
                          std::uint64_t seed, int threads) {
    if (subjects.empty()) throw DataError("evaluate: empty split");
    EvaluationReport report;
    report.results.resize(subjects.size());
    parallel_for(subjects.size(), threads, [&](std::size_t i) {
        report.results[i] = evaluate_subject(params, subjects[i], seed);
    });
    report.aggregate = aggregate_results(report.results);
    return report;
}

EvaluationReport evaluate_dataset(const std::string& dataset_dir,
                                  const std::string& checkpoint_path, const std::string& split,
                                  int threads) {
    TrainState state = load_checkpoint(checkpoint_path);
    DatasetManifest manifest = read_manifest(dataset_dir);
    std::vector<std::string> ids = manifest.ids_for_split(split);
    if (ids.empty()) throw DataError("evaluate: split '" + split + "' is empty");

    std::vector<std::string> kept, skipped;
    for (const std::string& id : ids) {
        std::filesystem::path gt =
            std::filesystem::path(dataset_dir) / "subjects" / id / "electrodes.txt";
        (std::filesystem::exists(gt) ? kept : skipped).push_back(id);
    }
    if (kept.empty()) throw DataError("evaluate: no subject in split '" + split +
                                      "' has ground-truth electrodes");

    std::vector<Subject> subjects(kept.size());
    parallel_for(kept.size(), threads,
                 [&](std::size_t i) { subjects[i] = load_subject(dataset_dir, kept[i]); });

    EvaluationReport report =
        evaluate(state.params, subjects, mix_seed(state.config.seed, kEvalSeedStream), threads);
    report.skipped = std::move(skipped);
    return report;
}

std::string results_to_csv(const EvaluationReport& report) {
    std::string out = "id,ed_mean,cd_torso,scale_factor";
    for (const char* name : kElectrodeNames) out += std::string(",") + name;
    out += '\n';
    for (const SubjectResult& r : report.results) {
        out += r.id + ',' + format_g(r.mean_ed, 12) + ',' + format_g(r.cd_torso, 12) + ',' +
               format_g(r.scale_factor, 12);
        for (double e : r.per_electrode) out += ',' + format_g(e, 12);
        out += '\n';
    }
    for (const std::string& id : report.skipped) out += "# skipped " + id + " (no ground truth)\n";
    return out;
}

// ---------------------------------------------------------------------------
// Per-electrode statistics
// ---------------------------------------------------------------------------

double quantile_type7(std::vector<double> values, double q) {
    if (values.empty()) throw DataError("quantile: empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw UsageError("quantile: q must be in [0,1]");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    double h = static_cast<double>(n - 1) * q;
    std::size_t lo = static_cast<std::size_t>(h);
    std::size_t hi = std::min(lo + 1, n - 1);
    double frac = h - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<ElectrodeStats> per_electrode_stats(const std::vector<SubjectResult>& results) {
    if (results.size() < 2)
        throw DataError("per_electrode_stats: need >= 2 subjects for a spread");
    std::vector<ElectrodeStats> stats(kNumElectrodes);
    for (std::size_t e = 0; e < kNumElectrodes; ++e) {
        std::vector<double> errs;
        errs.reserve(results.size());
        for (const SubjectResult& r : results) errs.push_back(r.per_electrode[e]);
        ElectrodeStats& s = stats[e];
        s.name = kElectrodeNames[e];
        s.mean = mean_of(errs);
        s.sd = sample_sd(errs);
        s.min = quantile_type7(errs, 0.0);
        s.q1 = quantile_type7(errs, 0.25);
        s.median = quantile_type7(errs, 0.5);
        s.q3 = quantile_type7(errs, 0.75);
        s.max = quantile_type7(errs, 1.0);
    }
    return stats;
}

std::string electrode_stats_to_csv(const std::vector<ElectrodeStats>& stats) {
    std::string out = "electrode,mean,sd,min,q1,median,q3,max\n";
    for (const ElectrodeStats& s : stats) {
        out += s.name + ',' + format_g(s.mean, 12) + ',' + format_g(s.sd, 12) + ',' +
               format_g(s.min, 12) + ',' + format_g(s.q1, 12) + ',' + format_g(s.median, 12) +
               ',' + format_g(s.q3, 12) + ',' + format_g(s.max, 12) + '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Correlation
// ---------------------------------------------------------------------------

std::vector<double> average_ranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (values[a] != values[b]) return values[a] < values[b];
        return a < b;
    });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
        // positions i..j (0-based) share the mean of ranks i+1..j+1
        double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

CorrelationReport correlate(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw DataError("correlate: size mismatch");
    if (x.size() < 3) throw DataError("correlate: need >= 3 pairs");
    const std::size_t n = x.size();

    double mx = mean_of(x), my = mean_of(y);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0) throw NumericError("correlate: x is constant");

    CorrelationReport rep;
    rep.pearson_r = pearson(x, y);
    rep.spearman_rho = pearson(average_ranks(x), average_ranks(y));
    rep.slope = sxy / sxx;
    rep.intercept = my - rep.slope * mx;
    if (rep.slope == 0.0) {
        rep.r_squared = 0.0;
    } else {
        std::vector<double> fitted(n);
        for (std::size_t i = 0; i < n; ++i) fitted[i] = rep.slope * x[i] + rep.intercept;
        double r = pearson(fitted, y);
        rep.r_squared = std::clamp(r * r, 0.0, 1.0);
    }
    return rep;
}

std::string correlations_to_csv(
    const std::vector<std::pair<std::string, CorrelationReport>>& rows) {
    std::string out = "label,pearson_r,spearman_rho,slope,intercept,r_squared\n";
    for (const auto& [label, r] : rows) {
        out += label + ',' + format_g(r.pearson_r, 12) + ',' + format_g(r.spearman_rho, 12) +
               ',' + format_g(r.slope, 12) + ',' + format_g(r.intercept, 12) + ',' +
               format_g(r.r_squared, 12) + '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Significance
// ---------------------------------------------------------------------------

double student_t_two_sided_p(double t, double nu) {
    if (!(nu > 0.0)) throw DataError("student_t_two_sided_p: nu must be positive");
    if (!std::isfinite(t)) return 0.0;
    boost::math::students_t dist(nu);
    double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
    return std::clamp(p, 0.0, 1.0);
}

WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2)
        throw DataError("significance: each group needs >= 2 values");
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double ma = mean_of(a), mb = mean_of(b);
    const double sea = sample_var(a) / na, seb = sample_var(b) / nb;
    const double se2 = sea + seb;

    WelchResult w;
    if (se2 == 0.0) {
        w.nu = na + nb - 2.0;
        w.p = (ma == mb) ? 1.0 : 0.0;
        w.t = (ma == mb) ? 0.0
                         : std::copysign(std::numeric_limits<double>::infinity(), ma - mb);
        return w;
    }
    w.t = (ma - mb) / std::sqrt(se2);
    w.nu = se2 * se2 / (sea * sea / (na - 1.0) + seb * seb / (nb - 1.0));
    w.p = student_t_two_sided_p(w.t, w.nu);
    return w;
}

double significance(const std::vector<double>& a, const std::vector<double>& b) {
    return welch_t_test(a, b).p;
}

}  // namespace elok

#ifndef ELOK_EVALUATION_HPP
#define ELOK_EVALUATION_HPP

#include <array>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "elok/dataset.hpp"
#include "elok/electrodes.hpp"
#include "elok/training.hpp"

namespace elok {

struct SubjectResult {
    std::string id;
    std::array<double, kNumElectrodes> per_electrode{};  // ED per electrode (cm)
    double mean_ed = 0.0;
    // dense-cloud Chamfer (cm); NaN when the model has no reconstruction branch
    double cd_torso = std::numeric_limits<double>::quiet_NaN();
    // subject's bmi_scale when the metadata carries one (the synthetic
    // stand-in for population stratification)
    double scale_factor = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> per_lead_dtw;  // filled by the ECG comparison path
};

struct Aggregate {
    std::size_t n = 0;
    double ed_mean = std::numeric_limits<double>::quiet_NaN();
    double ed_sd = std::numeric_limits<double>::quiet_NaN();
    double cd_mean = std::numeric_limits<double>::quiet_NaN();
    double cd_sd = std::numeric_limits<double>::quiet_NaN();
};

struct EvaluationReport {
    std::vector<SubjectResult> results;
    std::vector<std::string> skipped;  // subject ids with missing ground truth
    Aggregate aggregate;
};

// Mean +- sample sd over subjects (CD over the subjects that have one).
Aggregate aggregate_results(const std::vector<SubjectResult>& results);

SubjectResult evaluate_subject(const Params& params, const Subject& subject, std::uint64_t seed);

// Deterministic per (params, subjects, seed); parallel across subjects.
EvaluationReport evaluate(const Params& params, const std::vector<Subject>& subjects,
                          std::uint64_t seed, int threads);

// Loads a checkpoint and scores one dataset split with the checkpoint's own
// seed. Subjects whose ground-truth electrode file is missing are skipped
// and reported.
EvaluationReport evaluate_dataset(const std::string& dataset_dir,
                                  const std::string& checkpoint_path, const std::string& split,
                                  int threads);

// Per-subject rows only; aggregates are recomputable from the rows.
std::string results_to_csv(const EvaluationReport& report);

// Boxplot-ready five-number summary plus mean/sd per named electrode.
struct ElectrodeStats {
    std::string name;
    double mean = 0.0, sd = 0.0;
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

// One row per electrode in canonical order; needs >= 2 subjects.
std::vector<ElectrodeStats> per_electrode_stats(const std::vector<SubjectResult>& results);
std::string electrode_stats_to_csv(const std::vector<ElectrodeStats>& stats);

// Quantile with linear interpolation between order statistics (the type-7
// convention): h = (n-1)q, result = v[floor(h)] + frac * (v[floor(h)+1] - v[floor(h)]).
double quantile_type7(std::vector<double> values, double q);

struct CorrelationReport {
    double pearson_r = 0.0;
    double spearman_rho = 0.0;
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};

// Sample Pearson, Spearman with average ranks on ties, least-squares line,
// and r^2 as the squared Pearson of fitted vs actual. Needs >= 3 pairs and
// non-constant inputs.
CorrelationReport correlate(const std::vector<double>& x, const std::vector<double>& y);
std::string correlations_to_csv(
    const std::vector<std::pair<std::string, CorrelationReport>>& rows);

// 1-based ranks; tied values share the mean of their rank range.
std::vector<double> average_ranks(const std::vector<double>& values);

// Two-sided tail probability of Student's t with nu degrees of freedom.
double student_t_two_sided_p(double t, double nu);

struct WelchResult {
    double t = 0.0;
    double nu = 0.0;
    double p = 1.0;
};

// Welch two-sample t-test; each group needs >= 2 values. Zero pooled
// variance degenerates to p = 1 (equal means) or p = 0.
WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b);
double significance(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace elok

#endif

#include "dlbdp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dlbdp {

std::string to_string(Process p) {
    switch (p) {
        case Process::y: return "Y";
        case Process::z: return "Z";
        case Process::gamma: return "Gamma";
    }
    return "?";
}

Process process_from_string(const std::string& name) {
    if (name == "Y" || name == "y") return Process::y;
    if (name == "Z" || name == "z") return Process::z;
    if (name == "Gamma" || name == "gamma") return Process::gamma;
    throw std::invalid_argument("unknown process '" + name + "'");
}

namespace {

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(what) + ": approximation and reference shapes differ");
    if (a.rows() == 0) throw ShapeError(std::string(what) + ": empty batch");
}

double row_distance2(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double e = a[k] - b[k];
        s += e * e;
    }
    return s;
}

double row_norm2(std::span<const double> a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return s;
}

}  // namespace

double mse(const Matrix& approx, const Matrix& reference) {
    check_same_shape(approx, reference, "mse");
    double s = 0.0;
    for (std::size_t j = 0; j < approx.rows(); ++j) s += row_distance2(approx.row_span(j), reference.row_span(j));
    return s / static_cast<double>(approx.rows());
}

RelativeMse relative_mse(const Matrix& approx, const Matrix& reference) {
    check_same_shape(approx, reference, "relative_mse");
    RelativeMse out;
    double s = 0.0;
    for (std::size_t j = 0; j < approx.rows(); ++j) {
        const double norm2 = row_norm2(reference.row_span(j));
        if (!(norm2 > 0.0)) {
            ++out.excluded;
            continue;
        }
        s += row_distance2(approx.row_span(j), reference.row_span(j)) / norm2;
    }
    const std::size_t used = approx.rows() - out.excluded;
    if (used == 0) throw UndefinedMetric("relative_mse: the reference is zero on every sample");
    out.value = s / static_cast<double>(used);
    return out;
}

const ProcessErrorSeries& RunMetrics::of(Process p) const {
    for (const auto& s : series)
        if (s.process == p) return s;
    throw std::out_of_range("RunMetrics: no series for " + to_string(p));
}

const SeriesAggregate& RunAggregate::of(Process p) const {
    for (const auto& s : series)
        if (s.process == p) return s;
    throw std::out_of_range("RunAggregate: no series for " + to_string(p));
}

namespace {

std::pair<double, double> mean_and_std(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

}  // namespace

RunAggregate aggregate(const std::vector<RunMetrics>& runs) {
    if (runs.empty()) throw std::invalid_argument("aggregate: no runs");
    const auto& first = runs.front();
    for (const auto& r : runs) {
        if (r.series.size() != first.series.size())
            throw ShapeError("aggregate: runs carry different process sets");
        for (std::size_t p = 0; p < r.series.size(); ++p) {
            if (r.series[p].process != first.series[p].process ||
                r.series[p].mse.size() != first.series[p].mse.size() ||
                r.series[p].relative_mse.size() != first.series[p].relative_mse.size())
                throw ShapeError("aggregate: runs have mismatched series shapes");
        }
    }

    RunAggregate out;
    out.runs = runs.size();
    std::vector<double> column(runs.size());
    auto reduce = [&](auto field, std::size_t p, std::size_t n) {
        for (std::size_t q = 0; q < runs.size(); ++q) column[q] = (runs[q].series[p].*field)[n];
        return mean_and_std(column);
    };
    for (std::size_t p = 0; p < first.series.size(); ++p) {
        SeriesAggregate s;
        s.process = first.series[p].process;
        for (std::size_t n = 0; n < first.series[p].mse.size(); ++n) {
            const auto [m, sd] = reduce(&ProcessErrorSeries::mse, p, n);
            s.mean_mse.push_back(m);
            s.std_mse.push_back(sd);
            const auto [rm, rsd] = reduce(&ProcessErrorSeries::relative_mse, p, n);
            s.mean_relative_mse.push_back(rm);
            s.std_relative_mse.push_back(rsd);
        }
        out.series.push_back(std::move(s));
    }
    for (std::size_t q = 0; q < runs.size(); ++q) column[q] = runs[q].seconds;
    std::tie(out.mean_seconds, out.std_seconds) = mean_and_std(column);
    return out;
}

namespace {

void check_positive_state(std::span<const double> x) {
    for (double v : x)
        if (!(v > 0.0)) throw std::domain_error("gamma domain map: price coordinates must be positive");
}

}  // namespace

Matrix gamma_to_original_domain(const Matrix& gamma_ln, std::span<const double> x_original) {
    if (gamma_ln.rows() != x_original.size() || gamma_ln.cols() != x_original.size())
        throw ShapeError("gamma_to_original_domain: Gamma must be d x d");
    check_positive_state(x_original);
    Matrix out = gamma_ln;
    for (std::size_t a = 0; a < out.rows(); ++a)
        for (std::size_t c = 0; c < out.cols(); ++c) out(a, c) /= x_original[c];
    return out;
}

Matrix gamma_to_ln_domain(const Matrix& gamma, std::span<const double> x_original) {
    if (gamma.rows() != x_original.size() || gamma.cols() != x_original.size())
        throw ShapeError("gamma_to_ln_domain: Gamma must be d x d");
    check_positive_state(x_original);
    Matrix out = gamma;
    for (std::size_t a = 0; a < out.rows(); ++a)
        for (std::size_t c = 0; c < out.cols(); ++c) out(a, c) *= x_original[c];
    return out;
}

Matrix gamma_batch_to_original_domain(const Matrix& gamma_ln, const Matrix& x_original) {
    const std::size_t d = x_original.cols();
    if (gamma_ln.rows() != x_original.rows() || gamma_ln.cols() != d * d)
        throw ShapeError("gamma_batch_to_original_domain: expected B x d^2 against B x d");
    Matrix out = gamma_ln;
    for (std::size_t j = 0; j < out.rows(); ++j) {
        const auto x = x_original.row_span(j);
        check_positive_state(x);
        auto g = out.row_span(j);
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t c = 0; c < d; ++c) g[a * d + c] /= x[c];
    }
    return out;
}

std::vector<TripleBatch> reference_triples(const BsdeProblem& problem, const TimeGrid& grid, const PathBatch& paths) {
    if (!problem.has_exact_solution())
        throw std::invalid_argument("reference_triples: " + problem.name() + " has no exact solution");
    const std::size_t d = problem.dim();
    const std::size_t batch = paths.batch_size();
    std::vector<TripleBatch> out;
    for (std::size_t n = 0; n <= paths.last_step(); ++n) {
        TripleBatch ref{Matrix(batch, 1), Matrix(batch, d), Matrix(batch, d * d)};
        for (std::size_t j = 0; j < batch; ++j) {
            const auto s = problem.exact(grid.t(n), paths.states[n].row_span(j));
            ref.y(j, 0) = s->y;
            std::copy(s->z.begin(), s->z.end(), ref.z.row_span(j).begin());
            const auto g = s->gamma.data();
            std::copy(g.begin(), g.end(), ref.gamma.row_span(j).begin());
        }
        out.push_back(std::move(ref));
    }
    return out;
}

namespace {

Matrix exp_elementwise(const Matrix& x) {
    Matrix out = x;
    for (std::size_t j = 0; j < out.rows(); ++j)
        for (double& v : out.row_span(j)) v = std::exp(v);
    return out;
}

}  // namespace

RunMetrics score_run(const BsdeProblem& problem, const TimeGrid& grid, const SolveResult& result) {
    const auto refs = reference_triples(problem, grid, result.test_paths);
    if (refs.size() != result.estimates.size())
        throw ShapeError("score_run: estimates and test paths cover different steps");
    RunMetrics out;
    out.seconds = result.seconds;
    const std::size_t batch = result.test_paths.batch_size();
    for (Process p : {Process::y, Process::z, Process::gamma}) {
        ProcessErrorSeries s;
        s.process = p;
        s.batch_size = batch;
        for (std::size_t n = 0; n < refs.size(); ++n) {
            const TripleBatch& est = result.estimates[n];
            const TripleBatch& ref = refs[n];
            Matrix a, r;
            switch (p) {
                case Process::y: a = est.y, r = ref.y; break;
                case Process::z: a = est.z, r = ref.z; break;
                case Process::gamma:
                    if (problem.ln_domain()) {
                        const Matrix x = exp_elementwise(result.test_paths.states[n]);
                        a = gamma_batch_to_original_domain(est.gamma, x);
                        r = gamma_batch_to_original_domain(ref.gamma, x);
                    } else {
                        a = est.gamma, r = ref.gamma;
                    }
                    break;
            }
            s.mse.push_back(mse(a, r));
            try {
                const auto rel = relative_mse(a, r);
                s.relative_mse.push_back(rel.value);
                s.excluded.push_back(rel.excluded);
            } catch (const UndefinedMetric&) {
                s.relative_mse.push_back(std::numeric_limits<double>::quiet_NaN());
                s.excluded.push_back(batch);
            }
        }
        out.series.push_back(std::move(s));
    }
    return out;
}

RunMetrics score_t0(const SolveResult& result, const SolutionTriple& reference, bool with_derivatives) {
    if (result.estimates.empty()) throw std::invalid_argument("score_t0: no estimates");
    const TripleBatch& est = result.estimates.front();
    const std::size_t batch = est.y.rows();
    const std::size_t d = est.z.cols();
    RunMetrics out;
    out.seconds = result.seconds;
    auto add = [&](Process p, const Matrix& a, std::span<const double> ref_row) {
        if (ref_row.size() != a.cols()) throw ShapeError("score_t0: reference has the wrong size");
        Matrix r(batch, a.cols());
        for (std::size_t j = 0; j < batch; ++j) std::copy(ref_row.begin(), ref_row.end(), r.row_span(j).begin());
        ProcessErrorSeries s;
        s.process = p;
        s.batch_size = batch;
        s.mse.push_back(mse(a, r));
        try {
            const auto rel = relative_mse(a, r);
            s.relative_mse.push_back(rel.value);
            s.excluded.push_back(rel.excluded);
        } catch (const UndefinedMetric&) {
            s.relative_mse.push_back(std::numeric_limits<double>::quiet_NaN());
            s.excluded.push_back(batch);
        }
        out.series.push_back(std::move(s));
    };
    add(Process::y, est.y, std::span<const double>(&reference.y, 1));
    if (with_derivatives) {
        if (reference.z.size() != d || reference.gamma.rows() != d)
            throw ShapeError("score_t0: reference Z or Gamma missing");
        add(Process::z, est.z, reference.z);
        add(Process::gamma, est.gamma, reference.gamma.data());
    }
    return out;
}

}  // namespace dlbdp

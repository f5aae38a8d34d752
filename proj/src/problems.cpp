#include "dlbdp/problems.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace dlbdp {

namespace {

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

std::vector<double> filled(std::size_t d, double v) { return std::vector<double>(d, v); }

void require(bool ok, const std::string& what) {
    if (!ok) throw ProblemError(what);
}

}  // namespace

// --- BsdeProblem defaults -------------------------------------------------------

BsdeProblem::BsdeProblem(std::string name, std::vector<double> x0, double terminal_time)
    : name_(std::move(name)), x0_(std::move(x0)), terminal_time_(terminal_time) {
    require(!x0_.empty(), name_ + ": dimension must be >= 1");
    require(terminal_time_ > 0.0 && std::isfinite(terminal_time_), name_ + ": maturity must be positive");
}

Matrix BsdeProblem::drift_jacobian(double, std::span<const double>) const { return Matrix(dim(), dim()); }

Matrix BsdeProblem::diffusion_inverse(double t) const {
    Matrix b = diffusion(t);
    require(b.is_diagonal(), name() + ": default diffusion_inverse needs a diagonal diffusion");
    for (std::size_t k = 0; k < dim(); ++k) {
        require(b(k, k) != 0.0, name() + ": diffusion is singular");
        b(k, k) = 1.0 / b(k, k);
    }
    return b;
}

std::vector<double> BsdeProblem::terminal_z(std::span<const double> x) const {
    return vecmat(payoff_gradient(x), diffusion(terminal_time_));
}

Matrix BsdeProblem::terminal_gamma(std::span<const double> x) const {
    return matmul_tn(diffusion(terminal_time_), payoff_hessian(x));
}

std::optional<Moments> BsdeProblem::moments(double) const { return std::nullopt; }

std::optional<SolutionTriple> BsdeProblem::exact(double, std::span<const double>) const { return std::nullopt; }

// --- self check -------------------------------------------------------------------

namespace {

bool close(double analytic, double numeric, double tol) {
    return std::abs(analytic - numeric) <= tol * std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

}  // namespace

void self_check(const BsdeProblem& p) {
    const std::size_t d = p.dim();
    const double T = p.terminal_time();
    const std::string who = p.name() + " self-check: ";

    for (int i = 0; i <= 10; ++i) {
        const double t = T * i / 10.0;
        const Matrix b = p.diffusion(t);
        require(b.rows() == d && b.cols() == d, who + "diffusion has the wrong shape");
        const Matrix prod = matmul(p.diffusion_inverse(t), b);
        const Matrix eye = Matrix::identity(d);
        for (std::size_t k = 0; k < prod.size(); ++k)
            require(std::abs(prod.data()[k] - eye.data()[k]) <= 1e-12, who + "b_inv(t) b(t) != I");
    }

    RngStream rng(0x5e1fc4ecULL, stream_label({d}));
    std::vector<double> spread = filled(d, 0.3);
    if (const auto m = p.moments(T)) {
        for (std::size_t k = 0; k < d; ++k) spread[k] = std::max(m->stddev[k], 0.05);
    }

    constexpr int kProbes = 12;
    constexpr double kTol = 1e-6;
    constexpr double kKink = 1e-3;
    int driver_probes = 0, payoff_probes = 0;
    for (int probe = 0; probe < 200 && (driver_probes < kProbes || payoff_probes < kProbes); ++probe) {
        std::vector<double> x(p.x0().begin(), p.x0().end());
        const auto noise = rng.normals(2 * d + 2);
        for (std::size_t k = 0; k < d; ++k) x[k] += spread[k] * noise[k];
        const double t = T * 0.5 * (1.0 + std::tanh(noise[2 * d]));
        const double y_scale = std::abs(p.payoff(x)) + 1.0;
        const double y = y_scale * noise[2 * d + 1];
        std::vector<double> z(d);
        for (std::size_t k = 0; k < d; ++k) z[k] = y_scale * 0.5 * noise[d + k];

        if (driver_probes < kProbes && !p.driver_near_kink(t, x, y, z, kKink)) {
            ++driver_probes;
            const DriverPartials dp = p.driver_partials(t, x, y, z);
            require(dp.dx.size() == d && dp.dz.size() == d, who + "driver partials have the wrong shape");
            const double hy = 1e-6 * std::max(1.0, std::abs(y));
            require(close(dp.dy, (p.driver(t, x, y + hy, z) - p.driver(t, x, y - hy, z)) / (2 * hy), kTol),
                    who + "d f / d y disagrees with finite differences");
            for (std::size_t k = 0; k < d; ++k) {
                auto zp = z, zm = z;
                const double hz = 1e-6 * std::max(1.0, std::abs(z[k]));
                zp[k] += hz;
                zm[k] -= hz;
                require(close(dp.dz[k], (p.driver(t, x, y, zp) - p.driver(t, x, y, zm)) / (2 * hz), kTol),
                        who + "d f / d z disagrees with finite differences");
                auto xp = x, xm = x;
                const double hx = 1e-6 * std::max(1.0, std::abs(x[k]));
                xp[k] += hx;
                xm[k] -= hx;
                require(close(dp.dx[k], (p.driver(t, xp, y, z) - p.driver(t, xm, y, z)) / (2 * hx), kTol),
                        who + "d f / d x disagrees with finite differences");
            }
        }

        if (payoff_probes < kProbes && !p.payoff_near_kink(x, kKink)) {
            ++payoff_probes;
            const auto grad = p.payoff_gradient(x);
            const Matrix hess = p.payoff_hessian(x);
            require(grad.size() == d && hess.rows() == d && hess.cols() == d, who + "payoff derivative shapes");
            const double h = 1e-6;
            for (std::size_t k = 0; k < d; ++k) {
                auto xp = x, xm = x;
                xp[k] += h;
                xm[k] -= h;
                require(close(grad[k], (p.payoff(xp) - p.payoff(xm)) / (2 * h), kTol),
                        who + "payoff gradient disagrees with finite differences");
                const auto gp = p.payoff_gradient(xp);
                const auto gm = p.payoff_gradient(xm);
                for (std::size_t j = 0; j < d; ++j)
                    require(close(hess(j, k), (gp[j] - gm[j]) / (2 * h), kTol),
                            who + "payoff Hessian disagrees with finite differences");
            }
        }
    }
    require(driver_probes == kProbes && payoff_probes == kProbes, who + "could not find probes away from kinks");
}

// --- Black-Scholes ---------------------------------------------------------------

SolutionTriple bs_closed_form(double t, std::span<const double> x_ln, const BasketCallInputs& in) {
    const std::size_t d = x_ln.size();
    if (in.weights.size() != d || in.dividend.size() != d || in.pricing_vol.size() != d ||
        in.diffusion.size() != d) {
        throw ShapeError("bs_closed_form: parameter vectors must have length d");
    }
    const double tau = in.maturity - t;
    if (tau < 0.0) throw std::domain_error("bs_closed_form: t beyond maturity");

    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += in.weights[k] * x_ln[k];
    const double basket = std::exp(s);

    SolutionTriple out;
    out.z.assign(d, 0.0);
    out.gamma = Matrix(d, d);

    double level = 0.0;      // dY/ds
    double curvature = 0.0;  // d2Y/ds2
    if (tau == 0.0) {
        const bool itm = in.strike <= 0.0 || s > std::log(in.strike);
        out.y = itm ? basket - in.strike : 0.0;
        level = itm ? basket : 0.0;
        curvature = level;
    } else {
        double vol2 = 0.0, carry = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            const double bc = in.pricing_vol[k] * in.weights[k];
            vol2 += bc * bc;
            carry += in.weights[k] * (in.dividend[k] + 0.5 * in.pricing_vol[k] * in.pricing_vol[k]);
        }
        carry -= 0.5 * vol2;
        const double sd = std::sqrt(vol2 * tau);
        const double forward_disc = std::exp(-carry * tau) * basket;
        double d1 = std::numeric_limits<double>::infinity();
        if (in.strike > 0.0) d1 = (s - std::log(in.strike) + (in.rate - carry + 0.5 * vol2) * tau) / sd;
        const double d2 = d1 - sd;
        const double cdf1 = norm_cdf(d1);
        out.y = forward_disc * cdf1 - std::exp(-in.rate * tau) * in.strike * norm_cdf(d2);
        level = forward_disc * cdf1;
        curvature = forward_disc * (cdf1 + norm_pdf(d1) / sd);
    }
    for (std::size_t k = 0; k < d; ++k) {
        out.z[k] = in.weights[k] * level * in.diffusion[k];
        for (std::size_t j = 0; j < d; ++j)
            out.gamma(k, j) = in.diffusion[k] * in.weights[k] * in.weights[j] * curvature;
    }
    return out;
}

BlackScholesParams BlackScholesParams::completed() const {
    BlackScholesParams p = *this;
    if (p.x0.empty()) p.x0 = filled(d, 100.0);
    if (p.drift.empty()) p.drift = filled(d, 0.05);
    if (p.vol.empty()) p.vol = filled(d, 0.2);
    if (p.weights.empty()) p.weights = filled(d, 1.0 / static_cast<double>(d));
    if (p.dividend.empty()) p.dividend = filled(d, 0.0);
    return p;
}

namespace {

std::vector<double> log_of(std::span<const double> v) {
    std::vector<double> out(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) {
        require(v[k] > 0.0, "initial prices must be positive");
        out[k] = std::log(v[k]);
    }
    return out;
}

/// Geometric basket call (prod X_k^{c_k} - K)^+ in ln coordinates.
struct BasketCallPayoff {
    std::vector<double> weights;
    double strike;

    double basket_log(std::span<const double> x) const {
        double s = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) s += weights[k] * x[k];
        return s;
    }
    // Exercise is decided in log space so that a basket exactly at ln K counts as the kink.
    bool in_the_money(double s) const { return strike <= 0.0 || s > std::log(strike); }
    double value(std::span<const double> x) const {
        const double s = basket_log(x);
        return in_the_money(s) ? std::exp(s) - strike : 0.0;
    }
    std::vector<double> gradient(std::span<const double> x) const {
        const double s = basket_log(x);
        const double e = std::exp(s);
        std::vector<double> g(x.size(), 0.0);
        if (in_the_money(s))
            for (std::size_t k = 0; k < x.size(); ++k) g[k] = weights[k] * e;
        return g;
    }
    Matrix hessian(std::span<const double> x) const {
        const double s = basket_log(x);
        const double e = std::exp(s);
        Matrix h(x.size(), x.size());
        if (in_the_money(s))
            for (std::size_t k = 0; k < x.size(); ++k)
                for (std::size_t j = 0; j < x.size(); ++j) h(k, j) = weights[k] * weights[j] * e;
        return h;
    }
    bool near_kink(std::span<const double> x, double tol) const {
        return strike > 0.0 && std::abs(basket_log(x) - std::log(strike)) < tol;
    }
};

class BlackScholesProblem final : public BsdeProblem {
public:
    explicit BlackScholesProblem(BlackScholesParams p)
        : BsdeProblem("black_scholes", log_of(p.x0), p.maturity),
          p_(std::move(p)),
          payoff_{p_.weights, p_.strike} {
        for (std::size_t k = 0; k < dim(); ++k) {
            require(p_.vol[k] > 0.0, "black_scholes: volatility must be positive");
            market_price_[k] = (p_.drift[k] - p_.rate + p_.dividend[k]) / p_.vol[k];
        }
        require(p_.strike >= 0.0, "black_scholes: strike must be non-negative");
    }

    void drift(double, std::span<const double>, std::span<double> out) const override {
        for (std::size_t k = 0; k < dim(); ++k) out[k] = p_.drift[k] - 0.5 * p_.vol[k] * p_.vol[k];
    }
    Matrix diffusion(double) const override { return Matrix::diagonal(p_.vol); }

    double driver(double, std::span<const double>, double y, std::span<const double> z) const override {
        double s = p_.rate * y;
        for (std::size_t k = 0; k < dim(); ++k) s += market_price_[k] * z[k];
        return -s;
    }
    DriverPartials driver_partials(double, std::span<const double>, double, std::span<const double>) const override {
        DriverPartials dp{filled(dim(), 0.0), -p_.rate, std::vector<double>(dim())};
        for (std::size_t k = 0; k < dim(); ++k) dp.dz[k] = -market_price_[k];
        return dp;
    }

    double payoff(std::span<const double> x) const override { return payoff_.value(x); }
    std::vector<double> payoff_gradient(std::span<const double> x) const override { return payoff_.gradient(x); }
    Matrix payoff_hessian(std::span<const double> x) const override { return payoff_.hessian(x); }
    bool payoff_near_kink(std::span<const double> x, double tol) const override { return payoff_.near_kink(x, tol); }

    std::optional<Moments> moments(double t) const override {
        Moments m{std::vector<double>(x0().begin(), x0().end()), filled(dim(), 0.0)};
        for (std::size_t k = 0; k < dim(); ++k) {
            m.mean[k] += (p_.drift[k] - 0.5 * p_.vol[k] * p_.vol[k]) * t;
            m.stddev[k] = p_.vol[k] * std::sqrt(t);
        }
        return m;
    }
    bool has_exact_solution() const override { return true; }
    std::optional<SolutionTriple> exact(double t, std::span<const double> x) const override {
        return bs_closed_form(t, x, {p_.maturity, p_.strike, p_.rate, p_.weights, p_.dividend, p_.vol, p_.vol});
    }
    bool ln_domain() const override { return true; }

private:
    BlackScholesParams p_;
    BasketCallPayoff payoff_;
    std::vector<double> market_price_ = std::vector<double>(dim());
};

}  // namespace

ProblemPtr make_black_scholes(const BlackScholesParams& params) {
    require(params.d >= 1, "black_scholes: d must be >= 1");
    const BlackScholesParams p = params.completed();
    for (const auto* v : {&p.x0, &p.drift, &p.vol, &p.weights, &p.dividend})
        require(v->size() == p.d, "black_scholes: parameter vectors must have length d");
    auto problem = std::make_shared<BlackScholesProblem>(p);
    self_check(*problem);
    return problem;
}

// --- Different rates ---------------------------------------------------------------

namespace {

class DifferentRatesProblem final : public BsdeProblem {
public:
    explicit DifferentRatesProblem(const DifferentRatesParams& p)
        : BsdeProblem("different_rates", filled(p.d, std::log(p.x0)), p.maturity), p_(p) {}

    void drift(double, std::span<const double>, std::span<double> out) const override {
        std::fill(out.begin(), out.end(), p_.drift - 0.5 * p_.vol * p_.vol);
    }
    Matrix diffusion(double) const override { return Matrix::diagonal(filled(dim(), p_.vol)); }

    double driver(double, std::span<const double>, double y, std::span<const double> z) const override {
        const double zsum = sum(z);
        return -p_.lending_rate * y - (p_.drift - p_.lending_rate) / p_.vol * zsum +
               (p_.borrowing_rate - p_.lending_rate) * std::max(zsum / p_.vol - y, 0.0);
    }
    DriverPartials driver_partials(double, std::span<const double>, double y,
                                   std::span<const double> z) const override {
        const bool borrowing = sum(z) / p_.vol - y > 0.0;
        const double spread = borrowing ? p_.borrowing_rate - p_.lending_rate : 0.0;
        return {filled(dim(), 0.0), -p_.lending_rate - spread,
                filled(dim(), -(p_.drift - p_.lending_rate) / p_.vol + spread / p_.vol)};
    }
    bool driver_near_kink(double, std::span<const double>, double y, std::span<const double> z,
                          double tol) const override {
        return std::abs(sum(z) / p_.vol - y) < tol;
    }

    double payoff(std::span<const double> x) const override {
        if (p_.payoff == RatesPayoff::call) return x[0] > std::log(p_.strike) ? std::exp(x[0]) - p_.strike : 0.0;
        const double m = std::exp(*std::max_element(x.begin(), x.end()));
        return std::max(m - p_.strike_low, 0.0) - 2.0 * std::max(m - p_.strike_high, 0.0);
    }
    std::vector<double> payoff_gradient(std::span<const double> x) const override {
        std::vector<double> g(dim(), 0.0);
        const auto [k, slope] = active_slope(x);
        g[k] = slope;
        return g;
    }
    Matrix payoff_hessian(std::span<const double> x) const override {
        Matrix h(dim(), dim());
        const auto [k, slope] = active_slope(x);
        h(k, k) = slope;
        return h;
    }
    bool payoff_near_kink(std::span<const double> x, double tol) const override {
        if (p_.payoff == RatesPayoff::call) return std::abs(x[0] - std::log(p_.strike)) < tol;
        std::vector<double> sorted(x.begin(), x.end());
        std::sort(sorted.rbegin(), sorted.rend());
        if (sorted.size() > 1 && sorted[0] - sorted[1] < tol) return true;
        return std::abs(sorted[0] - std::log(p_.strike_low)) < tol ||
               std::abs(sorted[0] - std::log(p_.strike_high)) < tol;
    }

    std::optional<Moments> moments(double t) const override {
        return Moments{filled(dim(), x0()[0] + (p_.drift - 0.5 * p_.vol * p_.vol) * t),
                       filled(dim(), p_.vol * std::sqrt(t))};
    }
    bool has_exact_solution() const override { return p_.payoff == RatesPayoff::call && dim() == 1; }
    std::optional<SolutionTriple> exact(double t, std::span<const double> x) const override {
        if (!has_exact_solution()) return std::nullopt;
        // With a call payoff the hedge always borrows, so the driver is linear with rate R2.
        return bs_closed_form(t, x, {p_.maturity, p_.strike, p_.borrowing_rate, {1.0}, {0.0}, {p_.vol}, {p_.vol}});
    }
    bool ln_domain() const override { return true; }

private:
    static double sum(std::span<const double> z) {
        double s = 0.0;
        for (double v : z) s += v;
        return s;
    }

    // (index, d payoff / d x_index) of the a.e. gradient, which has at most one non-zero entry.
    std::pair<std::size_t, double> active_slope(std::span<const double> x) const {
        if (p_.payoff == RatesPayoff::call) {
            return {0, x[0] > std::log(p_.strike) ? std::exp(x[0]) : 0.0};
        }
        const auto it = std::max_element(x.begin(), x.end());
        const auto k = static_cast<std::size_t>(it - x.begin());
        const double m = std::exp(*it);
        const double slope = (m > p_.strike_low ? 1.0 : 0.0) - (m > p_.strike_high ? 2.0 : 0.0);
        return {k, slope * m};
    }

    DifferentRatesParams p_;
};

}  // namespace

ProblemPtr make_different_rates(const DifferentRatesParams& p) {
    require(p.d >= 1, "different_rates: d must be >= 1");
    require(p.payoff != RatesPayoff::call || p.d == 1, "different_rates: the call payoff is defined for d = 1");
    require(p.vol > 0.0, "different_rates: volatility must be positive");
    require(p.x0 > 0.0, "different_rates: x0 must be positive");
    require(std::isfinite(p.lending_rate) && std::isfinite(p.borrowing_rate) &&
                p.borrowing_rate >= p.lending_rate,
            "different_rates: need finite rates with R2 >= R1");
    require(p.strike_low < p.strike_high, "different_rates: need K1 < K2");
    auto problem = std::make_shared<DifferentRatesProblem>(p);
    self_check(*problem);
    return problem;
}

// --- HJB -----------------------------------------------------------------------

namespace {

struct LogQuadraticPayoff {
    // g(x) = ln((1 + |x|^2) / 2)
    static double value(std::span<const double> x) { return std::log(0.5 * (1.0 + sq(x))); }
    static std::vector<double> gradient(std::span<const double> x) {
        const double denom = 1.0 + sq(x);
        std::vector<double> g(x.size());
        for (std::size_t k = 0; k < x.size(); ++k) g[k] = 2.0 * x[k] / denom;
        return g;
    }
    static Matrix hessian(std::span<const double> x) {
        const double denom = 1.0 + sq(x);
        Matrix h(x.size(), x.size());
        for (std::size_t k = 0; k < x.size(); ++k)
            for (std::size_t j = 0; j < x.size(); ++j)
                h(k, j) = (k == j ? 2.0 / denom : 0.0) - 4.0 * x[k] * x[j] / (denom * denom);
        return h;
    }
    static double sq(std::span<const double> x) {
        double s = 0.0;
        for (double v : x) s += v * v;
        return s;
    }
};

class HjbProblem final : public BsdeProblem {
public:
    explicit HjbProblem(const HjbParams& p) : BsdeProblem("hjb", p.x0, p.maturity), vol_(p.vol) {}

    void drift(double, std::span<const double>, std::span<double> out) const override {
        std::fill(out.begin(), out.end(), 0.0);
    }
    Matrix diffusion(double) const override { return Matrix::diagonal(filled(dim(), vol_)); }

    double driver(double, std::span<const double>, double, std::span<const double> z) const override {
        double s = 0.0;
        for (double v : z) s += (v / vol_) * (v / vol_);
        return -s;
    }
    DriverPartials driver_partials(double, std::span<const double>, double,
                                   std::span<const double> z) const override {
        DriverPartials dp{filled(dim(), 0.0), 0.0, std::vector<double>(dim())};
        for (std::size_t k = 0; k < dim(); ++k) dp.dz[k] = -2.0 * z[k] / (vol_ * vol_);
        return dp;
    }

    double payoff(std::span<const double> x) const override { return LogQuadraticPayoff::value(x); }
    std::vector<double> payoff_gradient(std::span<const double> x) const override {
        return LogQuadraticPayoff::gradient(x);
    }
    Matrix payoff_hessian(std::span<const double> x) const override { return LogQuadraticPayoff::hessian(x); }

    std::optional<Moments> moments(double t) const override {
        return Moments{std::vector<double>(x0().begin(), x0().end()), filled(dim(), vol_ * std::sqrt(t))};
    }

private:
    double vol_;
};

HjbParams completed(HjbParams p) {
    if (p.x0.empty()) p.x0 = filled(p.d, 1.0);
    return p;
}

}  // namespace

ProblemPtr make_hjb(const HjbParams& params) {
    require(params.d >= 1, "hjb: d must be >= 1");
    const HjbParams p = completed(params);
    require(p.x0.size() == p.d, "hjb: x0 must have length d");
    require(p.vol > 0.0, "hjb: volatility must be positive");
    auto problem = std::make_shared<HjbProblem>(p);
    self_check(*problem);
    return problem;
}

HjbReference hjb_reference_at(const HjbParams& params, std::span<const double> x, std::size_t sample_count,
                              RngStream stream) {
    const HjbParams p = completed(params);
    const std::size_t d = x.size();
    if (sample_count < 2) throw std::invalid_argument("hjb_reference: need at least two samples");
    const double lambda = 2.0 / (p.vol * p.vol);
    const double scale = p.vol * std::sqrt(p.maturity);

    // Streaming log-sum-exp: weights are exp(-lambda (g - shift)) with shift the running minimum.
    double shift = std::numeric_limits<double>::quiet_NaN();
    double sum_w = 0.0, sum_w2 = 0.0;
    std::vector<double> sum_wg(d, 0.0);
    Matrix sum_wh(d, d);
    std::vector<double> xs(d);
    constexpr std::size_t kChunk = 4096;
    std::vector<double> noise;
    for (std::size_t done = 0; done < sample_count;) {
        const std::size_t n = std::min(kChunk, sample_count - done);
        noise.resize(n * d);
        stream.fill_normals(noise);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < d; ++k) xs[k] = x[k] + scale * noise[i * d + k];
            const double g = LogQuadraticPayoff::value(xs);
            if (std::isnan(shift)) shift = g;
            if (g < shift) {
                const double factor = std::exp(-lambda * (shift - g));
                sum_w *= factor;
                sum_w2 *= factor * factor;
                for (double& v : sum_wg) v *= factor;
                sum_wh *= factor;
                shift = g;
            }
            const double w = std::exp(-lambda * (g - shift));
            const auto grad = LogQuadraticPayoff::gradient(xs);
            const Matrix hess = LogQuadraticPayoff::hessian(xs);
            sum_w += w;
            sum_w2 += w * w;
            for (std::size_t k = 0; k < d; ++k) {
                sum_wg[k] += w * grad[k];
                for (std::size_t j = 0; j < d; ++j) sum_wh(k, j) += w * (hess(k, j) - lambda * grad[k] * grad[j]);
            }
        }
        done += n;
    }

    const double count = static_cast<double>(sample_count);
    const double mean_w = sum_w / count;
    const double var_w = std::max(sum_w2 / count - mean_w * mean_w, 0.0) * count / (count - 1.0);

    HjbReference ref;
    ref.samples = sample_count;
    ref.y = shift - std::log(mean_w) / lambda;
    ref.y_stderr = std::sqrt(var_w / count) / (lambda * mean_w);
    std::vector<double> grad_u(d);
    for (std::size_t k = 0; k < d; ++k) grad_u[k] = sum_wg[k] / sum_w;
    ref.z.resize(d);
    for (std::size_t k = 0; k < d; ++k) ref.z[k] = grad_u[k] * p.vol;
    ref.gamma = Matrix(d, d);
    for (std::size_t k = 0; k < d; ++k)
        for (std::size_t j = 0; j < d; ++j)
            ref.gamma(k, j) = p.vol * (sum_wh(k, j) / sum_w + lambda * grad_u[k] * grad_u[j]);
    return ref;
}

HjbReference hjb_reference(const HjbParams& params, std::size_t sample_count, RngStream stream) {
    if (sample_count < 10'000) throw std::invalid_argument("hjb_reference: sample_count must be >= 1e4");
    const HjbParams p = completed(params);
    return hjb_reference_at(p, p.x0, sample_count, stream);
}

// --- Local volatility ----------------------------------------------------------------

double LocalVolParams::drift_at(double t) const {
    const double w1 = 2.0 * std::numbers::pi / period1;
    const double w2 = 2.0 * std::numbers::pi / period2;
    return a0 + a1 * std::sin(w1 * t) + a2 * std::sin(w2 * t);
}

double LocalVolParams::vol_at(double t) const {
    const double w1 = 2.0 * std::numbers::pi / period1;
    const double w2 = 2.0 * std::numbers::pi / period2;
    return b0 + b1 * std::sin(w1 * t) + b2 * std::sin(w2 * t);
}

double LocalVolParams::drift_integral(double t) const {
    const double w1 = 2.0 * std::numbers::pi / period1;
    const double w2 = 2.0 * std::numbers::pi / period2;
    return a0 * t + a1 * (1.0 - std::cos(w1 * t)) / w1 + a2 * (1.0 - std::cos(w2 * t)) / w2;
}

double LocalVolParams::variance_integral(double t) const {
    const double w1 = 2.0 * std::numbers::pi / period1;
    const double w2 = 2.0 * std::numbers::pi / period2;
    auto sin_sq = [t](double w) { return 0.5 * t - std::sin(2.0 * w * t) / (4.0 * w); };
    auto sin_int = [t](double w) { return (1.0 - std::cos(w * t)) / w; };
    double cross;
    if (w1 == w2) {
        cross = sin_sq(w1);
    } else {
        const double dw = w1 - w2, sw = w1 + w2;
        cross = 0.5 * (std::sin(dw * t) / dw - std::sin(sw * t) / sw);
    }
    return b0 * b0 * t + b1 * b1 * sin_sq(w1) + b2 * b2 * sin_sq(w2) + 2.0 * b0 * b1 * sin_int(w1) +
           2.0 * b0 * b2 * sin_int(w2) + 2.0 * b1 * b2 * cross;
}

double effective_volatility(double t, const LocalVolParams& p) {
    if (!(t < p.maturity)) throw std::domain_error("effective_volatility: need t < T");
    return std::sqrt((p.variance_integral(p.maturity) - p.variance_integral(t)) / (p.maturity - t));
}

namespace {

class LocalVolProblem final : public BsdeProblem {
public:
    explicit LocalVolProblem(const LocalVolParams& p)
        : BsdeProblem("local_vol", filled(p.d, std::log(p.x0)), p.maturity),
          p_(p),
          payoff_{filled(p.d, 1.0 / static_cast<double>(p.d)), p.strike} {}

    void drift(double t, std::span<const double>, std::span<double> out) const override {
        const double b = p_.vol_at(t);
        std::fill(out.begin(), out.end(), p_.drift_at(t) - 0.5 * b * b);
    }
    Matrix diffusion(double t) const override { return Matrix::diagonal(filled(dim(), p_.vol_at(t))); }

    double driver(double t, std::span<const double>, double y, std::span<const double> z) const override {
        const double theta = market_price(t);
        double s = p_.rate * y;
        for (double v : z) s += theta * v;
        return -s;
    }
    DriverPartials driver_partials(double t, std::span<const double>, double, std::span<const double>) const override {
        return {filled(dim(), 0.0), -p_.rate, filled(dim(), -market_price(t))};
    }

    double payoff(std::span<const double> x) const override { return payoff_.value(x); }
    std::vector<double> payoff_gradient(std::span<const double> x) const override { return payoff_.gradient(x); }
    Matrix payoff_hessian(std::span<const double> x) const override { return payoff_.hessian(x); }
    bool payoff_near_kink(std::span<const double> x, double tol) const override { return payoff_.near_kink(x, tol); }

    std::optional<Moments> moments(double t) const override {
        const double mean = x0()[0] + p_.drift_integral(t) - 0.5 * p_.variance_integral(t);
        return Moments{filled(dim(), mean), filled(dim(), std::sqrt(p_.variance_integral(t)))};
    }
    bool has_exact_solution() const override { return true; }
    std::optional<SolutionTriple> exact(double t, std::span<const double> x) const override {
        const double pricing = t < p_.maturity ? effective_volatility(t, p_) : p_.vol_at(t);
        return bs_closed_form(t, x,
                              {p_.maturity, p_.strike, p_.rate, payoff_.weights, filled(dim(), p_.dividend),
                               filled(dim(), pricing), filled(dim(), p_.vol_at(t))});
    }
    bool ln_domain() const override { return true; }

private:
    double market_price(double t) const { return (p_.drift_at(t) - p_.rate + p_.dividend) / p_.vol_at(t); }

    LocalVolParams p_;
    BasketCallPayoff payoff_;
};

}  // namespace

ProblemPtr make_local_vol(const LocalVolParams& p) {
    require(p.d >= 1, "local_vol: d must be >= 1");
    require(p.maturity > 0.0 && p.period1 > 0.0 && p.period2 > 0.0, "local_vol: maturity and periods must be positive");
    require(p.x0 > 0.0 && p.strike >= 0.0, "local_vol: need x0 > 0 and K >= 0");
    constexpr int kGrid = 10'000;
    for (int i = 0; i <= kGrid; ++i) {
        const double t = p.maturity * i / kGrid;
        require(p.vol_at(t) > 0.0, "local_vol: b(t) must stay positive on [0, T]");
    }
    auto problem = std::make_shared<LocalVolProblem>(p);
    self_check(*problem);
    return problem;
}

}  // namespace dlbdp

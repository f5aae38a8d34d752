#pragma once

#include "dlbdp/numcore.hpp"

#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dlbdp {

class ProblemError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct DriverPartials {
    std::vector<double> dx;  // 1 x d
    double dy = 0.0;
    std::vector<double> dz;  // 1 x d
};

/// (Y, Z, Gamma) at one state: Y scalar, Z a 1 x d row, Gamma d x d with Gamma(k, j) = dZ_k/dx_j.
struct SolutionTriple {
    double y = 0.0;
    std::vector<double> z;
    Matrix gamma;
};

struct Moments {
    std::vector<double> mean;
    std::vector<double> stddev;
};

/// A decoupled FBSDE with state-independent diffusion b(t):
///   dX = a(t, X) dt + b(t) dW,   -dY = f(t, X, Y, Z) dt - Z dW,   Y_T = g(X_T).
/// Implementations are immutable after construction.
class BsdeProblem {
public:
    BsdeProblem(std::string name, std::vector<double> x0, double terminal_time);
    virtual ~BsdeProblem() = default;

    const std::string& name() const noexcept { return name_; }
    std::size_t dim() const noexcept { return x0_.size(); }
    double terminal_time() const noexcept { return terminal_time_; }
    std::span<const double> x0() const noexcept { return x0_; }

    virtual void drift(double t, std::span<const double> x, std::span<double> out) const = 0;
    virtual Matrix drift_jacobian(double t, std::span<const double> x) const;
    virtual bool drift_state_independent() const { return true; }

    virtual Matrix diffusion(double t) const = 0;
    /// Default assumes a diagonal diffusion.
    virtual Matrix diffusion_inverse(double t) const;

    virtual double driver(double t, std::span<const double> x, double y, std::span<const double> z) const = 0;
    virtual DriverPartials driver_partials(double t, std::span<const double> x, double y,
                                           std::span<const double> z) const = 0;

    virtual double payoff(std::span<const double> x) const = 0;
    virtual std::vector<double> payoff_gradient(std::span<const double> x) const = 0;
    virtual Matrix payoff_hessian(std::span<const double> x) const = 0;

    /// Z_T = grad g(x) b(T).
    std::vector<double> terminal_z(std::span<const double> x) const;
    /// Gamma_T = d/dx (grad g b)(T, x) = b(T)^T Hess g(x).
    Matrix terminal_gamma(std::span<const double> x) const;

    virtual std::optional<Moments> moments(double t) const;
    virtual bool has_exact_solution() const { return false; }
    virtual std::optional<SolutionTriple> exact(double t, std::span<const double> x) const;

    /// True when the state is ln of a price; Gamma must be mapped back for scoring.
    virtual bool ln_domain() const { return false; }

    /// Probe filters for the self-check; kinks are where a.e. derivatives jump.
    virtual bool payoff_near_kink(std::span<const double> /*x*/, double /*tol*/) const { return false; }
    virtual bool driver_near_kink(double /*t*/, std::span<const double> /*x*/, double /*y*/,
                                  std::span<const double> /*z*/, double /*tol*/) const {
        return false;
    }

private:
    std::string name_;
    std::vector<double> x0_;
    double terminal_time_;
};

using ProblemPtr = std::shared_ptr<const BsdeProblem>;

/// Finite-difference audit run by every factory. Throws ProblemError on failure.
void self_check(const BsdeProblem& problem);

// --- Black-Scholes ---------------------------------------------------------------

struct BlackScholesParams {
    std::size_t d = 1;
    std::vector<double> x0;     // default 100 per asset
    std::vector<double> drift;  // a_k, default 0.05
    std::vector<double> vol;    // b_k, default 0.2
    std::vector<double> weights;  // c_k, default 1/d
    std::vector<double> dividend;  // delta_k, default 0
    double rate = 0.03;
    double strike = 100.0;
    double maturity = 1.0;

    /// Fills every empty vector with its default for dimension d.
    BlackScholesParams completed() const;
};

ProblemPtr make_black_scholes(const BlackScholesParams& params);

/// Inputs of the geometric-basket call formula. pricing_vol enters d1/d2;
/// diffusion multiplies the ln-domain gradient to form Z (they differ only for local volatility).
struct BasketCallInputs {
    double maturity = 1.0;
    double strike = 100.0;
    double rate = 0.03;
    std::vector<double> weights;
    std::vector<double> dividend;
    std::vector<double> pricing_vol;
    std::vector<double> diffusion;
};

/// Closed-form (Y, Z, Gamma) in ln-domain coordinates. At t = T the payoff and its a.e.
/// derivatives are returned.
SolutionTriple bs_closed_form(double t, std::span<const double> x_ln, const BasketCallInputs& in);

// --- Different lending/borrowing rates --------------------------------------------

enum class RatesPayoff { call, max_call_spread };

struct DifferentRatesParams {
    std::size_t d = 1;
    RatesPayoff payoff = RatesPayoff::call;
    double x0 = 100.0;
    double drift = 0.06;
    double vol = 0.2;
    double lending_rate = 0.04;    // R1
    double borrowing_rate = 0.06;  // R2
    double strike = 100.0;
    double strike_low = 120.0;
    double strike_high = 150.0;
    double maturity = 0.5;
};

ProblemPtr make_different_rates(const DifferentRatesParams& params);

// --- HJB -----------------------------------------------------------------------

struct HjbParams {
    std::size_t d = 1;
    double maturity = 0.5;
    std::vector<double> x0;  // default all ones
    double vol = 0.4472135954999579;  // sqrt(0.2)
};

ProblemPtr make_hjb(const HjbParams& params);

struct HjbReference {
    double y = 0.0;
    std::vector<double> z;
    Matrix gamma;
    double y_stderr = 0.0;
    std::size_t samples = 0;
};

/// Monte-Carlo value of u(0, x0) = -(1/lambda) ln E[exp(-lambda g(x0 + b W_T))] with
/// lambda = 2/b^2 (Cole-Hopf for the driver -sum (z_k/b)^2), plus Z0 = grad u b and
/// Gamma0 = b Hess u from the differentiated estimator.
HjbReference hjb_reference(const HjbParams& params, std::size_t sample_count, RngStream stream);
/// Same estimator at an arbitrary start point; all samples share the given stream.
HjbReference hjb_reference_at(const HjbParams& params, std::span<const double> x, std::size_t sample_count,
                              RngStream stream);

// --- Local volatility ------------------------------------------------------------

struct LocalVolParams {
    std::size_t d = 50;
    double maturity = 0.25;
    double x0 = 100.0;
    double strike = 100.0;
    double rate = 0.1;
    double dividend = 0.0;
    double a0 = 0.2, a1 = 0.1, a2 = 0.02;
    double b0 = 0.25, b1 = 0.125, b2 = 0.025;
    double period1 = 1.0;   // C1
    double period2 = 0.25;  // C2

    double drift_at(double t) const;
    double vol_at(double t) const;
    /// Antiderivatives with value 0 at s = 0.
    double drift_integral(double t) const;
    double variance_integral(double t) const;  // int_0^t b(s)^2 ds
};

ProblemPtr make_local_vol(const LocalVolParams& params);

/// sqrt( (1/(T - t)) int_t^T b(s)^2 ds ); domain error for t >= T.
double effective_volatility(double t, const LocalVolParams& params);

}  // namespace dlbdp

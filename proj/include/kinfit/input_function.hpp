#ifndef KINFIT_INPUT_FUNCTION_HPP
#define KINFIT_INPUT_FUNCTION_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

namespace kinfit {

/// Gamma-variate bolus shape: A * ((t-t0)/beta)^alpha * exp(-(t-t0)/beta)
/// for t > t0, zero otherwise. Times in minutes, amplitude in kBq/ml.
struct GammaVariateParams {
    double amplitude = 0.0;
    double t0_min = 0.0;
    double alpha = 1.0;
    double beta_min = 1.0;

    void validate() const {
        if (!(amplitude > 0.0) || !(alpha > 0.0) || !(beta_min > 0.0))
            throw std::invalid_argument("GammaVariateParams: A, alpha, beta must be > 0");
    }

    double peak_time_min() const { return t0_min + alpha * beta_min; }
    double peak_value() const { return amplitude * std::pow(alpha, alpha) * std::exp(-alpha); }
};

inline double gamma_variate(double t_min, const GammaVariateParams& p) {
    if (t_min <= p.t0_min) return 0.0;
    const double x = (t_min - p.t0_min) / p.beta_min;
    return p.amplitude * std::pow(x, p.alpha) * std::exp(-x);
}

/// Blood input function. Either a sampled TAC (piecewise linear, zero
/// before the first sample, held constant after the last) or a parametric
/// gamma-variate curve; defined for all t >= 0 either way.
class InputFunction {
public:
    enum class Mode { Sampled, Gamma };

    static InputFunction sampled(std::vector<double> times_min, std::vector<double> values) {
        if (times_min.empty() || times_min.size() != values.size())
            throw std::invalid_argument("InputFunction: empty or mismatched sample arrays");
        for (std::size_t i = 0; i < times_min.size(); ++i) {
            if (i + 1 < times_min.size() && !(times_min[i] < times_min[i + 1]))
                throw std::invalid_argument("InputFunction: sample times must be strictly increasing");
            if (values[i] < 0.0)
                throw std::invalid_argument("InputFunction: concentrations must be >= 0");
        }
        InputFunction f;
        f.mode_ = Mode::Sampled;
        f.times_ = std::move(times_min);
        f.values_ = std::move(values);
        return f;
    }

    static InputFunction gamma(const GammaVariateParams& params) {
        params.validate();
        InputFunction f;
        f.mode_ = Mode::Gamma;
        f.gamma_ = params;
        return f;
    }

    Mode mode() const { return mode_; }
    bool is_sampled() const { return mode_ == Mode::Sampled; }
    bool is_gamma() const { return mode_ == Mode::Gamma; }

    const std::vector<double>& sample_times_min() const { return times_; }
    const std::vector<double>& sample_values() const { return values_; }
    const GammaVariateParams& gamma_params() const { return gamma_; }

    double operator()(double t_min) const {
        if (mode_ == Mode::Gamma) return gamma_variate(t_min, gamma_);
        if (t_min <= times_.front()) return t_min < times_.front() ? 0.0 : values_.front();
        if (t_min >= times_.back()) return values_.back();
        const auto it = std::upper_bound(times_.begin(), times_.end(), t_min);
        const std::size_t hi = static_cast<std::size_t>(it - times_.begin());
        const std::size_t lo = hi - 1;
        const double w = (t_min - times_[lo]) / (times_[hi] - times_[lo]);
        return values_[lo] + w * (values_[hi] - values_[lo]);
    }

private:
    InputFunction() = default;

    Mode mode_ = Mode::Gamma;
    std::vector<double> times_;
    std::vector<double> values_;
    GammaVariateParams gamma_;
};

}  // namespace kinfit

#endif

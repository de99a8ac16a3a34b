#ifndef KINFIT_TESTS_ORACLES_HPP
#define KINFIT_TESTS_ORACLES_HPP

// Independent numerical oracles used to freeze expected values in the test
// suites. These deliberately avoid the library's own integration and solver
// paths: adaptive Cash-Karp RK45 here vs. matrix-exponential/fixed-step RK4
// in the library, brute-force scans vs. SVD shortcuts, etc.

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace oracles {

/// Adaptive Cash-Karp RK45 for y' = M y + w * u(t), y(0) = 0.
/// Returns y at each requested output time (strictly increasing).
inline Eigen::MatrixXd integrate_linear_system(
    const Eigen::MatrixXd& M, const Eigen::VectorXd& w,
    const std::function<double(double)>& u, const std::vector<double>& out_times,
    double rel_tol = 1e-10, double abs_tol = 1e-13) {
    const Eigen::Index n = M.rows();
    Eigen::MatrixXd out(n, static_cast<Eigen::Index>(out_times.size()));

    const auto f = [&](double t, const Eigen::VectorXd& y) -> Eigen::VectorXd {
        return M * y + w * u(t);
    };

    // Cash-Karp tableau
    static const double a2 = 1.0 / 5, a3 = 3.0 / 10, a4 = 3.0 / 5, a5 = 1.0, a6 = 7.0 / 8;
    static const double b21 = 1.0 / 5;
    static const double b31 = 3.0 / 40, b32 = 9.0 / 40;
    static const double b41 = 3.0 / 10, b42 = -9.0 / 10, b43 = 6.0 / 5;
    static const double b51 = -11.0 / 54, b52 = 5.0 / 2, b53 = -70.0 / 27, b54 = 35.0 / 27;
    static const double b61 = 1631.0 / 55296, b62 = 175.0 / 512, b63 = 575.0 / 13824,
                        b64 = 44275.0 / 110592, b65 = 253.0 / 4096;
    static const double c1 = 37.0 / 378, c3 = 250.0 / 621, c4 = 125.0 / 594, c6 = 512.0 / 1771;
    static const double d1 = 2825.0 / 27648, d3 = 18575.0 / 48384, d4 = 13525.0 / 55296,
                        d5 = 277.0 / 14336, d6 = 1.0 / 4;

    Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
    double t = 0.0;
    double h = 1e-4;
    for (std::size_t oi = 0; oi < out_times.size(); ++oi) {
        const double t_target = out_times[oi];
        if (t_target < t) throw std::invalid_argument("output times must be increasing");
        while (t < t_target) {
            bool clipped = false;
            double step = h;
            if (t + step >= t_target) {
                step = t_target - t;
                clipped = true;
            }
            const Eigen::VectorXd k1 = f(t, y);
            const Eigen::VectorXd k2 = f(t + a2 * step, y + step * (b21 * k1));
            const Eigen::VectorXd k3 = f(t + a3 * step, y + step * (b31 * k1 + b32 * k2));
            const Eigen::VectorXd k4 =
                f(t + a4 * step, y + step * (b41 * k1 + b42 * k2 + b43 * k3));
            const Eigen::VectorXd k5 =
                f(t + a5 * step, y + step * (b51 * k1 + b52 * k2 + b53 * k3 + b54 * k4));
            const Eigen::VectorXd k6 = f(
                t + a6 * step, y + step * (b61 * k1 + b62 * k2 + b63 * k3 + b64 * k4 + b65 * k5));
            const Eigen::VectorXd y5 = y + step * (c1 * k1 + c3 * k3 + c4 * k4 + c6 * k6);
            const Eigen::VectorXd y4 =
                y + step * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6);
            const double scale = abs_tol + rel_tol * std::max(y.cwiseAbs().maxCoeff(),
                                                              y5.cwiseAbs().maxCoeff());
            const double err = (y5 - y4).cwiseAbs().maxCoeff() / scale;
            if (err <= 1.0) {
                t += step;
                y = y5;
                if (!clipped) h = step * std::min(5.0, 0.9 * std::pow(std::max(err, 1e-16), -0.2));
            } else {
                h = step * std::max(0.1, 0.9 * std::pow(err, -0.25));
            }
        }
        out.col(static_cast<Eigen::Index>(oi)) = y;
    }
    return out;
}

/// Adaptive Simpson quadrature.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double tol = 1e-12, int depth = 30) {
    const std::function<double(double, double, double, double, double, double, int)> rec =
        [&](double lo, double hi, double flo, double fmid, double fhi, double whole,
            int d) -> double {
        const double m = 0.5 * (lo + hi);
        const double lm = 0.5 * (lo + m), rm = 0.5 * (m + hi);
        const double flm = f(lm), frm = f(rm);
        const double left = (m - lo) / 6.0 * (flo + 4.0 * flm + fmid);
        const double right = (hi - m) / 6.0 * (fmid + 4.0 * frm + fhi);
        if (d <= 0 || std::abs(left + right - whole) < 15.0 * tol)
            return left + right + (left + right - whole) / 15.0;
        return rec(lo, m, flo, flm, fmid, left, d - 1) +
               rec(m, hi, fmid, frm, fhi, right, d - 1);
    };
    const double m = 0.5 * (a + b);
    const double fa = f(a), fm = f(m), fb = f(b);
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return rec(a, b, fa, fm, fb, whole, depth);
}

}  // namespace oracles

#endif

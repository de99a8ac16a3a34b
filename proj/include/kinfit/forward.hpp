#ifndef KINFIT_FORWARD_HPP
#define KINFIT_FORWARD_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "kinfit/input_function.hpp"
#include "kinfit/model.hpp"
#include "kinfit/time_grid.hpp"

namespace kinfit {

/// Compartment concentrations at the frame midpoints (n_compartments x T).
struct CompartmentCurves {
    ModelSpec model;
    std::vector<double> times_min;
    Eigen::MatrixXd C;
};

namespace detail {

/// e^z and phi_k(z) = sum_j z^j / (j+k)!, k = 1..4. Series below the
/// cancellation threshold, closed-form recurrence above.
struct PhiSet {
    double ez, p1, p2, p3, p4;
};

inline double phi_series(double z, int k) {
    double term = 1.0;
    for (int i = 2; i <= k; ++i) term /= i;
    double sum = term;
    for (int j = 1; j < 40; ++j) {
        term *= z / (j + k);
        sum += term;
        if (std::abs(term) <= 1e-18 * std::abs(sum)) break;
    }
    return sum;
}

inline PhiSet phi_set(double z) {
    PhiSet s;
    s.ez = std::exp(z);
    if (std::abs(z) < 0.25) {
        s.p1 = phi_series(z, 1);
        s.p2 = phi_series(z, 2);
        s.p3 = phi_series(z, 3);
        s.p4 = phi_series(z, 4);
    } else {
        s.p1 = (s.ez - 1.0) / z;
        s.p2 = (s.p1 - 1.0) / z;
        s.p3 = (s.p2 - 0.5) / z;
        s.p4 = (s.p3 - 1.0 / 6.0) / z;
    }
    return s;
}

// Right-hand sides for the compartment ODEs and their forward sensitivity
// augmentations. State layout: [C (n), S_0 (n), ..., S_{p-1} (n)].

struct TwoCatPlain {
    static constexpr int kStates = 2;
    double m00, m01, m10, m11, w0;
    void deriv(const double* y, double u, double* dy) const {
        dy[0] = m00 * y[0] + m01 * y[1] + w0 * u;
        dy[1] = m10 * y[0] + m11 * y[1];
    }
};

struct ThreeRenalPlain {
    static constexpr int kStates = 3;
    double m00, m01, m10, m11, m21, m22, w0, w1;
    void deriv(const double* y, double u, double* dy) const {
        dy[0] = m00 * y[0] + m01 * y[1] + w0 * u;
        dy[1] = m10 * y[0] + m11 * y[1] + w1 * u;
        dy[2] = m21 * y[1] + m22 * y[2];
    }
};

struct TwoCatAug {
    static constexpr int kStates = 10;
    double m00, m01, m10, m11, w0;
    void deriv(const double* y, double u, double* dy) const {
        const double cf = y[0], cm = y[1];
        dy[0] = m00 * cf + m01 * cm + w0 * u;
        dy[1] = m10 * cf + m11 * cm;
        // dS_q/dt = M S_q + (dM/dk_q) C + (dw/dk_q) u, q in model order
        dy[2] = m00 * y[2] + m01 * y[3] + u;        // k_fb
        dy[3] = m10 * y[2] + m11 * y[3];
        dy[4] = m00 * y[4] + m01 * y[5] - cf;       // k_bf
        dy[5] = m10 * y[4] + m11 * y[5];
        dy[6] = m00 * y[6] + m01 * y[7] - cf;       // k_mf
        dy[7] = m10 * y[6] + m11 * y[7] + cf;
        dy[8] = m00 * y[8] + m01 * y[9] + cm;       // k_fm
        dy[9] = m10 * y[8] + m11 * y[9] - cm;
    }
};

struct ThreeRenalAug {
    static constexpr int kStates = 24;
    double m00, m01, m10, m11, m21, m22, w0, w1;
    void deriv(const double* y, double u, double* dy) const {
        const double cf = y[0], cm = y[1], ct = y[2];
        dy[0] = m00 * cf + m01 * cm + w0 * u;
        dy[1] = m10 * cf + m11 * cm + w1 * u;
        dy[2] = m21 * cm + m22 * ct;
        const auto prop = [&](int o) {
            dy[o] = m00 * y[o] + m01 * y[o + 1];
            dy[o + 1] = m10 * y[o] + m11 * y[o + 1];
            dy[o + 2] = m21 * y[o + 1] + m22 * y[o + 2];
        };
        prop(3);   dy[3] += u;                       // k_fa
        prop(6);   dy[7] += u;                       // k_ma
        prop(9);   dy[9] -= cf;                      // k_af
        prop(12);  dy[12] -= cf; dy[13] += cf;       // k_mf
        prop(15);  dy[15] += cm; dy[16] -= cm;       // k_fm
        prop(18);  dy[19] -= cm; dy[20] += cm;       // k_tm
        prop(21);  dy[23] -= ct;                     // k_ut
    }
};

struct EigenDecomp {
    bool ok = false;
    Eigen::VectorXd lambda;
    Eigen::MatrixXd V, Vinv;
};

/// Diagonalizes M when it has real, pairwise-distinct eigenvalues and the
/// decomposition reproduces M to near machine precision.
inline EigenDecomp try_decompose(const Eigen::MatrixXd& M) {
    EigenDecomp d;
    const Eigen::Index n = M.rows();
    Eigen::EigenSolver<Eigen::MatrixXd> es(M);
    if (es.info() != Eigen::Success) return d;
    const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < n; ++i)
        if (std::abs(es.eigenvalues()[i].imag()) > 1e-12 * scale) return d;
    Eigen::VectorXd lam = es.eigenvalues().real();
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            if (std::abs(lam[i] - lam[j]) <= 1e-9 * scale) return d;
    Eigen::MatrixXd V = es.eigenvectors().real();
    Eigen::MatrixXd Vinv = V.inverse();
    const double recon =
        (V * lam.asDiagonal() * Vinv - M).cwiseAbs().maxCoeff();
    if (!(recon <= 1e-11 * scale)) return d;
    d.ok = true;
    d.lambda = std::move(lam);
    d.V = std::move(V);
    d.Vinv = std::move(Vinv);
    return d;
}

}  // namespace detail

/// Solves the compartment forward problem
///     C'(t) = M C(t) + w_weights * IF(t),  C(0) = 0
/// on [0, last frame midpoint], reporting values at the frame midpoints.
///
/// When M is diagonalizable with distinct real eigenvalues, the solution
/// is propagated exactly through the eigen-decomposed matrix exponential,
/// with the forcing convolution integrated exactly for piecewise-linear
/// sampled input functions and by fourth-order exponential quadrature for
/// the smooth gamma-variate form. Degenerate spectra (e.g. k = 0) fall
/// back to fixed-step RK4 with step <= max_step_s.
///
/// Sensitivities dC/dk are integrated by RK4 on the augmented forward
/// sensitivity system, sharing the same time mesh. The solver precomputes
/// the mesh and all input-function samples, so one instance can serve
/// many parameter evaluations (it is immutable and thread-safe).
class ForwardSolver {
public:
    struct Options {
        double max_step_s = 0.25;
    };

    ForwardSolver(ModelSpec model, InputFunction input, TimeGrid grid)
        : ForwardSolver(model, std::move(input), std::move(grid), Options()) {}

    ForwardSolver(ModelSpec model, InputFunction input, TimeGrid grid, Options opt)
        : model_(model), if_(std::move(input)), grid_(std::move(grid)), opt_(opt) {
        if (!(opt_.max_step_s > 0.0))
            throw std::invalid_argument("ForwardSolver: max_step_s must be > 0");
        build_mesh();
        if_mid_.resize(grid_.size());
        for (std::size_t j = 0; j < grid_.size(); ++j)
            if_mid_[j] = if_(grid_.midpoint_min(j));
    }

    const ModelSpec& model() const { return model_; }
    const TimeGrid& grid() const { return grid_; }
    const InputFunction& input_function() const { return if_; }
    const std::vector<double>& if_at_midpoints() const { return if_mid_; }

    CompartmentCurves solve(const RateConstants& rates) const {
        const SystemMatrices sys = build_system(model_, rates);
        const int n = model_.n_compartments();
        CompartmentCurves out{model_, grid_.midpoints_min(),
                              Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(grid_.size()))};
        const detail::EigenDecomp dec = detail::try_decompose(sys.M);
        if (dec.ok) {
            solve_eigen(sys, dec, out.C);
        } else {
            solve_rk4_plain(sys, out.C);
        }
        clamp_roundoff_negatives(out.C);
        return out;
    }

    struct SensitivityResult {
        CompartmentCurves curves;
        /// T x p matrix of d(sum_i C_i(t_j))/dk_q.
        Eigen::MatrixXd dsum_dk;
    };

    SensitivityResult solve_with_sensitivities(const RateConstants& rates) const {
        const SystemMatrices sys = build_system(model_, rates);
        const int n = model_.n_compartments();
        const int p = model_.n_params();
        const Eigen::Index T = static_cast<Eigen::Index>(grid_.size());
        SensitivityResult res{
            CompartmentCurves{model_, grid_.midpoints_min(), Eigen::MatrixXd::Zero(n, T)},
            Eigen::MatrixXd::Zero(T, p)};
        if (model_.kind == ModelKind::TwoCatenary) {
            detail::TwoCatAug f{sys.M(0, 0), sys.M(0, 1), sys.M(1, 0), sys.M(1, 1),
                                sys.w_weights[0]};
            march_rk4<detail::TwoCatAug>(f, [&](int out_idx, const double* y) {
                for (int i = 0; i < 2; ++i) res.curves.C(i, out_idx) = y[i];
                for (int q = 0; q < 4; ++q)
                    res.dsum_dk(out_idx, q) = y[2 + 2 * q] + y[3 + 2 * q];
            });
        } else {
            detail::ThreeRenalAug f{sys.M(0, 0), sys.M(0, 1), sys.M(1, 0), sys.M(1, 1),
                                    sys.M(2, 1), sys.M(2, 2), sys.w_weights[0],
                                    sys.w_weights[1]};
            march_rk4<detail::ThreeRenalAug>(f, [&](int out_idx, const double* y) {
                for (int i = 0; i < 3; ++i) res.curves.C(i, out_idx) = y[i];
                for (int q = 0; q < 7; ++q)
                    res.dsum_dk(out_idx, q) = y[3 + 3 * q] + y[4 + 3 * q] + y[5 + 3 * q];
            });
        }
        return res;
    }

private:
    struct Interval {
        double t0_min = 0.0;
        double len_min = 0.0;
        double h_min = 0.0;
        int n_sub = 0;
        std::size_t u_half_off = 0;
        std::size_t u_third_off = 0;
        int output_index = -1;  // >= 0 when the interval end is a frame midpoint
        double u_start = 0.0;
        double u_end = 0.0;
    };

    void build_mesh() {
        std::vector<double> knots;
        knots.push_back(0.0);
        const double t_last = grid_.last_midpoint_min();
        if (if_.is_sampled()) {
            for (double ts : if_.sample_times_min())
                if (ts > 0.0 && ts < t_last) knots.push_back(ts);
        }
        for (double tm : grid_.midpoints_min()) knots.push_back(tm);
        std::sort(knots.begin(), knots.end());
        knots.erase(std::unique(knots.begin(), knots.end(),
                                [](double a, double b) { return std::abs(a - b) < 1e-12; }),
                    knots.end());

        const double hmax = opt_.max_step_s / 60.0;
        std::size_t half_off = 0, third_off = 0;
        std::size_t mid_cursor = 0;
        const auto& mids = grid_.midpoints_min();
        mesh_.clear();
        for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
            Interval iv;
            iv.t0_min = knots[i];
            iv.len_min = knots[i + 1] - knots[i];
            iv.n_sub = std::max(1, static_cast<int>(std::ceil(iv.len_min / hmax - 1e-12)));
            iv.h_min = iv.len_min / iv.n_sub;
            iv.u_half_off = half_off;
            half_off += 2 * static_cast<std::size_t>(iv.n_sub) + 1;
            if (if_.is_gamma()) {
                iv.u_third_off = third_off;
                third_off += 3 * static_cast<std::size_t>(iv.n_sub) + 1;
            }
            while (mid_cursor < mids.size() && mids[mid_cursor] < knots[i + 1] - 1e-12)
                ++mid_cursor;  // defensive; midpoints are knots by construction
            if (mid_cursor < mids.size() && std::abs(mids[mid_cursor] - knots[i + 1]) < 1e-12) {
                iv.output_index = static_cast<int>(mid_cursor);
                ++mid_cursor;
            }
            iv.u_start = if_(iv.t0_min);
            iv.u_end = if_(knots[i + 1]);
            mesh_.push_back(iv);
        }

        u_half_.resize(half_off);
        for (const Interval& iv : mesh_)
            for (int s = 0; s <= 2 * iv.n_sub; ++s)
                u_half_[iv.u_half_off + s] = if_(iv.t0_min + 0.5 * iv.h_min * s);
        if (if_.is_gamma()) {
            u_third_.resize(third_off);
            for (const Interval& iv : mesh_)
                for (int s = 0; s <= 3 * iv.n_sub; ++s)
                    u_third_[iv.u_third_off + s] = if_(iv.t0_min + iv.h_min * s / 3.0);
        }
    }

    template <typename Deriv, typename Record>
    void march_rk4(const Deriv& f, Record&& record) const {
        constexpr int NS = Deriv::kStates;
        std::array<double, NS> y{}, yt{}, k1{}, k2{}, k3{}, k4{};
        for (const Interval& iv : mesh_) {
            const double h = iv.h_min;
            const double* u = u_half_.data() + iv.u_half_off;
            for (int s = 0; s < iv.n_sub; ++s) {
                const double u0 = u[2 * s], um = u[2 * s + 1], u1 = u[2 * s + 2];
                f.deriv(y.data(), u0, k1.data());
                for (int i = 0; i < NS; ++i) yt[i] = y[i] + 0.5 * h * k1[i];
                f.deriv(yt.data(), um, k2.data());
                for (int i = 0; i < NS; ++i) yt[i] = y[i] + 0.5 * h * k2[i];
                f.deriv(yt.data(), um, k3.data());
                for (int i = 0; i < NS; ++i) yt[i] = y[i] + h * k3[i];
                f.deriv(yt.data(), u1, k4.data());
                for (int i = 0; i < NS; ++i)
                    y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if (iv.output_index >= 0) record(iv.output_index, y.data());
        }
    }

    void solve_rk4_plain(const SystemMatrices& sys, Eigen::MatrixXd& C) const {
        if (model_.kind == ModelKind::TwoCatenary) {
            detail::TwoCatPlain f{sys.M(0, 0), sys.M(0, 1), sys.M(1, 0), sys.M(1, 1),
                                  sys.w_weights[0]};
            march_rk4<detail::TwoCatPlain>(f, [&](int idx, const double* y) {
                C(0, idx) = y[0];
                C(1, idx) = y[1];
            });
        } else {
            detail::ThreeRenalPlain f{sys.M(0, 0), sys.M(0, 1), sys.M(1, 0), sys.M(1, 1),
                                      sys.M(2, 1), sys.M(2, 2), sys.w_weights[0],
                                      sys.w_weights[1]};
            march_rk4<detail::ThreeRenalPlain>(f, [&](int idx, const double* y) {
                C(0, idx) = y[0];
                C(1, idx) = y[1];
                C(2, idx) = y[2];
            });
        }
    }

    void solve_eigen(const SystemMatrices& sys, const detail::EigenDecomp& dec,
                     Eigen::MatrixXd& C) const {
        const int n = model_.n_compartments();
        const Eigen::VectorXd b = dec.Vinv * sys.w_weights;
        Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
        std::vector<detail::PhiSet> phis(n);
        for (const Interval& iv : mesh_) {
            if (if_.is_sampled()) {
                // IF is linear across the whole interval: exact update.
                const double L = iv.len_min;
                const double slope = (iv.u_end - iv.u_start) / L;
                for (int i = 0; i < n; ++i) {
                    const detail::PhiSet ph = detail::phi_set(dec.lambda[i] * L);
                    y[i] = ph.ez * y[i] + L * (iv.u_start * ph.p1 + slope * L * ph.p2);
                }
            } else {
                const double h = iv.h_min;
                const double d = h / 3.0;
                for (int i = 0; i < n; ++i) phis[i] = detail::phi_set(dec.lambda[i] * h);
                const double* u = u_third_.data() + iv.u_third_off;
                for (int s = 0; s < iv.n_sub; ++s) {
                    const double u0 = u[3 * s], u1 = u[3 * s + 1];
                    const double u2 = u[3 * s + 2], u3 = u[3 * s + 3];
                    // Newton divided differences -> monomial coefficients of the
                    // cubic interpolant of IF on the substep.
                    const double d1 = (u1 - u0) / d;
                    const double d2 = (u2 - 2.0 * u1 + u0) / (2.0 * d * d);
                    const double d3 = (u3 - 3.0 * u2 + 3.0 * u1 - u0) / (6.0 * d * d * d);
                    const double c0 = u0;
                    const double c1 = d1 - d * d2 + 2.0 * d * d * d3;
                    const double c2 = d2 - 3.0 * d * d3;
                    const double c3 = d3;
                    for (int i = 0; i < n; ++i) {
                        const detail::PhiSet& ph = phis[i];
                        const double integral =
                            h * (c0 * ph.p1 +
                                 h * (c1 * ph.p2 + h * (2.0 * c2 * ph.p3 + 6.0 * h * c3 * ph.p4)));
                        y[i] = ph.ez * y[i] + integral;
                    }
                }
            }
            if (iv.output_index >= 0)
                C.col(iv.output_index) = dec.V * y.cwiseProduct(b);
        }
    }

    static void clamp_roundoff_negatives(Eigen::MatrixXd& C) {
        const double scale = C.cwiseAbs().maxCoeff();
        const double tol = 1e-9 * (scale + 1e-300);
        for (Eigen::Index j = 0; j < C.cols(); ++j)
            for (Eigen::Index i = 0; i < C.rows(); ++i)
                if (C(i, j) < 0.0 && C(i, j) > -tol) C(i, j) = 0.0;
    }

    ModelSpec model_;
    InputFunction if_;
    TimeGrid grid_;
    Options opt_;
    std::vector<Interval> mesh_;
    std::vector<double> u_half_;
    std::vector<double> u_third_;
    std::vector<double> if_mid_;
};

/// One-shot forward solve at the frame midpoints.
inline CompartmentCurves solve_forward(const ModelSpec& model, const RateConstants& rates,
                                       const InputFunction& input, const TimeGrid& grid) {
    return ForwardSolver(model, input, grid).solve(rates);
}

/// Measured tissue concentration: (1 - V_b) * sum_i C_i(t) + V_b * IF(t).
inline std::vector<double> tissue_measurement(const CompartmentCurves& curves,
                                              const InputFunction& input, double v_b) {
    if (!(v_b >= 0.0 && v_b <= 1.0))
        throw std::invalid_argument("tissue_measurement: V_b must be in [0, 1]");
    std::vector<double> tac(curves.times_min.size());
    for (std::size_t j = 0; j < tac.size(); ++j)
        tac[j] = (1.0 - v_b) * curves.C.col(static_cast<Eigen::Index>(j)).sum() +
                 v_b * input(curves.times_min[j]);
    return tac;
}

/// T x p matrix of d[alpha^T C(t_j)]/dk_q with alpha = (1 - V_b) * 1,
/// from the augmented forward sensitivity ODEs.
inline Eigen::MatrixXd sensitivities(const ModelSpec& model, const RateConstants& rates,
                                     const InputFunction& input, const TimeGrid& grid,
                                     double v_b) {
    if (!(v_b >= 0.0 && v_b <= 1.0))
        throw std::invalid_argument("sensitivities: V_b must be in [0, 1]");
    ForwardSolver solver(model, input, grid);
    return (1.0 - v_b) * solver.solve_with_sensitivities(rates).dsum_dk;
}

}  // namespace kinfit

#endif

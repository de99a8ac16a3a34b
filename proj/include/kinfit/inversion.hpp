#ifndef KINFIT_INVERSION_HPP
#define KINFIT_INVERSION_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "kinfit/forward.hpp"
#include "kinfit/image.hpp"
#include "kinfit/input_function.hpp"
#include "kinfit/model.hpp"
#include "kinfit/parallel.hpp"
#include "kinfit/rng.hpp"
#include "kinfit/time_grid.hpp"

namespace kinfit {

/// Knobs of the pixel-wise regularized Gauss-Newton fit.
struct FitConfig {
    /// ||tac||_2 at or below this is treated as background: k = 0, no fit.
    double activity_threshold = 1e2;
    /// Stop when ||tac - V_b IF - alpha^T C(k)||_2 / ||tac||_2 <= this.
    /// 0.1 suits 20 dB data; use noiseless() for synthetic exact TACs.
    double stop_tolerance = 0.1;
    int max_iterations = 50;
    /// Initial guess: uniform-random in (0,1)^p seeded per pixel unless a
    /// fixed vector is supplied.
    bool use_fixed_initial = false;
    Eigen::VectorXd fixed_initial;
    std::uint64_t seed = 0;
    /// GCV candidate grid: gcv_grid_points log-spaced values in
    /// [10^gcv_exp_min, 10^gcv_exp_max] times sigma_max(F)^2.
    int gcv_grid_points = 60;
    double gcv_exp_min = -8.0;
    double gcv_exp_max = 8.0;
    /// Integrator step cap (seconds) for the forward/sensitivity solves.
    double max_step_s = 0.25;
    /// Stop after this many consecutive residual increases.
    int divergence_patience = 5;

    static FitConfig noiseless() {
        FitConfig c;
        c.stop_tolerance = 1e-4;
        return c;
    }

    void validate(int n_params) const {
        if (!(activity_threshold >= 0.0))
            throw std::invalid_argument("FitConfig: activity_threshold must be >= 0");
        if (!(stop_tolerance > 0.0))
            throw std::invalid_argument("FitConfig: stop_tolerance must be > 0");
        if (max_iterations < 1)
            throw std::invalid_argument("FitConfig: max_iterations must be >= 1");
        if (gcv_grid_points < 1 || !(gcv_exp_max >= gcv_exp_min))
            throw std::invalid_argument("FitConfig: bad GCV grid");
        if (use_fixed_initial && fixed_initial.size() != n_params)
            throw std::invalid_argument("FitConfig: fixed_initial has wrong size");
    }
};

enum class FitStatus { Converged, MaxIterations, BelowActivityThreshold };

inline double fit_status_code(FitStatus s) {
    switch (s) {
        case FitStatus::BelowActivityThreshold: return 0.0;
        case FitStatus::Converged: return 1.0;
        case FitStatus::MaxIterations: return 2.0;
    }
    return -1.0;
}

struct FitResult {
    RateConstants k_hat;
    bool converged = false;
    int iterations = 0;
    std::vector<double> relative_residual_history;
    std::vector<double> selected_r_history;
    FitStatus status = FitStatus::BelowActivityThreshold;
    /// Relative residual of k_hat (0 for below-threshold pixels).
    double final_relative_residual = 0.0;
};

struct Linearization {
    Eigen::MatrixXd F;  // T x p, rows are grad_k F_t(k)^T
    Eigen::VectorXd Y;  // negative model residual, eq. (18) sign convention
};

namespace detail {

/// SVD view of the Gauss-Newton system shared by the GCV evaluation and
/// the Tikhonov step solve.
class GaussNewtonSvd {
public:
    GaussNewtonSvd(const Eigen::MatrixXd& F, const Eigen::VectorXd& Y)
        : T_(F.rows()),
          svd_(F, Eigen::ComputeThinU | Eigen::ComputeThinV),
          beta_(svd_.matrixU().transpose() * Y) {
        rho_sq_ = std::max(0.0, Y.squaredNorm() - beta_.squaredNorm());
    }

    double sigma_max() const { return svd_.singularValues().size() ? svd_.singularValues()[0] : 0.0; }
    double sigma_min() const {
        const auto& s = svd_.singularValues();
        return s.size() ? s[s.size() - 1] : 0.0;
    }

    /// GCV(r) = ||(I - F (rI + F^T F)^{-1} F^T) Y||^2 / trace(...)^2.
    double gcv(double r) const {
        const auto& s = svd_.singularValues();
        double num = rho_sq_;
        double trace = static_cast<double>(T_);
        for (Eigen::Index i = 0; i < s.size(); ++i) {
            const double s2 = s[i] * s[i];
            const double one_minus_f = r / (s2 + r);
            num += one_minus_f * one_minus_f * beta_[i] * beta_[i];
            trace -= s2 / (s2 + r);
        }
        return num / (trace * trace);
    }

    /// delta solving (r I + F^T F) delta = F^T Y.
    Eigen::VectorXd step(double r) const {
        const auto& s = svd_.singularValues();
        if (r == 0.0) {
            const double smax = sigma_max();
            if (svd_.matrixV().rows() > s.size() || sigma_min() <= 1e-12 * smax || smax == 0.0)
                throw std::runtime_error("regularized_step: r = 0 with singular F^T F");
        }
        Eigen::VectorXd coef(s.size());
        for (Eigen::Index i = 0; i < s.size(); ++i)
            coef[i] = s[i] * beta_[i] / (s[i] * s[i] + r);
        return svd_.matrixV() * coef;
    }

private:
    Eigen::Index T_;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd_;
    Eigen::VectorXd beta_;
    double rho_sq_ = 0.0;
};

}  // namespace detail

/// Log-spaced GCV candidate grid, scaled by `scale` (typically
/// sigma_max(F)^2; a non-positive scale falls back to 1).
inline std::vector<double> default_gcv_grid(double scale, int n_points = 60,
                                            double exp_min = -8.0, double exp_max = 8.0) {
    if (!(scale > 0.0)) scale = 1.0;
    std::vector<double> grid(static_cast<std::size_t>(n_points));
    if (n_points == 1) {
        grid[0] = scale * std::pow(10.0, exp_max);
        return grid;
    }
    for (int j = 0; j < n_points; ++j)
        grid[static_cast<std::size_t>(j)] =
            scale * std::pow(10.0, exp_min + (exp_max - exp_min) * j / (n_points - 1));
    return grid;
}

/// Picks the grid value minimizing GCV; ties broken toward larger r
/// (more damping). An all-zero F yields a flat GCV and hence the largest
/// grid value.
inline double gcv_select(const Eigen::MatrixXd& F, const Eigen::VectorXd& Y,
                         const std::vector<double>& grid) {
    if (grid.empty()) throw std::invalid_argument("gcv_select: empty grid");
    detail::GaussNewtonSvd sys(F, Y);
    std::vector<double> sorted = grid;
    std::sort(sorted.begin(), sorted.end());
    double best_r = sorted.front();
    double best_g = std::numeric_limits<double>::infinity();
    for (double r : sorted) {
        if (!(r > 0.0)) throw std::invalid_argument("gcv_select: grid values must be > 0");
        const double g = sys.gcv(r);
        if (g <= best_g) {
            best_g = g;
            best_r = r;
        }
    }
    return best_r;
}

/// Tikhonov-regularized Gauss-Newton step: (r I + F^T F) delta = F^T Y.
inline Eigen::VectorXd regularized_step(const Eigen::MatrixXd& F, const Eigen::VectorXd& Y,
                                        double r) {
    if (!(r >= 0.0)) throw std::invalid_argument("regularized_step: r must be >= 0");
    return detail::GaussNewtonSvd(F, Y).step(r);
}

/// Zeroes the step components that would make k + delta non-positive
/// (the diagonal projection matrix P of the update rule).
inline Eigen::VectorXd project_step(const Eigen::VectorXd& k, const Eigen::VectorXd& delta) {
    if (k.size() != delta.size())
        throw std::invalid_argument("project_step: size mismatch");
    Eigen::VectorXd out(delta.size());
    for (Eigen::Index q = 0; q < delta.size(); ++q)
        out[q] = (k[q] + delta[q] > 0.0) ? delta[q] : 0.0;
    return out;
}

/// Builds the discretized Gauss-Newton system at k:
///   F(j,q) = d[alpha^T C(t_j)]/dk_q,  Y_j = tac_j - V_b IF(t_j) - alpha^T C(t_j).
inline Linearization assemble_linearization(const ForwardSolver& solver,
                                            const RateConstants& k, double v_b,
                                            const std::vector<double>& tac) {
    if (tac.size() != solver.grid().size())
        throw std::invalid_argument("assemble_linearization: tac length != frame count");
    if (!(v_b >= 0.0 && v_b <= 1.0))
        throw std::invalid_argument("assemble_linearization: V_b must be in [0, 1]");
    const auto sens = solver.solve_with_sensitivities(k);
    const Eigen::Index T = static_cast<Eigen::Index>(tac.size());
    Linearization lin{(1.0 - v_b) * sens.dsum_dk, Eigen::VectorXd(T)};
    const auto& if_mid = solver.if_at_midpoints();
    for (Eigen::Index j = 0; j < T; ++j)
        lin.Y[j] = tac[static_cast<std::size_t>(j)] - v_b * if_mid[static_cast<std::size_t>(j)] -
                   (1.0 - v_b) * sens.curves.C.col(j).sum();
    return lin;
}

inline Linearization assemble_linearization(const ModelSpec& model, const RateConstants& k,
                                            const InputFunction& input, const TimeGrid& grid,
                                            double v_b, const std::vector<double>& tac) {
    ForwardSolver solver(model, input, grid);
    return assemble_linearization(solver, k, v_b, tac);
}

/// Pixel-wise iteratively regularized Gauss-Newton fit with GCV-selected
/// Tikhonov parameter, non-negativity projection and relative-residual
/// stopping. Below the activity threshold the pixel is classified as
/// background (k = 0) without fitting.
inline FitResult fit_pixel(const std::vector<double>& tac, const ForwardSolver& solver,
                           double v_b, const FitConfig& config) {
    const ModelSpec model = solver.model();
    const int p = model.n_params();
    config.validate(p);
    if (tac.size() != solver.grid().size())
        throw std::invalid_argument("fit_pixel: tac length != frame count");

    FitResult res;
    res.k_hat = RateConstants(model, Eigen::VectorXd::Zero(p));

    double tac_norm = 0.0;
    for (double v : tac) tac_norm += v * v;
    tac_norm = std::sqrt(tac_norm);
    if (tac_norm <= config.activity_threshold) {
        res.status = FitStatus::BelowActivityThreshold;
        return res;
    }

    SplitMix rng(config.seed);
    const auto draw_start = [&]() {
        Eigen::VectorXd k0(p);
        for (int q = 0; q < p; ++q) k0[q] = rng.next_uniform01();
        return k0;
    };

    Eigen::VectorXd k;
    if (config.use_fixed_initial) {
        k = config.fixed_initial;
        if (k.minCoeff() < 0.0)
            throw std::invalid_argument("fit_pixel: fixed initial guess must be >= 0");
    } else {
        k = draw_start();
    }

    Eigen::VectorXd best_k = k;
    double best_res = std::numeric_limits<double>::infinity();
    double prev_res = std::numeric_limits<double>::infinity();
    int consecutive_increases = 0;
    int stagnant = 0;
    res.status = FitStatus::MaxIterations;

    // Relative improvement below which an accepted step counts as stagnant;
    // after `kStallPatience` of those in a row the trajectory is considered
    // trapped and restarted from the next seeded random draw.
    constexpr double kStallImprovement = 1e-4;
    constexpr int kStallPatience = 10;

    Linearization lin = assemble_linearization(solver, RateConstants(model, k), v_b, tac);
    for (int iter = 0; iter < config.max_iterations; ++iter) {
        const double rel = lin.Y.norm() / tac_norm;
        res.relative_residual_history.push_back(rel);
        if (rel < best_res) {
            best_res = rel;
            best_k = k;
        }
        if (rel <= config.stop_tolerance) {
            res.status = FitStatus::Converged;
            best_k = k;
            best_res = rel;
            break;
        }

        const bool may_restart =
            !config.use_fixed_initial && iter + 1 < config.max_iterations;
        const auto restart = [&]() {
            k = draw_start();
            lin = assemble_linearization(solver, RateConstants(model, k), v_b, tac);
            prev_res = std::numeric_limits<double>::infinity();
            consecutive_increases = 0;
            stagnant = 0;
        };

        if (rel > prev_res) {
            if (++consecutive_increases >= config.divergence_patience) break;
        } else {
            consecutive_increases = 0;
        }
        if (prev_res < std::numeric_limits<double>::infinity() &&
            (prev_res - rel) < kStallImprovement * prev_res) {
            if (++stagnant >= kStallPatience) {
                if (!may_restart) break;
                restart();
                continue;
            }
        } else {
            stagnant = 0;
        }
        prev_res = rel;

        detail::GaussNewtonSvd sys(lin.F, lin.Y);
        const auto grid = default_gcv_grid(sys.sigma_max() * sys.sigma_max(),
                                           config.gcv_grid_points, config.gcv_exp_min,
                                           config.gcv_exp_max);
        double r = grid.front();
        double best_g = std::numeric_limits<double>::infinity();
        for (double cand : grid) {
            const double g = sys.gcv(cand);
            if (g <= best_g) {
                best_g = g;
                r = cand;
            }
        }

        // Take the step at the GCV-selected r. If the projected step fails
        // to reduce the residual (overshoot, or fully projected onto the
        // boundary), escalate the damping through the candidate grid; when
        // even the most damped (near-gradient) step makes no progress the
        // iterate sits at a constrained stationary point.
        bool accepted = false;
        std::size_t grid_pos =
            static_cast<std::size_t>(std::lower_bound(grid.begin(), grid.end(), r) -
                                     grid.begin());
        while (true) {
            const Eigen::VectorXd delta = sys.step(r);
            Eigen::VectorXd k_trial = k + project_step(k, delta);
            for (int q = 0; q < p; ++q)
                if (k_trial[q] < 0.0) k_trial[q] = 0.0;  // roundoff at the boundary
            Linearization lin_trial =
                assemble_linearization(solver, RateConstants(model, k_trial), v_b, tac);
            const double rel_trial = lin_trial.Y.norm() / tac_norm;
            if (rel_trial < rel) {
                k = std::move(k_trial);
                lin = std::move(lin_trial);
                res.selected_r_history.push_back(r);
                accepted = true;
                break;
            }
            // next candidate at least a decade up
            std::size_t next = grid_pos;
            while (next + 1 < grid.size() && grid[next] < 10.0 * r) ++next;
            if (next == grid_pos || !(grid[next] > r)) break;
            grid_pos = next;
            r = grid[grid_pos];
        }
        if (!accepted) {
            if (!may_restart) break;
            restart();
            continue;
        }
        if (k.minCoeff() < 0.0)
            throw std::logic_error("fit_pixel: iterate left the feasible set");
    }

    res.iterations = static_cast<int>(res.relative_residual_history.size());
    res.k_hat = RateConstants(model, best_k);
    res.final_relative_residual = best_res;
    res.converged = res.status == FitStatus::Converged;
    return res;
}

inline FitResult fit_pixel(const std::vector<double>& tac, const InputFunction& input,
                           const TimeGrid& grid, double v_b, const ModelSpec& model,
                           const FitConfig& config) {
    ForwardSolver solver(model, input, grid, ForwardSolver::Options{config.max_step_s});
    return fit_pixel(tac, solver, v_b, config);
}

/// Per-pixel compartment model assignment for mixed-model images.
class ModelMask {
public:
    ModelMask(int rows, int cols, ModelKind fill)
        : rows_(rows), cols_(cols), m_(static_cast<std::size_t>(rows) * cols, fill) {
        if (rows <= 0 || cols <= 0) throw std::invalid_argument("ModelMask: dims must be > 0");
    }

    static ModelMask uniform(int rows, int cols, ModelKind kind) {
        return ModelMask(rows, cols, kind);
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    ModelKind at(int i, int j) const { return m_[static_cast<std::size_t>(i) * cols_ + j]; }
    ModelKind& at(int i, int j) { return m_[static_cast<std::size_t>(i) * cols_ + j]; }

    bool contains(ModelKind kind) const {
        return std::find(m_.begin(), m_.end(), kind) != m_.end();
    }

private:
    int rows_, cols_;
    std::vector<ModelKind> m_;
};

/// One spatial map per kinetic parameter plus per-pixel fit diagnostics.
/// Maps are zero wherever the pixel was not fitted with this model (or was
/// below the activity threshold); status and residual cover every pixel.
struct ParametricImages {
    ModelSpec model;
    std::vector<Image2D> maps;
    Image2D status;    // fit_status_code values
    Image2D residual;  // final relative residual per pixel
};

/// Fits every pixel independently with its assigned model and assembles
/// the parametric images. Per-pixel RNG seeds derive from (seed, i, j),
/// so the result is reproducible and independent of evaluation order;
/// pixels are processed in parallel.
inline std::vector<ParametricImages> fit_image(const DynamicImage& dyn,
                                               const InputFunction& input, double v_b,
                                               const ModelMask& mask, const FitConfig& config) {
    if (mask.rows() != dyn.rows() || mask.cols() != dyn.cols())
        throw std::invalid_argument("fit_image: mask dimensions != image dimensions");

    std::vector<ModelSpec> kinds;
    for (ModelKind kind : {ModelKind::TwoCatenary, ModelKind::ThreeRenal})
        if (mask.contains(kind)) kinds.push_back(ModelSpec{kind});

    std::vector<ParametricImages> out;
    std::vector<const ForwardSolver*> solvers(2, nullptr);
    std::vector<ForwardSolver> storage;
    storage.reserve(kinds.size());
    for (const ModelSpec& spec : kinds) {
        storage.emplace_back(spec, input, dyn.grid(),
                             ForwardSolver::Options{config.max_step_s});
        out.push_back(ParametricImages{
            spec,
            std::vector<Image2D>(static_cast<std::size_t>(spec.n_params()),
                                 Image2D(dyn.rows(), dyn.cols())),
            Image2D(dyn.rows(), dyn.cols()), Image2D(dyn.rows(), dyn.cols())});
    }
    for (std::size_t s = 0; s < kinds.size(); ++s)
        solvers[static_cast<std::size_t>(kinds[s].kind)] = &storage[s];

    const int rows = dyn.rows(), cols = dyn.cols();
    parallel_for(static_cast<std::size_t>(rows), [&](std::size_t row) {
        const int i = static_cast<int>(row);
        for (int j = 0; j < cols; ++j) {
            const ModelKind kind = mask.at(i, j);
            const ForwardSolver& solver = *solvers[static_cast<std::size_t>(kind)];
            FitConfig pixel_config = config;
            pixel_config.seed = derive_seed(config.seed, static_cast<std::uint64_t>(i),
                                            static_cast<std::uint64_t>(j));
            const FitResult fit = fit_pixel(dyn.tac(i, j), solver, v_b, pixel_config);
            for (std::size_t s = 0; s < out.size(); ++s) {
                out[s].status.at(i, j) = fit_status_code(fit.status);
                out[s].residual.at(i, j) = fit.final_relative_residual;
                if (out[s].model.kind == kind)
                    for (int q = 0; q < out[s].model.n_params(); ++q)
                        out[s].maps[static_cast<std::size_t>(q)].at(i, j) = fit.k_hat.k[q];
            }
        }
    });
    return out;
}

}  // namespace kinfit

#endif

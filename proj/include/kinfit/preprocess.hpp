#ifndef KINFIT_PREPROCESS_HPP
#define KINFIT_PREPROCESS_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "kinfit/image.hpp"
#include "kinfit/parallel.hpp"

namespace kinfit {

/// Truncated Gaussian smoothing kernel on the centered L x L lattice,
/// normalized to sum 1 so constant images are fixed points.
inline Image2D gaussian_kernel(double sigma, int size) {
    if (size < 1 || size % 2 == 0)
        throw std::invalid_argument("gaussian_kernel: window size must be odd and >= 1");
    if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be > 0");
    Image2D kernel(size, size);
    const int half = size / 2;
    double sum = 0.0;
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
            const double x = i - half, y = j - half;
            const double w = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
            kernel.at(i, j) = w;
            sum += w;
        }
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) kernel.at(i, j) /= sum;
    return kernel;
}

/// 2-D convolution with zero padding outside the image.
inline Image2D convolve(const Image2D& img, const Image2D& kernel) {
    if (kernel.rows() != kernel.cols() || kernel.rows() % 2 == 0)
        throw std::invalid_argument("convolve: kernel must be odd and square");
    const int half = kernel.rows() / 2;
    Image2D out(img.rows(), img.cols());
    for (int i = 0; i < img.rows(); ++i)
        for (int j = 0; j < img.cols(); ++j) {
            double acc = 0.0;
            for (int di = -half; di <= half; ++di) {
                const int si = i + di;
                if (si < 0 || si >= img.rows()) continue;
                for (int dj = -half; dj <= half; ++dj) {
                    const int sj = j + dj;
                    if (sj < 0 || sj >= img.cols()) continue;
                    acc += img.at(si, sj) * kernel.at(half + di, half + dj);
                }
            }
            out.at(i, j) = acc;
        }
    return out;
}

/// Smooths every frame independently with the given kernel.
inline DynamicImage smooth_frames(const DynamicImage& dyn, const Image2D& kernel) {
    DynamicImage out(dyn.rows(), dyn.cols(), dyn.grid());
    parallel_for(static_cast<std::size_t>(dyn.frames()), [&](std::size_t t) {
        out.set_frame(static_cast<int>(t), convolve(dyn.frame(static_cast<int>(t)), kernel));
    });
    return out;
}

/// Pixelwise arithmetic mean over frames.
inline Image2D time_average(const DynamicImage& dyn) {
    Image2D avg(dyn.rows(), dyn.cols());
    const double inv_t = 1.0 / dyn.frames();
    for (int t = 0; t < dyn.frames(); ++t) {
        const double* f = dyn.frame_data(t);
        for (std::size_t idx = 0; idx < avg.size(); ++idx) avg.data()[idx] += f[idx] * inv_t;
    }
    return avg;
}

/// Organ ROI extracted from the time-averaged image: superlevel set
/// {avg >= threshold} with the threshold found where the hottest row
/// profile separates from its best-fit Gaussian.
struct RoiMask {
    Image2D mask;  // 1 inside, 0 outside
    double threshold = 0.0;
    int seed_i = 0, seed_j = 0;
    double fitted_sigma = 0.0;
    bool tied_max = false;

    int count() const {
        int n = 0;
        for (double v : mask.values()) n += v != 0.0;
        return n;
    }
};

namespace detail {

/// Sum of squares between row and the amplitude-pinned Gaussian
/// amp * exp(-(j - j0)^2 / (2 sigma^2)).
inline double row_fit_sse(const std::vector<double>& row, int j0, double amp, double sigma) {
    double sse = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
        const double dj = static_cast<double>(j) - j0;
        const double g = amp * std::exp(-dj * dj / (2.0 * sigma * sigma));
        sse += (row[j] - g) * (row[j] - g);
    }
    return sse;
}

/// Coarse scan plus golden-section refinement of the one-parameter fit.
inline double fit_row_sigma(const std::vector<double>& row, int j0, double amp,
                            double sigma_min, double sigma_max) {
    const int n_scan = 200;
    double best_sigma = sigma_min;
    double best_sse = std::numeric_limits<double>::infinity();
    for (int s = 0; s < n_scan; ++s) {
        const double sigma =
            sigma_min * std::pow(sigma_max / sigma_min, static_cast<double>(s) / (n_scan - 1));
        const double sse = row_fit_sse(row, j0, amp, sigma);
        if (sse < best_sse) {
            best_sse = sse;
            best_sigma = sigma;
        }
    }
    double lo = best_sigma / std::pow(sigma_max / sigma_min, 1.0 / (n_scan - 1));
    double hi = best_sigma * std::pow(sigma_max / sigma_min, 1.0 / (n_scan - 1));
    lo = std::max(lo, sigma_min);
    hi = std::min(hi, sigma_max);
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = lo, b = hi;
    double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
    double f1 = row_fit_sse(row, j0, amp, x1), f2 = row_fit_sse(row, j0, amp, x2);
    for (int it = 0; it < 80; ++it) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = row_fit_sse(row, j0, amp, x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = row_fit_sse(row, j0, amp, x2);
        }
    }
    const double refined = 0.5 * (a + b);
    return row_fit_sse(row, j0, amp, refined) <= best_sse ? refined : best_sigma;
}

}  // namespace detail

/// Segments the organ of interest from a (smoothed) time-averaged image.
///
/// Finds the hottest pixel, fits a one-dimensional Gaussian (mean pinned at
/// the hottest column, amplitude pinned to its value, sigma free) to that
/// row, locates the largest row-vs-fit deviation within +-gamma_window of
/// the peak, and thresholds the image at the row value there.
inline RoiMask segment_roi(const Image2D& avg, int gamma_window = 10) {
    if (gamma_window < 1) throw std::invalid_argument("segment_roi: gamma_window must be >= 1");

    RoiMask roi;
    double max_val = -std::numeric_limits<double>::infinity();
    double min_val = std::numeric_limits<double>::infinity();
    for (double v : avg.values()) {
        max_val = std::max(max_val, v);
        min_val = std::min(min_val, v);
    }
    if (!(max_val > min_val)) throw std::runtime_error("degenerate segmentation input");
    int n_max = 0;
    for (int i = 0; i < avg.rows(); ++i)
        for (int j = 0; j < avg.cols(); ++j)
            if (avg.at(i, j) == max_val && n_max++ == 0) {
                roi.seed_i = i;  // lexicographically smallest (i, j)
                roi.seed_j = j;
            }
    roi.tied_max = n_max > 1;

    std::vector<double> row(static_cast<std::size_t>(avg.cols()));
    for (int j = 0; j < avg.cols(); ++j) row[static_cast<std::size_t>(j)] = avg.at(roi.seed_i, j);

    roi.fitted_sigma = detail::fit_row_sigma(row, roi.seed_j, max_val, 0.5,
                                             static_cast<double>(avg.cols()));

    // argmax |row - fit| in the open window (seed_j - gamma, seed_j + gamma)
    const int lo = std::max(0, roi.seed_j - gamma_window + 1);
    const int hi = std::min(avg.cols() - 1, roi.seed_j + gamma_window - 1);
    int j_star = roi.seed_j;
    double best_dev = -1.0;
    for (int j = lo; j <= hi; ++j) {
        const double dj = j - roi.seed_j;
        const double g = max_val * std::exp(-dj * dj / (2.0 * roi.fitted_sigma * roi.fitted_sigma));
        const double dev = std::abs(row[static_cast<std::size_t>(j)] - g);
        if (dev > best_dev) {
            best_dev = dev;
            j_star = j;
        }
    }
    roi.threshold = avg.at(roi.seed_i, j_star);

    roi.mask = Image2D(avg.rows(), avg.cols());
    for (int i = 0; i < avg.rows(); ++i)
        for (int j = 0; j < avg.cols(); ++j)
            roi.mask.at(i, j) = avg.at(i, j) >= roi.threshold ? 1.0 : 0.0;
    return roi;
}

/// Dice overlap 2|A n B| / (|A| + |B|) between binary masks.
inline double dice_coefficient(const Image2D& a, const Image2D& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("dice_coefficient: dimension mismatch");
    int inter = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool in_a = a.data()[i] != 0.0, in_b = b.data()[i] != 0.0;
        inter += in_a && in_b;
        na += in_a;
        nb += in_b;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * inter / static_cast<double>(na + nb);
}

}  // namespace kinfit

#endif

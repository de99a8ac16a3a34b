#ifndef KINFIT_IMAGE_HPP
#define KINFIT_IMAGE_HPP

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "kinfit/time_grid.hpp"

namespace kinfit {

/// Dense row-major 2-D image of doubles.
class Image2D {
public:
    Image2D() = default;
    Image2D(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), v_(static_cast<std::size_t>(rows) * cols, fill) {
        if (rows <= 0 || cols <= 0) throw std::invalid_argument("Image2D: dims must be > 0");
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return v_.size(); }

    double& at(int i, int j) { return v_[static_cast<std::size_t>(i) * cols_ + j]; }
    double at(int i, int j) const { return v_[static_cast<std::size_t>(i) * cols_ + j]; }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    std::vector<double>& values() { return v_; }
    const std::vector<double>& values() const { return v_; }

    double sum() const {
        double s = 0.0;
        for (double x : v_) s += x;
        return s;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> v_;
};

/// I x J x T stack of tracer concentration frames (kBq/ml), t-major then
/// row-major, tied to its acquisition schedule.
class DynamicImage {
public:
    DynamicImage(int rows, int cols, TimeGrid grid)
        : rows_(rows), cols_(cols), grid_(std::move(grid)),
          v_(static_cast<std::size_t>(rows) * cols * grid_.size(), 0.0) {
        if (rows <= 0 || cols <= 0) throw std::invalid_argument("DynamicImage: dims must be > 0");
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    int frames() const { return static_cast<int>(grid_.size()); }
    const TimeGrid& grid() const { return grid_; }

    double& at(int i, int j, int t) { return v_[index(i, j, t)]; }
    double at(int i, int j, int t) const { return v_[index(i, j, t)]; }

    double* frame_data(int t) { return v_.data() + static_cast<std::size_t>(t) * rows_ * cols_; }
    const double* frame_data(int t) const {
        return v_.data() + static_cast<std::size_t>(t) * rows_ * cols_;
    }

    Image2D frame(int t) const {
        Image2D img(rows_, cols_);
        const double* src = frame_data(t);
        std::copy(src, src + static_cast<std::size_t>(rows_) * cols_, img.data());
        return img;
    }

    void set_frame(int t, const Image2D& img) {
        if (img.rows() != rows_ || img.cols() != cols_)
            throw std::invalid_argument("DynamicImage::set_frame: dimension mismatch");
        std::copy(img.data(), img.data() + img.size(), frame_data(t));
    }

    /// TAC at a pixel, one entry per frame.
    std::vector<double> tac(int i, int j) const {
        std::vector<double> out(grid_.size());
        for (std::size_t t = 0; t < grid_.size(); ++t)
            out[t] = v_[index(i, j, static_cast<int>(t))];
        return out;
    }

    std::vector<double>& values() { return v_; }
    const std::vector<double>& values() const { return v_; }

    bool all_finite() const {
        for (double x : v_)
            if (!std::isfinite(x)) return false;
        return true;
    }

private:
    std::size_t index(int i, int j, int t) const {
        return (static_cast<std::size_t>(t) * rows_ + i) * cols_ + j;
    }

    int rows_;
    int cols_;
    TimeGrid grid_;
    std::vector<double> v_;
};

}  // namespace kinfit

#endif

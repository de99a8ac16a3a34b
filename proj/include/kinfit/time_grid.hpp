#ifndef KINFIT_TIME_GRID_HPP
#define KINFIT_TIME_GRID_HPP

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace kinfit {

/// Acquisition frame schedule. Frames are contiguous half-open intervals
/// given in seconds; model evaluation happens at frame midpoints, which
/// are kept in minutes (rate constants are min^-1 throughout).
class TimeGrid {
public:
    TimeGrid(std::vector<double> frame_start_s, std::vector<double> frame_duration_s)
        : start_s_(std::move(frame_start_s)), duration_s_(std::move(frame_duration_s)) {
        if (start_s_.empty() || start_s_.size() != duration_s_.size())
            throw std::invalid_argument("TimeGrid: empty or mismatched frame arrays");
        if (start_s_.front() < 0.0)
            throw std::invalid_argument("TimeGrid: first frame start must be >= 0");
        for (std::size_t i = 0; i < start_s_.size(); ++i) {
            if (duration_s_[i] <= 0.0)
                throw std::invalid_argument("TimeGrid: frame durations must be > 0");
            if (i + 1 < start_s_.size()) {
                const double expected = start_s_[i] + duration_s_[i];
                if (std::abs(start_s_[i + 1] - expected) > 1e-9 * std::max(1.0, expected))
                    throw std::invalid_argument("TimeGrid: frames must be contiguous");
            }
        }
        mid_min_.resize(start_s_.size());
        for (std::size_t i = 0; i < start_s_.size(); ++i)
            mid_min_[i] = (start_s_[i] + 0.5 * duration_s_[i]) / 60.0;
    }

    /// Builds a contiguous grid from (count, duration_s) blocks,
    /// e.g. {{10, 15}, {1, 22}, ...}.
    static TimeGrid from_blocks(const std::vector<std::pair<int, double>>& blocks) {
        std::vector<double> starts, durations;
        double t = 0.0;
        for (const auto& [count, dur] : blocks) {
            for (int i = 0; i < count; ++i) {
                starts.push_back(t);
                durations.push_back(dur);
                t += dur;
            }
        }
        return TimeGrid(std::move(starts), std::move(durations));
    }

    std::size_t size() const { return start_s_.size(); }
    double frame_start_s(std::size_t i) const { return start_s_[i]; }
    double frame_duration_s(std::size_t i) const { return duration_s_[i]; }
    double midpoint_min(std::size_t i) const { return mid_min_[i]; }
    const std::vector<double>& midpoints_min() const { return mid_min_; }
    const std::vector<double>& frame_starts_s() const { return start_s_; }
    const std::vector<double>& frame_durations_s() const { return duration_s_; }
    double total_duration_s() const { return start_s_.back() + duration_s_.back(); }
    double last_midpoint_min() const { return mid_min_.back(); }

    bool operator==(const TimeGrid& o) const {
        return start_s_ == o.start_s_ && duration_s_ == o.duration_s_;
    }

private:
    std::vector<double> start_s_;
    std::vector<double> duration_s_;
    std::vector<double> mid_min_;
};

}  // namespace kinfit

#endif

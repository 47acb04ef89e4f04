// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace rxgs::opt {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::int64_t step_count = 0;
};

// Textbook Adam with bias correction on one tensor. lr_scale, when non-empty,
// multiplies the learning rate per element (used for the FLE degree split).
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr, const AdamConfig& config = {},
               std::span<const double> lr_scale = {});

// Exponential decay from lr_init to lr_final with a sine-eased delay ramp
// that starts at delay_mult.
struct LrSchedule {
    double lr_init = 1e-3;
    double lr_final = 1e-3;
    std::int64_t total_steps = 1;
    double delay_mult = 1.0;  // in (0, 1]
    std::int64_t delay_steps = 0;
};

double lr_at(const LrSchedule& schedule, std::int64_t t);

// Named parameter groups with per-group Adam state and LR instrumentation.
// Callers pass fresh spans each step, so storage may move between steps.
class Optimizer {
public:
    explicit Optimizer(AdamConfig config = {}) : config_(config) {}

    void step(const std::string& group, std::span<double> params, std::span<const double> grads,
              double lr, std::span<const double> lr_scale = {});

    // Carry moments across a densify pass: new row i copies old row
    // source_row[i] (or starts at zero when source_row[i] < 0).
    void remap_rows(const std::string& group, const std::vector<int>& source_row, int row_width);

    void reset(const std::string& group) { states_.erase(group); }
    const std::map<std::string, double>& last_lr() const { return last_lr_; }
    const AdamState* state(const std::string& group) const {
        const auto it = states_.find(group);
        return it == states_.end() ? nullptr : &it->second;
    }

private:
    AdamConfig config_;
    std::map<std::string, AdamState> states_;
    std::map<std::string, double> last_lr_;
};

// Finite-difference verification harness shared by every module's adjoint.
struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    std::vector<std::size_t> failing;  // coordinates exceeding the tolerance

    bool ok() const { return failing.empty(); }
};

GradCheckReport grad_check(const std::function<double(const std::vector<double>&)>& f,
                           const std::vector<double>& x0,
                           const std::vector<double>& analytic_grad, double step,
                           double tolerance);

}  // namespace rxgs::opt

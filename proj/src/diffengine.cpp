// SPDX-License-Identifier: Apache-2.0
#include "rxgs/diffengine.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rxgs::opt {

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr, const AdamConfig& config, std::span<const double> lr_scale) {
    if (params.size() != grads.size()) throw std::invalid_argument("adam_step: shape mismatch");
    if (!lr_scale.empty() && lr_scale.size() != params.size())
        throw std::invalid_argument("adam_step: lr_scale shape mismatch");
    if (state.first_moment.size() != params.size()) {
        state.first_moment.assign(params.size(), 0.0);
        state.second_moment.assign(params.size(), 0.0);
        state.step_count = 0;
    }
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        double& m = state.first_moment[i];
        double& v = state.second_moment[i];
        m = config.beta1 * m + (1.0 - config.beta1) * g;
        v = config.beta2 * v + (1.0 - config.beta2) * g * g;
        const double m_hat = m / bc1;
        const double v_hat = v / bc2;
        const double rate = lr_scale.empty() ? lr : lr * lr_scale[i];
        params[i] -= rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
}

double lr_at(const LrSchedule& schedule, std::int64_t t) {
    const double frac = schedule.total_steps > 0
                            ? static_cast<double>(t) / static_cast<double>(schedule.total_steps)
                            : 1.0;
    const double base = schedule.lr_init * std::pow(schedule.lr_final / schedule.lr_init, frac);
    double ramp = 1.0;
    if (schedule.delay_steps > 0) {
        const double u = std::clamp(
            static_cast<double>(t) / static_cast<double>(schedule.delay_steps), 0.0, 1.0);
        ramp = schedule.delay_mult + (1.0 - schedule.delay_mult) * std::sin(0.5 * 3.14159265358979323846 * u);
    }
    return base * ramp;
}

void Optimizer::step(const std::string& group, std::span<double> params,
                     std::span<const double> grads, double lr,
                     std::span<const double> lr_scale) {
    for (const double g : grads)
        if (!std::isfinite(g))
            throw std::runtime_error("optimizer: non-finite gradient in group '" + group + "'");
    adam_step(params, grads, states_[group], lr, config_, lr_scale);
    last_lr_[group] = lr;
}

void Optimizer::remap_rows(const std::string& group, const std::vector<int>& source_row,
                           int row_width) {
    const auto it = states_.find(group);
    if (it == states_.end()) return;
    AdamState& state = it->second;
    const std::size_t width = static_cast<std::size_t>(row_width);
    AdamState remapped;
    remapped.step_count = state.step_count;
    remapped.first_moment.assign(source_row.size() * width, 0.0);
    remapped.second_moment.assign(source_row.size() * width, 0.0);
    for (std::size_t row = 0; row < source_row.size(); ++row) {
        const int src = source_row[row];
        if (src < 0) continue;
        for (std::size_t a = 0; a < width; ++a) {
            remapped.first_moment[row * width + a] = state.first_moment[src * width + a];
            remapped.second_moment[row * width + a] = state.second_moment[src * width + a];
        }
    }
    state = std::move(remapped);
}

GradCheckReport grad_check(const std::function<double(const std::vector<double>&)>& f,
                           const std::vector<double>& x0,
                           const std::vector<double>& analytic_grad, double step,
                           double tolerance) {
    if (x0.size() != analytic_grad.size())
        throw std::invalid_argument("grad_check: gradient size mismatch");
    GradCheckReport report;
    std::vector<double> x = x0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + step;
        const double fp = f(x);
        x[i] = orig - step;
        const double fm = f(x);
        x[i] = orig;
        const double fd = (fp - fm) / (2.0 * step);
        const double g = analytic_grad[i];
        const double rel = std::abs(g - fd) / std::max({1.0, std::abs(g), std::abs(fd)});
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_index = i;
        }
        if (rel > tolerance) report.failing.push_back(i);
    }
    return report;
}

}  // namespace rxgs::opt

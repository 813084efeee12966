#pragma once

#include <functional>
#include <string>
#include <vector>

#include "obfrev/autodiff.hpp"
#include "obfrev/rng.hpp"

namespace obfrev::nn {

/// Named, slot-indexed parameter matrices. Slot order is construction order
/// and is what checkpoints serialize.
template <typename S>
struct ParamStore {
  std::vector<std::string> names;
  std::vector<ad::Mat<S>> values;

  int add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    names.push_back(name);
    values.emplace_back(ad::Mat<S>::Zero(rows, cols));
    return static_cast<int>(values.size()) - 1;
  }

  /// Uniform(-range, range) over every matrix, in slot then row-major order.
  void init_uniform(Rng& rng, double range) {
    for (ad::Mat<S>& m : values) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
          m(r, c) = static_cast<S>(rng.uniform(-range, range));
        }
      }
    }
  }

  std::vector<ad::Mat<S>> zero_grads() const {
    std::vector<ad::Mat<S>> g(values.size());
    return g;  // lazily sized by the tape on first touch
  }

  int64_t count() const {
    int64_t n = 0;
    for (const auto& m : values) n += m.size();
    return n;
  }
};

template <typename S>
void accumulate(std::vector<ad::Mat<S>>& into, const std::vector<ad::Mat<S>>& from) {
  for (size_t i = 0; i < into.size(); ++i) {
    if (from[i].size() == 0) continue;
    if (into[i].size() == 0) {
      into[i] = from[i];
    } else {
      into[i] += from[i];
    }
  }
}

template <typename S>
double global_norm(const std::vector<ad::Mat<S>>& grads) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      for (Eigen::Index c = 0; c < g.cols(); ++c) {
        sq += static_cast<double>(g(r, c)) * static_cast<double>(g(r, c));
      }
    }
  }
  return std::sqrt(sq);
}

/// Rescales so the global norm is at most max_norm; returns the pre-clip norm.
template <typename S>
double clip_grads(std::vector<ad::Mat<S>>& grads, double max_norm) {
  double norm = global_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    S f = static_cast<S>(max_norm / norm);
    for (auto& g : grads) g *= f;
  }
  return norm;
}

template <typename S>
void sgd_step(ParamStore<S>& store, const std::vector<ad::Mat<S>>& grads, double lr) {
  for (size_t i = 0; i < store.values.size(); ++i) {
    if (grads[i].size() == 0) continue;
    store.values[i] -= static_cast<S>(lr) * grads[i];
  }
}

struct GradCheckReport {
  double max_rel_err = 0.0;
  int checked = 0;
};

/// Central-difference check of analytic gradients for randomly sampled
/// elements of the given slots. loss_fn must recompute the loss from the
/// store's current values.
template <typename S>
GradCheckReport gradient_check(ParamStore<S>& store, const std::vector<int>& slots,
                               const std::vector<ad::Mat<S>>& analytic,
                               const std::function<double()>& loss_fn, int samples, uint64_t seed,
                               double h = 1e-5) {
  GradCheckReport report;
  Rng rng(seed);
  for (int k = 0; k < samples; ++k) {
    int slot = slots[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(slots.size()) - 1))];
    ad::Mat<S>& m = store.values[static_cast<size_t>(slot)];
    if (m.size() == 0) continue;
    Eigen::Index r = rng.uniform_int(0, m.rows() - 1);
    Eigen::Index c = rng.uniform_int(0, m.cols() - 1);

    S keep = m(r, c);
    m(r, c) = keep + static_cast<S>(h);
    double up = loss_fn();
    m(r, c) = keep - static_cast<S>(h);
    double down = loss_fn();
    m(r, c) = keep;

    double fd = (up - down) / (2.0 * h);
    double an = analytic[static_cast<size_t>(slot)].size() == 0
                    ? 0.0
                    : static_cast<double>(analytic[static_cast<size_t>(slot)](r, c));
    double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
    report.max_rel_err = std::max(report.max_rel_err, std::abs(fd - an) / denom);
    ++report.checked;
  }
  return report;
}

}  // namespace obfrev::nn

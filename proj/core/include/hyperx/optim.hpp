#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "hyperx/tensor.hpp"

namespace hyperx {

/// Step-wise learning-rate schedule: linear warmup from 0 to peak over
/// `warmup` steps, then linear decay to 0 at `total` steps. With
/// decay disabled the rate stays at peak after warmup.
struct LrSchedule {
    double peak = 1e-3;
    int warmup = 0;
    int total = 1;
    bool decay = true;

    double at(int step) const {
        if (peak <= 0.0) return 0.0;
        if (warmup > 0 && step < warmup) {
            return peak * static_cast<double>(step) / warmup;
        }
        if (!decay) return peak;
        if (step >= total) return 0.0;
        int span = total - warmup;
        if (span <= 0) return 0.0;
        return peak * static_cast<double>(total - step) / span;
    }
};

/// Adam with bias correction over a fixed parameter list.
///
/// Parameters whose gradient buffer is absent (not touched since the last
/// zero_grad) are skipped entirely: no moment decay, no update. This keeps
/// untouched embeddings byte-identical across steps.
class Adam {
  public:
    explicit Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);

    /// One update with the given learning rate; increments the step counter.
    void step(double lr);

    void zero_grad();

    int step_count() const { return step_; }
    const std::vector<Tensor>& params() const { return params_; }

  private:
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };
    std::vector<Tensor> params_;
    std::unordered_map<const TensorNode*, Moments> state_;
    double beta1_, beta2_, eps_;
    int step_ = 0;
};

}  // namespace hyperx

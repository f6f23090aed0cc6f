#include "perfuseg/nn/loss.hpp"

#include <cmath>

#include "perfuseg/error.hpp"
#include "perfuseg/nn/ops.hpp"

namespace perfuseg::nn {

namespace {

template <typename Scalar>
int sign(Scalar v) {
  return (v > 0) - (v < 0);
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> soft_dice_cost(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, double epsilon) {
  require(epsilon > 0.0, ErrorKind::Config, "soft Dice epsilon must be positive, got " + std::to_string(epsilon));
  require(pred.shape() == target.shape(), ErrorKind::Shape,
          "soft Dice: prediction " + to_string(pred.shape()) + " vs target " + to_string(target.shape()));
  require(pred.rank() >= 1 && pred.dim(0) >= 1, ErrorKind::Shape, "soft Dice: empty batch");
  const std::size_t samples = static_cast<std::size_t>(pred.dim(0));
  const std::size_t per = pred.size() / samples;

  // The three sums use the same |a*b| form and accumulation order, so a
  // prediction equal to its target yields a ratio of exactly 1.
  std::vector<double> overlap(samples), denom(samples);
  double cost = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const Scalar* y = pred.data() + s * per;
    const Scalar* t = target.data() + s * per;
    double ty = 0.0, tt = 0.0, yy = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      ty += std::abs(static_cast<double>(t[i]) * static_cast<double>(y[i]));
      tt += std::abs(static_cast<double>(t[i]) * static_cast<double>(t[i]));
      yy += std::abs(static_cast<double>(y[i]) * static_cast<double>(y[i]));
    }
    overlap[s] = 2.0 * ty + epsilon;
    denom[s] = tt + yy + epsilon;
    cost += 1.0 - overlap[s] / denom[s];
  }
  return make_result<Scalar>(
      "soft_dice", {1}, {static_cast<Scalar>(cost)}, {pred.ptr(), target.ptr()},
      [samples, per, overlap = std::move(overlap), denom = std::move(denom)](Node<Scalar>& self) {
        auto& pn = *self.inputs[0];
        auto& tn = *self.inputs[1];
        const double g = static_cast<double>(self.grad[0]);
        for (std::size_t s = 0; s < samples; ++s) {
          const double d2 = denom[s] * denom[s];
          const Scalar* y = pn.value.data() + s * per;
          const Scalar* t = tn.value.data() + s * per;
          if (pn.requires_grad) {
            Scalar* gy = grad_of(pn).data() + s * per;
            for (std::size_t i = 0; i < per; ++i) {
              const double dty = 2.0 * sign(t[i] * y[i]) * t[i];
              gy[i] += static_cast<Scalar>(-g * (dty * denom[s] - overlap[s] * 2.0 * y[i]) / d2);
            }
          }
          if (tn.requires_grad) {
            Scalar* gt = grad_of(tn).data() + s * per;
            for (std::size_t i = 0; i < per; ++i) {
              const double dty = 2.0 * sign(t[i] * y[i]) * y[i];
              gt[i] += static_cast<Scalar>(-g * (dty * denom[s] - overlap[s] * 2.0 * t[i]) / d2);
            }
          }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> soft_dice_loss(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, double epsilon) {
  require(pred.shape() == target.shape(), ErrorKind::Shape,
          "soft Dice: prediction " + to_string(pred.shape()) + " vs target " + to_string(target.shape()));
  const int n = static_cast<int>(pred.size());
  return soft_dice_cost(reshape(pred, {1, n}), reshape(target, {1, n}), epsilon);
}

template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, bool check_simplex) {
  require(pred.rank() == 2 && pred.shape() == target.shape(), ErrorKind::Shape,
          "cross_entropy: prediction " + to_string(pred.shape()) + " vs target " + to_string(target.shape()));
  const int n = pred.dim(0), k = pred.dim(1);
  constexpr double kFloor = 1e-12;
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    const Scalar* p = pred.data() + static_cast<std::size_t>(r) * k;
    const Scalar* t = target.data() + static_cast<std::size_t>(r) * k;
    int ones = 0;
    double total = 0.0;
    for (int i = 0; i < k; ++i) {
      require(t[i] == Scalar(0) || t[i] == Scalar(1), ErrorKind::Validation,
              "cross_entropy: target row " + std::to_string(r) + " is not one-hot");
      ones += t[i] == Scalar(1);
      total += p[i];
      if (t[i] == Scalar(1)) loss -= std::log(static_cast<double>(p[i]) + kFloor);
    }
    require(ones == 1, ErrorKind::Validation, "cross_entropy: target row " + std::to_string(r) + " is not one-hot");
    require(!check_simplex || std::abs(total - 1.0) <= 1e-6, ErrorKind::Validation,
            "cross_entropy: prediction row " + std::to_string(r) + " sums to " + std::to_string(total));
  }
  return make_result<Scalar>("cross_entropy", {1}, {static_cast<Scalar>(loss)}, {pred.ptr(), target.ptr()},
                             [](Node<Scalar>& self) {
                               auto& pn = *self.inputs[0];
                               auto& tn = *self.inputs[1];
                               if (!pn.requires_grad) return;
                               auto& gp = grad_of(pn);
                               for (std::size_t i = 0; i < gp.size(); ++i)
                                 if (tn.value[i] != Scalar(0))
                                   gp[i] -= self.grad[0] * tn.value[i] / (pn.value[i] + Scalar(kFloor));
                             });
}

#define PERFUSEG_INSTANTIATE(S)                                                    \
  template Tensor<S> soft_dice_loss(const Tensor<S>&, const Tensor<S>&, double);  \
  template Tensor<S> soft_dice_cost(const Tensor<S>&, const Tensor<S>&, double);  \
  template Tensor<S> cross_entropy(const Tensor<S>&, const Tensor<S>&, bool);

PERFUSEG_INSTANTIATE(float)
PERFUSEG_INSTANTIATE(double)

}  // namespace perfuseg::nn

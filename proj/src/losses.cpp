#include "coughgan/losses.hpp"

#include <algorithm>
#include <cmath>

#include "coughgan/error.hpp"

namespace coughgan::nn {

namespace {
constexpr double kClamp = 1e-7;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": predictions " + shape_string(a.shape()) + " vs targets " +
                     shape_string(b.shape()));
}
}  // namespace

LossResult bce_loss(const Tensor& p, const Tensor& t) {
  require_same_shape(p, t, "bce_loss");
  LossResult r{0.0, Tensor::zeros_like(p)};
  const double n = static_cast<double>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], kClamp, 1.0 - kClamp);
    r.loss -= t[i] * std::log(q) + (1.0 - t[i]) * std::log1p(-q);
    if (p[i] > kClamp && p[i] < 1.0 - kClamp) r.grad[i] = (q - t[i]) / (q * (1.0 - q)) / n;
  }
  r.loss /= n;
  return r;
}

LossResult categorical_ce_loss(const Tensor& p, const Tensor& t) {
  require_same_shape(p, t, "categorical_ce_loss");
  if (p.rank() != 2) throw ShapeError("categorical_ce_loss: expected [batch, classes], got " + shape_string(p.shape()));
  const std::size_t rows = p.dim(0), cols = p.dim(1);
  LossResult r{0.0, Tensor::zeros_like(p)};
  for (std::size_t i = 0; i < rows; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      if (p[i * cols + j] < 0.0) throw DomainError("categorical_ce_loss: negative probability in row " + std::to_string(i));
      sum += p[i * cols + j];
    }
    if (!(std::abs(sum - 1.0) <= 1e-6))
      throw DomainError("categorical_ce_loss: row " + std::to_string(i) + " sums to " + std::to_string(sum));
    for (std::size_t j = 0; j < cols; ++j) {
      const double pij = p[i * cols + j], tij = t[i * cols + j];
      if (tij == 0.0) continue;
      r.loss -= tij * std::log(std::max(pij, kClamp));
      if (pij > kClamp) r.grad[i * cols + j] = -tij / pij / static_cast<double>(rows);
    }
  }
  r.loss /= static_cast<double>(rows);
  return r;
}

}  // namespace coughgan::nn

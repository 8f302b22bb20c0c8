#include "cac/nn.hpp"

#include <algorithm>
#include <cmath>

#include "cac/errors.hpp"

namespace cac::nn {

Linear::Linear(const std::string& name, int in, int out, bool bias)
    : weight(name + ".weight", {out, in}, out, in),
      bias(name + ".bias", {out}, 1, out),
      has_bias(bias) {}

Matrix Linear::forward(const Matrix& x) const {
  if (x.cols() != weight.value.cols()) {
    throw ShapeError(weight.name + ": input has " + std::to_string(x.cols()) +
                     " features, expected " + std::to_string(weight.value.cols()));
  }
  Matrix y = x * weight.value.transpose();
  if (has_bias) y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& grad_out) {
  weight.grad.noalias() += grad_out.transpose() * x;
  if (has_bias) bias.grad.row(0) += grad_out.colwise().sum();
  return grad_out * weight.value;
}

void Linear::init(Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < weight.value.size(); ++i) {
    weight.value.data()[i] = rng.truncated_normal(stddev);
  }
  bias.value.setZero();
}

void Linear::init_uniform(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(weight.value.cols()));
  for (Eigen::Index i = 0; i < weight.value.size(); ++i) {
    weight.value.data()[i] = rng.uniform(-bound, bound);
  }
  if (has_bias) {
    for (Eigen::Index i = 0; i < bias.value.size(); ++i) {
      bias.value.data()[i] = rng.uniform(-bound, bound);
    }
  }
}

void Linear::collect(ParamRefs& out) {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias);
}

LayerNorm::LayerNorm(const std::string& name, int dim, double eps_)
    : gamma(name + ".weight", {dim}, 1, dim), beta(name + ".bias", {dim}, 1, dim), eps(eps_) {
  gamma.value.setOnes();
}

Matrix LayerNorm::forward(const Matrix& x) const {
  const double d = static_cast<double>(x.cols());
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / d;
    const double var = (x.row(r).array() - mean).square().sum() / d;
    const double rstd = 1.0 / std::sqrt(var + eps);
    y.row(r) = ((x.row(r).array() - mean) * rstd * gamma.value.row(0).array() +
                beta.value.row(0).array())
                   .matrix();
  }
  return y;
}

Matrix LayerNorm::backward(const Matrix& x, const Matrix& grad_out) {
  const double d = static_cast<double>(x.cols());
  Matrix dx(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / d;
    const double var = (x.row(r).array() - mean).square().sum() / d;
    const double rstd = 1.0 / std::sqrt(var + eps);
    const RowVector xhat = ((x.row(r).array() - mean) * rstd).matrix();
    gamma.grad.row(0).array() += grad_out.row(r).array() * xhat.array();
    beta.grad.row(0) += grad_out.row(r);
    const RowVector g = (grad_out.row(r).array() * gamma.value.row(0).array()).matrix();
    const double g_mean = g.sum() / d;
    const double gx_mean = g.dot(xhat) / d;
    dx.row(r) = ((g.array() - g_mean - xhat.array() * gx_mean) * rstd).matrix();
  }
  return dx;
}

void LayerNorm::collect(ParamRefs& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

Matrix gelu(const Matrix& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); });
}

Matrix gelu_backward(const Matrix& x, const Matrix& grad_out) {
  const Matrix deriv = x.unaryExpr([](double v) {
    const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
    return cdf + v * pdf;
  });
  return grad_out.cwiseProduct(deriv);
}

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix relu_backward(const Matrix& x, const Matrix& grad_out) {
  return grad_out.binaryExpr(x, [](double g, double v) { return v > 0.0 ? g : 0.0; });
}

Conv3x3::Conv3x3(const std::string& name, int in_channels, int out_channels)
    : weight(name + ".weight", {out_channels, in_channels, 3, 3}, out_channels, in_channels * 9),
      bias(name + ".bias", {out_channels}, 1, out_channels) {}

Matrix im2col3x3(const Matrix& x, int height, int width) {
  const Eigen::Index channels = x.cols();
  if (x.rows() != static_cast<Eigen::Index>(height) * width) {
    throw ShapeError("feature map has " + std::to_string(x.rows()) + " tokens, expected " +
                     std::to_string(height * width));
  }
  Matrix cols = Matrix::Zero(x.rows(), channels * 9);
  for (int y = 0; y < height; ++y) {
    for (int xpos = 0; xpos < width; ++xpos) {
      const Eigen::Index row = static_cast<Eigen::Index>(y) * width + xpos;
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = y + ky - 1;
        if (sy < 0 || sy >= height) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int sx = xpos + kx - 1;
          if (sx < 0 || sx >= width) continue;
          const Eigen::Index src = static_cast<Eigen::Index>(sy) * width + sx;
          const int k = ky * 3 + kx;
          for (Eigen::Index c = 0; c < channels; ++c) cols(row, c * 9 + k) = x(src, c);
        }
      }
    }
  }
  return cols;
}

Matrix col2im3x3(const Matrix& cols, int height, int width, int channels) {
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(height) * width, channels);
  for (int y = 0; y < height; ++y) {
    for (int xpos = 0; xpos < width; ++xpos) {
      const Eigen::Index row = static_cast<Eigen::Index>(y) * width + xpos;
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = y + ky - 1;
        if (sy < 0 || sy >= height) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int sx = xpos + kx - 1;
          if (sx < 0 || sx >= width) continue;
          const Eigen::Index dst = static_cast<Eigen::Index>(sy) * width + sx;
          const int k = ky * 3 + kx;
          for (Eigen::Index c = 0; c < channels; ++c) x(dst, c) += cols(row, c * 9 + k);
        }
      }
    }
  }
  return x;
}

Matrix Conv3x3::forward(const Matrix& x, int height, int width) const {
  if (x.cols() != in_channels()) {
    throw ShapeError(weight.name + ": input has " + std::to_string(x.cols()) +
                     " channels, expected " + std::to_string(in_channels()));
  }
  Matrix y = im2col3x3(x, height, width) * weight.value.transpose();
  y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Conv3x3::backward(const Matrix& x, int height, int width, const Matrix& grad_out) {
  const Matrix cols = im2col3x3(x, height, width);
  weight.grad.noalias() += grad_out.transpose() * cols;
  bias.grad.row(0) += grad_out.colwise().sum();
  return col2im3x3(grad_out * weight.value, height, width, in_channels());
}

void Conv3x3::init_uniform(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(weight.value.cols()));
  for (Eigen::Index i = 0; i < weight.value.size(); ++i) {
    weight.value.data()[i] = rng.uniform(-bound, bound);
  }
  for (Eigen::Index i = 0; i < bias.value.size(); ++i) {
    bias.value.data()[i] = rng.uniform(-bound, bound);
  }
}

void Conv3x3::collect(ParamRefs& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

namespace {

struct UpsampleTap {
  int lo;
  int hi;
  double frac;  // weight of `hi`
};

UpsampleTap upsample_tap(int out_index, int in_size) {
  double src = (out_index + 0.5) / 2.0 - 0.5;
  if (src < 0.0) src = 0.0;
  const int lo = std::min(static_cast<int>(src), in_size - 1);
  const int hi = std::min(lo + 1, in_size - 1);
  return {lo, hi, src - lo};
}

}  // namespace

Matrix upsample2x(const Matrix& x, int height, int width) {
  if (x.rows() != static_cast<Eigen::Index>(height) * width) {
    throw ShapeError("upsample2x: token count does not match grid");
  }
  const int oh = height * 2;
  const int ow = width * 2;
  Matrix y(static_cast<Eigen::Index>(oh) * ow, x.cols());
  for (int oy = 0; oy < oh; ++oy) {
    const UpsampleTap ty = upsample_tap(oy, height);
    for (int ox = 0; ox < ow; ++ox) {
      const UpsampleTap tx = upsample_tap(ox, width);
      const auto at = [&](int yy, int xx) { return x.row(static_cast<Eigen::Index>(yy) * width + xx); };
      y.row(static_cast<Eigen::Index>(oy) * ow + ox) =
          (1 - ty.frac) * ((1 - tx.frac) * at(ty.lo, tx.lo) + tx.frac * at(ty.lo, tx.hi)) +
          ty.frac * ((1 - tx.frac) * at(ty.hi, tx.lo) + tx.frac * at(ty.hi, tx.hi));
    }
  }
  return y;
}

Matrix upsample2x_backward(const Matrix& grad_out, int height, int width) {
  const int oh = height * 2;
  const int ow = width * 2;
  Matrix dx = Matrix::Zero(static_cast<Eigen::Index>(height) * width, grad_out.cols());
  for (int oy = 0; oy < oh; ++oy) {
    const UpsampleTap ty = upsample_tap(oy, height);
    for (int ox = 0; ox < ow; ++ox) {
      const UpsampleTap tx = upsample_tap(ox, width);
      const auto g = grad_out.row(static_cast<Eigen::Index>(oy) * ow + ox);
      const auto add = [&](int yy, int xx, double w) {
        dx.row(static_cast<Eigen::Index>(yy) * width + xx) += w * g;
      };
      add(ty.lo, tx.lo, (1 - ty.frac) * (1 - tx.frac));
      add(ty.lo, tx.hi, (1 - ty.frac) * tx.frac);
      add(ty.hi, tx.lo, ty.frac * (1 - tx.frac));
      add(ty.hi, tx.hi, ty.frac * tx.frac);
    }
  }
  return dx;
}

Matrix global_avg_pool(const Matrix& x) {
  return x.colwise().mean();
}

Matrix global_avg_pool_backward(const Matrix& grad_out, Eigen::Index tokens) {
  Matrix dx(tokens, grad_out.cols());
  dx.rowwise() = grad_out.row(0) / static_cast<double>(tokens);
  return dx;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - m).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

}  // namespace cac::nn

#include "perfuseg/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "perfuseg/error.hpp"
#include "perfuseg/parallel.hpp"

namespace perfuseg::nn {

namespace {

// Lowered rows are produced in chunks of about this many elements so the
// scratch matrix stays cache resident.
constexpr std::size_t kChunkElements = std::size_t{1} << 16;
// Samples are split into at most this many contiguous groups for threading;
// weight gradients are summed per group in group order.
constexpr int kMaxGroups = 8;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

void require_rank(const Shape& s, int rank, const char* op, const char* what) {
  require(static_cast<int>(s.size()) == rank, ErrorKind::Shape,
          std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " + to_string(s));
}

struct ConvGeometry {
  int n, d, h, w, ci;
  int kd, kh, kw, co;
  int pd, ph, pw;
  int od;

  std::size_t rows() const { return static_cast<std::size_t>(od) * h * w; }
  std::size_t k() const { return static_cast<std::size_t>(kd) * kh * kw * ci; }
  std::size_t in_sample() const { return static_cast<std::size_t>(d) * h * w * ci; }
  std::size_t out_sample() const { return rows() * co; }
};

// Lowering works on a depth-innermost copy of each sample, laid out
// (H, W, D, C), with column order (kh, kw, kd, ci). Each kernel tap then reads
// one contiguous run of depth*channels, which matters for the single-channel,
// full-depth first layers.
template <typename Scalar>
void to_depth_inner(const ConvGeometry& g, const Scalar* x, Scalar* xt) {
  for (int d = 0; d < g.d; ++d)
    for (int h = 0; h < g.h; ++h)
      for (int w = 0; w < g.w; ++w) {
        const Scalar* src = x + ((static_cast<std::size_t>(d) * g.h + h) * g.w + w) * g.ci;
        Scalar* dst = xt + ((static_cast<std::size_t>(h) * g.w + w) * g.d + d) * g.ci;
        std::copy(src, src + g.ci, dst);
      }
}

template <typename Scalar>
void add_from_depth_inner(const ConvGeometry& g, const Scalar* xt, Scalar* x) {
  for (int d = 0; d < g.d; ++d)
    for (int h = 0; h < g.h; ++h)
      for (int w = 0; w < g.w; ++w) {
        const Scalar* src = xt + ((static_cast<std::size_t>(h) * g.w + w) * g.d + d) * g.ci;
        Scalar* dst = x + ((static_cast<std::size_t>(d) * g.h + h) * g.w + w) * g.ci;
        for (int c = 0; c < g.ci; ++c) dst[c] += src[c];
      }
}

// Kernel rows reordered from (kd, kh, kw, ci) to (kh, kw, kd, ci), or back.
template <typename Scalar>
MatrixR<Scalar> permute_kernel_rows(const ConvGeometry& g, const Scalar* k, bool to_lowered) {
  MatrixR<Scalar> out(static_cast<Eigen::Index>(g.k()), g.co);
  for (int a = 0; a < g.kd; ++a)
    for (int b = 0; b < g.kh; ++b)
      for (int c = 0; c < g.kw; ++c)
        for (int i = 0; i < g.ci; ++i) {
          const std::size_t natural = ((static_cast<std::size_t>(a) * g.kh + b) * g.kw + c) * g.ci + i;
          const std::size_t lowered = ((static_cast<std::size_t>(b) * g.kw + c) * g.kd + a) * g.ci + i;
          const std::size_t from = to_lowered ? natural : lowered;
          const std::size_t to = to_lowered ? lowered : natural;
          std::copy(k + from * g.co, k + (from + 1) * g.co, out.data() + to * g.co);
        }
  return out;
}

struct TapRange {
  std::size_t lead, body;  // zero elements before the in-bounds run, run length
};

inline TapRange depth_taps(const ConvGeometry& g, int od) {
  const int a0 = std::max(0, g.pd - od);
  const int a1 = std::min(g.kd, g.d + g.pd - od);
  return {static_cast<std::size_t>(a0) * g.ci, static_cast<std::size_t>(std::max(0, a1 - a0)) * g.ci};
}

// Fills rows [r0, r1) of one sample's lowered matrix.
template <typename Scalar>
void im2col(const ConvGeometry& g, const Scalar* xt, std::size_t r0, std::size_t r1, Scalar* col) {
  const std::size_t span = static_cast<std::size_t>(g.kd) * g.ci;
  for (std::size_t r = r0; r < r1; ++r) {
    const int ow = static_cast<int>(r % g.w);
    const int oh = static_cast<int>((r / g.w) % g.h);
    const int od = static_cast<int>(r / (static_cast<std::size_t>(g.w) * g.h));
    const TapRange t = depth_taps(g, od);
    const int id0 = od - g.pd + static_cast<int>(t.lead / g.ci);
    Scalar* out = col;
    for (int b = 0; b < g.kh; ++b) {
      const int ih = oh + b - g.ph;
      for (int c = 0; c < g.kw; ++c, out += span) {
        const int iw = ow + c - g.pw;
        if (ih < 0 || ih >= g.h || iw < 0 || iw >= g.w || t.body == 0) {
          std::fill(out, out + span, Scalar(0));
          continue;
        }
        const Scalar* src = xt + ((static_cast<std::size_t>(ih) * g.w + iw) * g.d + id0) * g.ci;
        std::fill(out, out + t.lead, Scalar(0));
        std::copy(src, src + t.body, out + t.lead);
        std::fill(out + t.lead + t.body, out + span, Scalar(0));
      }
    }
    col += g.k();
  }
}

template <typename Scalar>
void col2im(const ConvGeometry& g, const Scalar* col, std::size_t r0, std::size_t r1, Scalar* gxt) {
  const std::size_t span = static_cast<std::size_t>(g.kd) * g.ci;
  for (std::size_t r = r0; r < r1; ++r) {
    const int ow = static_cast<int>(r % g.w);
    const int oh = static_cast<int>((r / g.w) % g.h);
    const int od = static_cast<int>(r / (static_cast<std::size_t>(g.w) * g.h));
    const TapRange t = depth_taps(g, od);
    const int id0 = od - g.pd + static_cast<int>(t.lead / g.ci);
    const Scalar* in = col;
    for (int b = 0; b < g.kh; ++b) {
      const int ih = oh + b - g.ph;
      for (int c = 0; c < g.kw; ++c, in += span) {
        const int iw = ow + c - g.pw;
        if (ih < 0 || ih >= g.h || iw < 0 || iw >= g.w) continue;
        Scalar* dst = gxt + ((static_cast<std::size_t>(ih) * g.w + iw) * g.d + id0) * g.ci;
        for (std::size_t i = 0; i < t.body; ++i) dst[i] += in[t.lead + i];
      }
    }
    col += g.k();
  }
}

struct PoolGeometry {
  int n, d, h, w, c;
  Window3 win;
  int od, oh, ow;
};

PoolGeometry pool_geometry(const Shape& s, Window3 win, bool allow_partial, const char* op) {
  require_rank(s, 5, op, "input");
  PoolGeometry g{s[0], s[1], s[2], s[3], s[4], win, 0, 0, 0};
  const int dims[3] = {g.d, g.h, g.w};
  int outs[3];
  for (int i = 0; i < 3; ++i) {
    require(win[i] >= 1 && win[i] <= dims[i], ErrorKind::Shape,
            std::string(op) + ": window (" + std::to_string(win[0]) + "," + std::to_string(win[1]) + "," +
                std::to_string(win[2]) + ") does not fit input " + to_string(s));
    require(allow_partial || dims[i] % win[i] == 0, ErrorKind::Shape,
            std::string(op) + ": window extent " + std::to_string(win[i]) + " does not divide " +
                std::to_string(dims[i]) + " and partial windows are disabled");
    outs[i] = (dims[i] + win[i] - 1) / win[i];
  }
  g.od = outs[0];
  g.oh = outs[1];
  g.ow = outs[2];
  return g;
}

// Visits every output cell with the flat offsets of the input cells in its
// window (channel 0).
template <typename Fn>
void for_each_window(const PoolGeometry& g, Fn&& fn) {
  std::size_t out = 0;
  for (int n = 0; n < g.n; ++n)
    for (int od = 0; od < g.od; ++od)
      for (int oh = 0; oh < g.oh; ++oh)
        for (int ow = 0; ow < g.ow; ++ow) {
          const int d1 = std::min(g.d, (od + 1) * g.win[0]);
          const int h1 = std::min(g.h, (oh + 1) * g.win[1]);
          const int w1 = std::min(g.w, (ow + 1) * g.win[2]);
          fn(out, [&](auto&& visit) {
            for (int d = od * g.win[0]; d < d1; ++d)
              for (int h = oh * g.win[1]; h < h1; ++h)
                for (int w = ow * g.win[2]; w < w1; ++w)
                  visit(((static_cast<std::size_t>(n) * g.d + d) * g.h + h) * g.w * g.c +
                        static_cast<std::size_t>(w) * g.c);
          });
          out += g.c;
        }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv3d(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel, const Tensor<Scalar>& bias,
                      DepthPadding depth) {
  require_rank(x.shape(), 5, "conv3d", "input");
  require_rank(kernel.shape(), 5, "conv3d", "kernel");
  const auto& xs = x.shape();
  const auto& ks = kernel.shape();
  require(ks[3] == xs[4], ErrorKind::Shape,
          "conv3d: kernel expects " + std::to_string(ks[3]) + " input channels, input " + to_string(xs) + " has " +
              std::to_string(xs[4]));
  require(bias.shape() == Shape{ks[4]}, ErrorKind::Shape,
          "conv3d: bias " + to_string(bias.shape()) + " does not match " + std::to_string(ks[4]) + " filters");
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], xs[4], ks[0], ks[1], ks[2], ks[4], 0, (ks[1] - 1) / 2, (ks[2] - 1) / 2, 0};
  if (depth == DepthPadding::Same) {
    g.pd = (g.kd - 1) / 2;
    g.od = g.d;
  } else {
    g.od = g.d - g.kd + 1;
  }
  require(g.od >= 1 && g.kd >= 1 && g.kh >= 1 && g.kw >= 1, ErrorKind::Shape,
          "conv3d: kernel " + to_string(ks) + " does not fit input " + to_string(xs));

  const int groups = std::clamp(g.n, 1, kMaxGroups);
  const std::size_t chunk = std::clamp<std::size_t>(kChunkElements / g.k(), 16, g.rows());

  std::vector<Scalar> out(static_cast<std::size_t>(g.n) * g.out_sample());
  const MatrixR<Scalar> wl = permute_kernel_rows(g, kernel.data(), true);
  const Eigen::Map<const RowVector<Scalar>> bv(bias.data(), g.co);
  parallel_for(static_cast<std::size_t>(groups), [&](std::size_t gi) {
    std::vector<Scalar> xt(g.in_sample());
    MatrixR<Scalar> col(static_cast<Eigen::Index>(chunk), static_cast<Eigen::Index>(g.k()));
    for (int n = g.n * static_cast<int>(gi) / groups; n < g.n * static_cast<int>(gi + 1) / groups; ++n) {
      to_depth_inner(g, x.data() + n * g.in_sample(), xt.data());
      for (std::size_t r0 = 0; r0 < g.rows(); r0 += chunk) {
        const std::size_t r1 = std::min(g.rows(), r0 + chunk);
        const auto rows = static_cast<Eigen::Index>(r1 - r0);
        im2col(g, xt.data(), r0, r1, col.data());
        MatrixMap<Scalar> o(out.data() + n * g.out_sample() + r0 * g.co, rows, g.co);
        o.noalias() = col.topRows(rows) * wl;
        o.rowwise() += bv;
      }
    }
  });

  Shape os{g.n, g.od, g.h, g.w, g.co};
  return make_result<Scalar>(
      "conv3d", os, std::move(out), {x.ptr(), kernel.ptr(), bias.ptr()},
      [g, groups, chunk](Node<Scalar>& self) {
        auto& xn = *self.inputs[0];
        auto& kn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        const ConstMatrixMap<Scalar> gall(self.grad.data(), static_cast<Eigen::Index>(g.rows() * g.n), g.co);
        if (bn.requires_grad) {
          Eigen::Map<RowVector<Scalar>> gb(grad_of(bn).data(), g.co);
          gb += gall.colwise().sum();
        }
        if (!kn.requires_grad && !xn.requires_grad) return;
        const MatrixR<Scalar> wl = permute_kernel_rows(g, kn.value.data(), true);
        std::vector<MatrixR<Scalar>> partial(kn.requires_grad ? groups : 0);
        if (xn.requires_grad) grad_of(xn);
        parallel_for(static_cast<std::size_t>(groups), [&](std::size_t gi) {
          std::vector<Scalar> xt(g.in_sample());
          std::vector<Scalar> gxt(xn.requires_grad ? g.in_sample() : 0);
          MatrixR<Scalar> col(static_cast<Eigen::Index>(chunk), static_cast<Eigen::Index>(g.k()));
          if (kn.requires_grad) partial[gi] = MatrixR<Scalar>::Zero(static_cast<Eigen::Index>(g.k()), g.co);
          for (int n = g.n * static_cast<int>(gi) / groups; n < g.n * static_cast<int>(gi + 1) / groups; ++n) {
            if (kn.requires_grad) to_depth_inner(g, xn.value.data() + n * g.in_sample(), xt.data());
            if (xn.requires_grad) std::fill(gxt.begin(), gxt.end(), Scalar(0));
            for (std::size_t r0 = 0; r0 < g.rows(); r0 += chunk) {
              const std::size_t r1 = std::min(g.rows(), r0 + chunk);
              const auto rows = static_cast<Eigen::Index>(r1 - r0);
              const ConstMatrixMap<Scalar> go(self.grad.data() + n * g.out_sample() + r0 * g.co, rows, g.co);
              if (kn.requires_grad) {
                im2col(g, xt.data(), r0, r1, col.data());
                partial[gi].noalias() += col.topRows(rows).transpose() * go;
              }
              if (xn.requires_grad) {
                col.topRows(rows).noalias() = go * wl.transpose();
                col2im(g, col.data(), r0, r1, gxt.data());
              }
            }
            if (xn.requires_grad) add_from_depth_inner(g, gxt.data(), xn.grad.data() + n * g.in_sample());
          }
        });
        if (kn.requires_grad) {
          MatrixR<Scalar> total = std::move(partial[0]);
          for (int i = 1; i < groups; ++i) total += partial[i];
          MatrixMap<Scalar> gw(grad_of(kn).data(), static_cast<Eigen::Index>(g.k()), g.co);
          gw += permute_kernel_rows(g, total.data(), false);
        }
      });
}

template <typename Scalar>
Tensor<Scalar> max_pool3d(const Tensor<Scalar>& x, Window3 window, bool allow_partial) {
  const PoolGeometry g = pool_geometry(x.shape(), window, allow_partial, "max_pool3d");
  const std::size_t count = static_cast<std::size_t>(g.n) * g.od * g.oh * g.ow * g.c;
  std::vector<Scalar> out(count, -std::numeric_limits<Scalar>::infinity());
  std::vector<std::uint32_t> arg(count, 0);
  const Scalar* xv = x.data();
  for_each_window(g, [&](std::size_t o, auto&& cells) {
    cells([&](std::size_t base) {
      for (int c = 0; c < g.c; ++c) {
        if (xv[base + c] > out[o + c]) {
          out[o + c] = xv[base + c];
          arg[o + c] = static_cast<std::uint32_t>(base + c);
        }
      }
    });
  });
  return make_result<Scalar>("max_pool3d", {g.n, g.od, g.oh, g.ow, g.c}, std::move(out), {x.ptr()},
                             [arg = std::move(arg)](Node<Scalar>& self) {
                               auto& gx = grad_of(*self.inputs[0]);
                               for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += self.grad[i];
                             });
}

template <typename Scalar>
Tensor<Scalar> avg_pool3d(const Tensor<Scalar>& x, Window3 window, bool allow_partial) {
  const PoolGeometry g = pool_geometry(x.shape(), window, allow_partial, "avg_pool3d");
  const std::size_t count = static_cast<std::size_t>(g.n) * g.od * g.oh * g.ow * g.c;
  std::vector<Scalar> out(count, Scalar(0));
  const Scalar* xv = x.data();
  for_each_window(g, [&](std::size_t o, auto&& cells) {
    int cells_in_window = 0;
    cells([&](std::size_t base) {
      ++cells_in_window;
      for (int c = 0; c < g.c; ++c) out[o + c] += xv[base + c];
    });
    for (int c = 0; c < g.c; ++c) out[o + c] /= static_cast<Scalar>(cells_in_window);
  });
  return make_result<Scalar>("avg_pool3d", {g.n, g.od, g.oh, g.ow, g.c}, std::move(out), {x.ptr()},
                             [g](Node<Scalar>& self) {
                               auto& gx = grad_of(*self.inputs[0]);
                               for_each_window(g, [&](std::size_t o, auto&& cells) {
                                 int cells_in_window = 0;
                                 cells([&](std::size_t) { ++cells_in_window; });
                                 const Scalar inv = Scalar(1) / static_cast<Scalar>(cells_in_window);
                                 cells([&](std::size_t base) {
                                   for (int c = 0; c < g.c; ++c) gx[base + c] += self.grad[o + c] * inv;
                                 });
                               });
                             });
}

template <typename Scalar>
Tensor<Scalar> conv_transpose3d(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel, const Tensor<Scalar>& bias,
                                Window3 stride) {
  require_rank(x.shape(), 5, "conv_transpose3d", "input");
  require_rank(kernel.shape(), 5, "conv_transpose3d", "kernel");
  const Shape xs = x.shape();
  const Shape ks = kernel.shape();
  require(ks[3] == xs[4], ErrorKind::Shape,
          "conv_transpose3d: kernel expects " + std::to_string(ks[3]) + " input channels, got " + to_string(xs));
  require(bias.shape() == Shape{ks[4]}, ErrorKind::Shape, "conv_transpose3d: bias does not match filter count");
  for (int s : stride) require(s >= 1, ErrorKind::Shape, "conv_transpose3d: stride must be positive");
  const int n = xs[0], d = xs[1], h = xs[2], w = xs[3], ci = xs[4];
  const int kd = ks[0], kh = ks[1], kw = ks[2], co = ks[4];
  const Shape os{n, (d - 1) * stride[0] + kd, (h - 1) * stride[1] + kh, (w - 1) * stride[2] + kw, co};
  const auto rows = static_cast<Eigen::Index>(n) * d * h * w;

  // Output row of input row r under kernel offset (a, b, c).
  auto target_row = [=](Eigen::Index r, int a, int b, int c) {
    const Eigen::Index ww = r % w;
    const Eigen::Index hh = (r / w) % h;
    const Eigen::Index dd = (r / (static_cast<Eigen::Index>(w) * h)) % d;
    const Eigen::Index nn = r / (static_cast<Eigen::Index>(w) * h * d);
    return ((nn * os[1] + dd * stride[0] + a) * os[2] + hh * stride[1] + b) * os[3] + ww * stride[2] + c;
  };

  std::vector<Scalar> out(numel(os));
  MatrixMap<Scalar> om(out.data(), static_cast<Eigen::Index>(numel(os) / co), co);
  om.rowwise() = Eigen::Map<const RowVector<Scalar>>(bias.data(), co);
  const ConstMatrixMap<Scalar> xm(x.data(), rows, ci);
  MatrixR<Scalar> y(rows, co);
  for (int a = 0; a < kd; ++a)
    for (int b = 0; b < kh; ++b)
      for (int c = 0; c < kw; ++c) {
        const ConstMatrixMap<Scalar> wk(kernel.data() + ((a * kh + b) * kw + c) * ci * co, ci, co);
        y.noalias() = xm * wk;
        for (Eigen::Index r = 0; r < rows; ++r) om.row(target_row(r, a, b, c)) += y.row(r);
      }

  return make_result<Scalar>(
      "conv_transpose3d", os, std::move(out), {x.ptr(), kernel.ptr(), bias.ptr()},
      [=](Node<Scalar>& self) {
        auto& xn = *self.inputs[0];
        auto& kn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        const ConstMatrixMap<Scalar> gm(self.grad.data(), static_cast<Eigen::Index>(numel(os) / co), co);
        if (bn.requires_grad) {
          Eigen::Map<RowVector<Scalar>> gb(grad_of(bn).data(), co);
          gb += gm.colwise().sum();
        }
        if (!xn.requires_grad && !kn.requires_grad) return;
        const ConstMatrixMap<Scalar> xm(xn.value.data(), rows, ci);
        MatrixR<Scalar> gathered(rows, co);
        for (int a = 0; a < kd; ++a)
          for (int b = 0; b < kh; ++b)
            for (int c = 0; c < kw; ++c) {
              for (Eigen::Index r = 0; r < rows; ++r) gathered.row(r) = gm.row(target_row(r, a, b, c));
              const std::size_t off = static_cast<std::size_t>((a * kh + b) * kw + c) * ci * co;
              if (xn.requires_grad) {
                const ConstMatrixMap<Scalar> wk(kn.value.data() + off, ci, co);
                MatrixMap<Scalar> gx(grad_of(xn).data(), rows, ci);
                gx.noalias() += gathered * wk.transpose();
              }
              if (kn.requires_grad) {
                MatrixMap<Scalar> gw(grad_of(kn).data() + off, ci, co);
                gw.noalias() += xm.transpose() * gathered;
              }
            }
      });
}

template <typename Scalar>
Tensor<Scalar> concat(const Tensor<Scalar>& a, const Tensor<Scalar>& b, int axis) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const int rank = static_cast<int>(as.size());
  if (axis < 0) axis += rank;
  require(static_cast<int>(bs.size()) == rank && axis >= 0 && axis < rank, ErrorKind::Shape,
          "concat: cannot join " + to_string(as) + " and " + to_string(bs) + " on axis " + std::to_string(axis));
  for (int i = 0; i < rank; ++i)
    require(i == axis || as[i] == bs[i], ErrorKind::Shape,
            "concat: " + to_string(as) + " and " + to_string(bs) + " differ off axis " + std::to_string(axis));
  std::size_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= as[i];
  const std::size_t ia = a.size() / std::max<std::size_t>(outer, 1);
  const std::size_t ib = b.size() / std::max<std::size_t>(outer, 1);
  Shape os = as;
  os[axis] += bs[axis];
  std::vector<Scalar> out(a.size() + b.size());
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.data() + o * ia, ia, out.data() + o * (ia + ib));
    std::copy_n(b.data() + o * ib, ib, out.data() + o * (ia + ib) + ia);
  }
  return make_result<Scalar>("concat", os, std::move(out), {a.ptr(), b.ptr()}, [outer, ia, ib](Node<Scalar>& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    for (std::size_t o = 0; o < outer; ++o) {
      const Scalar* g = self.grad.data() + o * (ia + ib);
      if (an.requires_grad) {
        Scalar* ga = grad_of(an).data() + o * ia;
        for (std::size_t i = 0; i < ia; ++i) ga[i] += g[i];
      }
      if (bn.requires_grad) {
        Scalar* gb = grad_of(bn).data() + o * ib;
        for (std::size_t i = 0; i < ib; ++i) gb[i] += g[ia + i];
      }
    }
  });
}

template <typename Scalar>
Tensor<Scalar> transpose_conv_concat(const Tensor<Scalar>& decoder, const Tensor<Scalar>& skip,
                                     const Tensor<Scalar>& kernel, const Tensor<Scalar>& bias) {
  auto up = conv_transpose3d(decoder, kernel, bias, {1, 2, 2});
  require_rank(skip.shape(), 5, "transpose_conv_concat", "skip");
  for (int i = 0; i < 4; ++i)
    require(up.dim(i) == skip.dim(i), ErrorKind::Shape,
            "transpose_conv_concat: upsampled " + to_string(up.shape()) + " does not match skip " +
                to_string(skip.shape()));
  return concat(up, skip, 4);
}

template <typename Scalar>
Tensor<Scalar> channel_halving_max(const Tensor<Scalar>& x) {
  const int c = x.dim(-1);
  require(c % 2 == 0, ErrorKind::Shape, "channel_halving_max: channel count " + std::to_string(c) + " is odd");
  const int half = c / 2;
  const std::size_t cells = x.size() / c;
  Shape os = x.shape();
  os.back() = half;
  std::vector<Scalar> out(cells * half);
  std::vector<std::uint8_t> upper(cells * half);
  for (std::size_t i = 0; i < cells; ++i) {
    const Scalar* in = x.data() + i * c;
    for (int k = 0; k < half; ++k) {
      const bool hi = in[k + half] > in[k];
      upper[i * half + k] = hi;
      out[i * half + k] = hi ? in[k + half] : in[k];
    }
  }
  return make_result<Scalar>("channel_halving_max", os, std::move(out), {x.ptr()},
                             [cells, half, upper = std::move(upper)](Node<Scalar>& self) {
                               auto& gx = grad_of(*self.inputs[0]);
                               for (std::size_t i = 0; i < cells; ++i)
                                 for (int k = 0; k < half; ++k)
                                   gx[i * 2 * half + k + (upper[i * half + k] ? half : 0)] += self.grad[i * half + k];
                             });
}

template <typename Scalar>
Tensor<Scalar> dense(const Tensor<Scalar>& x, const Tensor<Scalar>& weights, const Tensor<Scalar>& bias) {
  require_rank(x.shape(), 2, "dense", "input");
  require_rank(weights.shape(), 2, "dense", "weights");
  const int n = x.dim(0), f = x.dim(1), o = weights.dim(1);
  require(weights.dim(0) == f, ErrorKind::Shape,
          "dense: input width " + std::to_string(f) + " does not match weights " + to_string(weights.shape()));
  require(bias.shape() == Shape{o}, ErrorKind::Shape, "dense: bias does not match output width");
  std::vector<Scalar> out(static_cast<std::size_t>(n) * o);
  MatrixMap<Scalar> om(out.data(), n, o);
  om.noalias() = ConstMatrixMap<Scalar>(x.data(), n, f) * ConstMatrixMap<Scalar>(weights.data(), f, o);
  om.rowwise() += Eigen::Map<const RowVector<Scalar>>(bias.data(), o);
  return make_result<Scalar>("dense", {n, o}, std::move(out), {x.ptr(), weights.ptr(), bias.ptr()},
                             [n, f, o](Node<Scalar>& self) {
                               auto& xn = *self.inputs[0];
                               auto& wn = *self.inputs[1];
                               auto& bn = *self.inputs[2];
                               const ConstMatrixMap<Scalar> g(self.grad.data(), n, o);
                               if (xn.requires_grad)
                                 MatrixMap<Scalar>(grad_of(xn).data(), n, f).noalias() +=
                                     g * ConstMatrixMap<Scalar>(wn.value.data(), f, o).transpose();
                               if (wn.requires_grad)
                                 MatrixMap<Scalar>(grad_of(wn).data(), f, o).noalias() +=
                                     ConstMatrixMap<Scalar>(xn.value.data(), n, f).transpose() * g;
                               if (bn.requires_grad)
                                 Eigen::Map<RowVector<Scalar>>(grad_of(bn).data(), o) += g.colwise().sum();
                             });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  std::vector<Scalar> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > 0 ? x.data()[i] : Scalar(0);
  return make_result<Scalar>("relu", x.shape(), std::move(out), {x.ptr()}, [](Node<Scalar>& self) {
    auto& in = *self.inputs[0];
    auto& gx = grad_of(in);
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (in.value[i] > 0) gx[i] += self.grad[i];
  });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  std::vector<Scalar> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Scalar v = x.data()[i];
    if (v >= 0) {
      out[i] = Scalar(1) / (Scalar(1) + std::exp(-v));
    } else {
      const Scalar e = std::exp(v);
      out[i] = e / (Scalar(1) + e);
    }
  }
  return make_result<Scalar>("sigmoid", x.shape(), std::move(out), {x.ptr()}, [](Node<Scalar>& self) {
    auto& gx = grad_of(*self.inputs[0]);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const Scalar y = self.value[i];
      gx[i] += self.grad[i] * y * (Scalar(1) - y);
    }
  });
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x) {
  const int k = x.dim(-1);
  const std::size_t rows = x.size() / k;
  std::vector<Scalar> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* in = x.data() + r * k;
    Scalar* o = out.data() + r * k;
    const Scalar m = *std::max_element(in, in + k);
    Scalar total = 0;
    for (int i = 0; i < k; ++i) total += (o[i] = std::exp(in[i] - m));
    for (int i = 0; i < k; ++i) o[i] /= total;
  }
  return make_result<Scalar>("softmax", x.shape(), std::move(out), {x.ptr()}, [rows, k](Node<Scalar>& self) {
    auto& gx = grad_of(*self.inputs[0]);
    for (std::size_t r = 0; r < rows; ++r) {
      const Scalar* y = self.value.data() + r * k;
      const Scalar* g = self.grad.data() + r * k;
      Scalar dot = 0;
      for (int i = 0; i < k; ++i) dot += g[i] * y[i];
      for (int i = 0; i < k; ++i) gx[r * k + i] += y[i] * (g[i] - dot);
    }
  });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  require(numel(shape) == x.size(), ErrorKind::Shape,
          "reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  std::vector<Scalar> out(x.values().begin(), x.values().end());
  return make_result<Scalar>("reshape", std::move(shape), std::move(out), {x.ptr()}, [](Node<Scalar>& self) {
    auto& gx = grad_of(*self.inputs[0]);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require(a.shape() == b.shape(), ErrorKind::Shape,
          "mul: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) + " differ");
  std::vector<Scalar> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<Scalar>("mul", a.shape(), std::move(out), {a.ptr(), b.ptr()}, [](Node<Scalar>& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    if (an.requires_grad) {
      auto& ga = grad_of(an);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * bn.value[i];
    }
    if (bn.requires_grad) {
      auto& gb = grad_of(bn);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * an.value[i];
    }
  });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  Scalar total = 0;
  for (Scalar v : x.values()) total += v;
  return make_result<Scalar>("sum", {1}, {total}, {x.ptr()}, [](Node<Scalar>& self) {
    auto& gx = grad_of(*self.inputs[0]);
    for (auto& g : gx) g += self.grad[0];
  });
}

#define PERFUSEG_INSTANTIATE(S)                                                                        \
  template Tensor<S> conv3d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, DepthPadding);       \
  template Tensor<S> max_pool3d(const Tensor<S>&, Window3, bool);                                      \
  template Tensor<S> avg_pool3d(const Tensor<S>&, Window3, bool);                                      \
  template Tensor<S> conv_transpose3d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Window3);  \
  template Tensor<S> concat(const Tensor<S>&, const Tensor<S>&, int);                                  \
  template Tensor<S> transpose_conv_concat(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,       \
                                           const Tensor<S>&);                                          \
  template Tensor<S> channel_halving_max(const Tensor<S>&);                                            \
  template Tensor<S> dense(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                      \
  template Tensor<S> relu(const Tensor<S>&);                                                           \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                        \
  template Tensor<S> softmax(const Tensor<S>&);                                                        \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                                 \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                          \
  template Tensor<S> sum(const Tensor<S>&);

PERFUSEG_INSTANTIATE(float)
PERFUSEG_INSTANTIATE(double)

}  // namespace perfuseg::nn

#include "ldcbm/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "ldcbm/error.hpp"

namespace ldcbm::ad {
namespace {

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw Error("operation on an unbound Var");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b, const char* op) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw Error(std::string(op) + ": operands live on different tapes");
  return t;
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                   shape_string(b));
}

void require_rank(const char* op, const Var& v, std::size_t rank) {
  if (v.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     " operand, got " + shape_string(v.shape()));
  }
}

// Broadcast check for elementwise binaries.
bool rhs_is_scalar(const char* op, const Var& a, const Var& b) {
  if (a.shape() == b.shape()) return false;
  if (b.value().size() == 1) return true;
  shape_fail(op, a.shape(), b.shape());
}

template <typename Fwd, typename Bwd>
Var unary(const Var& a, Fwd fwd, Bwd bwd) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia, bwd](const Tensor& g, BackwardContext& ctx) {
    const Tensor& xv = ctx.value(ia);
    const Tensor& yv = ctx.output();
    Tensor& ga = ctx.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bwd(xv[i], yv[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b, "add");
  const bool bcast = rhs_is_scalar("add", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + (bcast ? y[0] : y[i]);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, bcast](const Tensor& g, BackwardContext& ctx) {
    if (ctx.wants(ia)) {
      Tensor& ga = ctx.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (ctx.wants(ib)) {
      Tensor& gb = ctx.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[bcast ? 0 : i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b, "sub");
  const bool bcast = rhs_is_scalar("sub", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - (bcast ? y[0] : y[i]);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, bcast](const Tensor& g, BackwardContext& ctx) {
    if (ctx.wants(ia)) {
      Tensor& ga = ctx.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (ctx.wants(ib)) {
      Tensor& gb = ctx.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[bcast ? 0 : i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b, "mul");
  const bool bcast = rhs_is_scalar("mul", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * (bcast ? y[0] : y[i]);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, bcast](const Tensor& g, BackwardContext& ctx) {
    const Tensor& xv = ctx.value(ia);
    const Tensor& yv = ctx.value(ib);
    if (ctx.wants(ia)) {
      Tensor& ga = ctx.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (bcast ? yv[0] : yv[i]);
    }
    if (ctx.wants(ib)) {
      Tensor& gb = ctx.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[bcast ? 0 : i] += g[i] * xv[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b, "div");
  const bool bcast = rhs_is_scalar("div", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 0.0) throw NumericError("div: zero denominator at index " + std::to_string(i));
  }
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / (bcast ? y[0] : y[i]);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, bcast](const Tensor& g, BackwardContext& ctx) {
    const Tensor& yv = ctx.value(ib);
    const Tensor& out_v = ctx.output();
    if (ctx.wants(ia)) {
      Tensor& ga = ctx.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (bcast ? yv[0] : yv[i]);
    }
    if (ctx.wants(ib)) {
      Tensor& gb = ctx.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double d = bcast ? yv[0] : yv[i];
        gb[bcast ? 0 : i] -= g[i] * out_v[i] / d;
      }
    }
  });
}

Var scale(const Var& a, double factor) {
  return unary(
      a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Var add_scalar(const Var& a, double offset) {
  return unary(
      a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var sqrt(const Var& a) {
  for (double v : a.value().values()) {
    if (v < 0.0) throw NumericError("sqrt: negative operand " + std::to_string(v));
  }
  // Derivative at 0 is taken as 0 (subgradient convention) instead of +inf.
  return unary(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var log(const Var& a) {
  for (double v : a.value().values()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive operand " + std::to_string(v));
  }
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var clamp(const Var& a, double lo, double hi) {
  if (!(lo <= hi)) throw Error("clamp: lo must not exceed hi");
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var sum(const Var& a) {
  Tape& t = tape_of(a);
  double acc = 0.0;
  for (double v : a.value().values()) acc += v;
  const std::size_t ia = a.id();
  return t.record(Tensor::scalar(acc), {ia}, [ia](const Tensor& g, BackwardContext& ctx) {
    Tensor& ga = ctx.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  });
}

Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty operand");
  Tape& t = tape_of(a);
  double acc = 0.0;
  for (double v : a.value().values()) acc += v;
  const std::size_t ia = a.id();
  return t.record(Tensor::scalar(acc / static_cast<double>(n)), {ia},
                  [ia, n](const Tensor& g, BackwardContext& ctx) {
                    Tensor& ga = ctx.grad(ia);
                    const double share = g[0] / static_cast<double>(n);
                    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += share;
                  });
}

Var col_mean(const Var& x) {
  require_rank("col_mean", x, 2);
  Tape& t = tape_of(x);
  const Tensor& v = x.value();
  const std::size_t rows = v.dim(0), cols = v.dim(1);
  if (rows == 0) throw ShapeError("col_mean: no rows");
  Tensor out(Shape{cols});
  for (std::size_t c = 0; c < cols; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < rows; ++r) acc += v.at(r, c);
    out[c] = acc / static_cast<double>(rows);
  }
  const std::size_t ix = x.id();
  return t.record(std::move(out), {ix}, [ix, rows, cols](const Tensor& g, BackwardContext& ctx) {
    Tensor& gx = ctx.grad(ix);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) gx.at(r, c) += g[c] / static_cast<double>(rows);
  });
}

Var col_variance(const Var& x) {
  require_rank("col_variance", x, 2);
  Tape& t = tape_of(x);
  const Tensor& v = x.value();
  const std::size_t rows = v.dim(0), cols = v.dim(1);
  if (rows == 0) throw ShapeError("col_variance: no rows");
  const double n = static_cast<double>(rows);
  std::vector<double> mu(cols);
  Tensor out(Shape{cols});
  for (std::size_t c = 0; c < cols; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < rows; ++r) acc += v.at(r, c);
    mu[c] = acc / n;
    double sq = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double d = v.at(r, c) - mu[c];
      sq += d * d;
    }
    out[c] = sq / n;
  }
  const std::size_t ix = x.id();
  return t.record(std::move(out), {ix},
                  [ix, rows, cols, n, mu = std::move(mu)](const Tensor& g, BackwardContext& ctx) {
                    const Tensor& xv = ctx.value(ix);
                    Tensor& gx = ctx.grad(ix);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < cols; ++c)
                        gx.at(r, c) += g[c] * 2.0 * (xv.at(r, c) - mu[c]) / n;
                  });
}

Var broadcast_rows(const Var& v, std::size_t rows) {
  require_rank("broadcast_rows", v, 1);
  Tape& t = tape_of(v);
  const std::size_t cols = v.value().size();
  Tensor out(Shape{rows, cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = v.value()[c];
  const std::size_t iv = v.id();
  return t.record(std::move(out), {iv}, [iv, rows, cols](const Tensor& g, BackwardContext& ctx) {
    Tensor& gv = ctx.grad(iv);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) gv[c] += g.at(r, c);
  });
}

Var reshape(const Var& a, Shape shape) {
  if (shape_size(shape) != a.value().size()) shape_fail("reshape", a.shape(), shape);
  Tape& t = tape_of(a);
  Tensor out(std::move(shape), std::vector<double>(a.value().values().begin(),
                                                   a.value().values().end()));
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia](const Tensor& g, BackwardContext& ctx) {
    Tensor& ga = ctx.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var transpose(const Var& a) {
  require_rank("transpose", a, 2);
  Tape& t = tape_of(a);
  const std::size_t rows = a.value().dim(0), cols = a.value().dim(1);
  Tensor out(Shape{cols, rows});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(c, r) = a.value().at(r, c);
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia, rows, cols](const Tensor& g, BackwardContext& ctx) {
    Tensor& ga = ctx.grad(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) ga.at(r, c) += g.at(c, r);
  });
}

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b, "matmul");
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
  if (y.dim(0) != k) shape_fail("matmul", x.shape(), y.shape());
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += x.at(i, p) * y.at(p, j);
      out.at(i, j) = acc;
    }
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, m, k, n](const Tensor& g, BackwardContext& ctx) {
    const Tensor& xv = ctx.value(ia);
    const Tensor& yv = ctx.value(ib);
    if (ctx.wants(ia)) {
      Tensor& ga = ctx.grad(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g.at(i, j) * yv.at(p, j);
          ga.at(i, p) += acc;
        }
    }
    if (ctx.wants(ib)) {
      Tensor& gb = ctx.grad(ib);
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < m; ++i) acc += xv.at(i, p) * g.at(i, j);
          gb.at(p, j) += acc;
        }
    }
  });
}

Var outer(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b, "outer");
  require_rank("outer", a, 1);
  require_rank("outer", b, 1);
  const std::size_t m = a.value().size(), n = b.value().size();
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = a.value()[i] * b.value()[j];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, m, n](const Tensor& g, BackwardContext& ctx) {
    const Tensor& av = ctx.value(ia);
    const Tensor& bv = ctx.value(ib);
    if (ctx.wants(ia)) {
      Tensor& ga = ctx.grad(ia);
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += g.at(i, j) * bv[j];
        ga[i] += acc;
      }
    }
    if (ctx.wants(ib)) {
      Tensor& gb = ctx.grad(ib);
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) acc += g.at(i, j) * av[i];
        gb[j] += acc;
      }
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  Tape& t = tape_of(x, weight, "linear");
  tape_of(x, bias, "linear");
  require_rank("linear", x, 2);
  require_rank("linear", weight, 2);
  require_rank("linear", bias, 1);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const std::size_t rows = xv.dim(0), in = xv.dim(1), out_dim = wv.dim(0);
  if (wv.dim(1) != in) shape_fail("linear", xv.shape(), wv.shape());
  if (bias.value().size() != out_dim) shape_fail("linear", wv.shape(), bias.shape());
  Tensor out(Shape{rows, out_dim});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < out_dim; ++o) {
      double acc = 0.0;
      for (std::size_t k = 0; k < in; ++k) acc += xv.at(r, k) * wv.at(o, k);
      out.at(r, o) = acc + bias.value()[o];
    }
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  return t.record(
      std::move(out), {ix, iw, ib},
      [ix, iw, ib, rows, in, out_dim](const Tensor& g, BackwardContext& ctx) {
        const Tensor& xv2 = ctx.value(ix);
        const Tensor& wv2 = ctx.value(iw);
        if (ctx.wants(ix)) {
          Tensor& gx = ctx.grad(ix);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t k = 0; k < in; ++k) {
              double acc = 0.0;
              for (std::size_t o = 0; o < out_dim; ++o) acc += g.at(r, o) * wv2.at(o, k);
              gx.at(r, k) += acc;
            }
        }
        if (ctx.wants(iw)) {
          Tensor& gw = ctx.grad(iw);
          for (std::size_t o = 0; o < out_dim; ++o)
            for (std::size_t k = 0; k < in; ++k) {
              double acc = 0.0;
              for (std::size_t r = 0; r < rows; ++r) acc += g.at(r, o) * xv2.at(r, k);
              gw.at(o, k) += acc;
            }
        }
        if (ctx.wants(ib)) {
          Tensor& gb = ctx.grad(ib);
          for (std::size_t o = 0; o < out_dim; ++o) {
            double acc = 0.0;
            for (std::size_t r = 0; r < rows; ++r) acc += g.at(r, o);
            gb[o] += acc;
          }
        }
      });
}

Var grouped_linear(const Var& x, std::span<const Var> weights,
                   const std::vector<std::vector<std::size_t>>& columns, const Var& bias) {
  Tape& t = tape_of(x, bias, "grouped_linear");
  require_rank("grouped_linear", x, 2);
  require_rank("grouped_linear", bias, 1);
  const Tensor& xv = x.value();
  const std::size_t rows = xv.dim(0), in = xv.dim(1), units = weights.size();
  if (columns.size() != units || bias.value().size() != units) {
    throw ShapeError("grouped_linear: " + std::to_string(units) + " weight vectors, " +
                     std::to_string(columns.size()) + " column lists, bias " +
                     shape_string(bias.shape()));
  }
  std::vector<std::size_t> ids{x.id(), bias.id()};
  for (std::size_t i = 0; i < units; ++i) {
    tape_of(x, weights[i], "grouped_linear");
    if (weights[i].value().rank() != 1 || weights[i].value().size() != columns[i].size()) {
      throw ShapeError("grouped_linear: unit " + std::to_string(i) + " weight " +
                       shape_string(weights[i].shape()) + " does not match " +
                       std::to_string(columns[i].size()) + " selected columns");
    }
    for (std::size_t c : columns[i]) {
      if (c >= in) {
        throw ShapeError("grouped_linear: column " + std::to_string(c) +
                         " out of range for input " + shape_string(xv.shape()));
      }
    }
    ids.push_back(weights[i].id());
  }
  Tensor out(Shape{rows, units});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < units; ++i) {
      const Tensor& w = weights[i].value();
      double acc = 0.0;
      for (std::size_t p = 0; p < columns[i].size(); ++p) acc += xv.at(r, columns[i][p]) * w[p];
      out.at(r, i) = acc + bias.value()[i];
    }
  return t.record(std::move(out), ids,
                  [ids, columns, rows, units](const Tensor& g, BackwardContext& ctx) {
                    const std::size_t ix = ids[0], ib = ids[1];
                    const Tensor& xv2 = ctx.value(ix);
                    if (ctx.wants(ix)) {
                      Tensor& gx = ctx.grad(ix);
                      Tensor partial(gx.shape(), 0.0);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t i = 0; i < units; ++i) {
                          const Tensor& w = ctx.value(ids[2 + i]);
                          for (std::size_t p = 0; p < columns[i].size(); ++p)
                            partial.at(r, columns[i][p]) += g.at(r, i) * w[p];
                        }
                      for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += partial[k];
                    }
                    for (std::size_t i = 0; i < units; ++i) {
                      const std::size_t iw = ids[2 + i];
                      if (!ctx.wants(iw)) continue;
                      Tensor& gw = ctx.grad(iw);
                      for (std::size_t p = 0; p < columns[i].size(); ++p) {
                        double acc = 0.0;
                        for (std::size_t r = 0; r < rows; ++r)
                          acc += g.at(r, i) * xv2.at(r, columns[i][p]);
                        gw[p] += acc;
                      }
                    }
                    if (ctx.wants(ib)) {
                      Tensor& gb = ctx.grad(ib);
                      for (std::size_t i = 0; i < units; ++i) {
                        double acc = 0.0;
                        for (std::size_t r = 0; r < rows; ++r) acc += g.at(r, i);
                        gb[i] += acc;
                      }
                    }
                  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions options) {
  Tape& t = tape_of(x, weight, "conv2d");
  tape_of(x, bias, "conv2d");
  require_rank("conv2d", x, 4);
  require_rank("conv2d", weight, 4);
  require_rank("conv2d", bias, 1);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const std::size_t n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), cin = xv.dim(3);
  const std::size_t kh = wv.dim(0), kw = wv.dim(1), cout = wv.dim(3);
  const std::size_t stride = options.stride, pad = options.padding;
  if (wv.dim(2) != cin) shape_fail("conv2d", xv.shape(), wv.shape());
  if (bias.value().size() != cout) shape_fail("conv2d", wv.shape(), bias.shape());
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (h + 2 * pad < kh || w + 2 * pad < kw) shape_fail("conv2d", xv.shape(), wv.shape());
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (w + 2 * pad - kw) / stride + 1;

  Tensor out(Shape{n, ho, wo, cout});
  const double* xd = xv.data();
  const double* wd = wv.data();
  const double* bd = bias.value().data();
  double* od = out.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double* orow = od + ((b * ho + oy) * wo + ox) * cout;
        for (std::size_t co = 0; co < cout; ++co) orow[co] = 0.0;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const double* xrow = xd + ((b * h + iy) * w + ix) * cin;
            const double* wk = wd + (ky * kw + kx) * cin * cout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const double xval = xrow[ci];
              const double* wrow = wk + ci * cout;
              for (std::size_t co = 0; co < cout; ++co) orow[co] += xval * wrow[co];
            }
          }
        }
        for (std::size_t co = 0; co < cout; ++co) orow[co] += bd[co];
      }

  const std::size_t ixd = x.id(), iwd = weight.id(), ibd = bias.id();
  return t.record(
      std::move(out), {ixd, iwd, ibd},
      [=](const Tensor& g, BackwardContext& ctx) {
        const double* xd2 = ctx.value(ixd).data();
        const double* wd2 = ctx.value(iwd).data();
        const bool want_x = ctx.wants(ixd), want_w = ctx.wants(iwd), want_b = ctx.wants(ibd);
        double* gx = want_x ? ctx.grad(ixd).data() : nullptr;
        double* gw = want_w ? ctx.grad(iwd).data() : nullptr;
        double* gb = want_b ? ctx.grad(ibd).data() : nullptr;
        const double* gd = g.data();
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const double* grow = gd + ((b * ho + oy) * wo + ox) * cout;
              if (gb != nullptr)
                for (std::size_t co = 0; co < cout; ++co) gb[co] += grow[co];
              for (std::size_t ky = 0; ky < kh; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                            static_cast<std::ptrdiff_t>(pad);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                  const std::size_t xoff = ((b * h + iy) * w + ix) * cin;
                  const std::size_t woff = (ky * kw + kx) * cin * cout;
                  for (std::size_t ci = 0; ci < cin; ++ci) {
                    const double* wrow = wd2 + woff + ci * cout;
                    if (gx != nullptr) {
                      double acc = 0.0;
                      for (std::size_t co = 0; co < cout; ++co) acc += grow[co] * wrow[co];
                      gx[xoff + ci] += acc;
                    }
                    if (gw != nullptr) {
                      const double xval = xd2[xoff + ci];
                      double* gwrow = gw + woff + ci * cout;
                      for (std::size_t co = 0; co < cout; ++co) gwrow[co] += xval * grow[co];
                    }
                  }
                }
              }
            }
      });
}

Var global_avg_pool(const Var& x) {
  require_rank("global_avg_pool", x, 4);
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  const std::size_t n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
  if (h * w == 0) throw ShapeError("global_avg_pool: empty spatial extent");
  const double area = static_cast<double>(h * w);
  Tensor out(Shape{n, c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (std::size_t p = 0; p < h * w; ++p) acc += xv[(b * h * w + p) * c + ch];
      out.at(b, ch) = acc / area;
    }
  const std::size_t ix = x.id();
  return t.record(std::move(out), {ix}, [ix, n, h, w, c, area](const Tensor& g, BackwardContext& ctx) {
    Tensor& gx = ctx.grad(ix);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < h * w; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) gx[(b * h * w + p) * c + ch] += g.at(b, ch) / area;
  });
}

Var select_columns(const Var& x, std::span<const std::size_t> columns) {
  require_rank("select_columns", x, 2);
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  std::vector<std::size_t> picked(columns.begin(), columns.end());
  for (std::size_t c : picked) {
    if (c >= cols) {
      throw ShapeError("select_columns: column " + std::to_string(c) + " out of range for " +
                       shape_string(xv.shape()));
    }
  }
  Tensor out(Shape{rows, picked.size()});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t p = 0; p < picked.size(); ++p) out.at(r, p) = xv.at(r, picked[p]);
  const std::size_t ix = x.id();
  return t.record(std::move(out), {ix},
                  [ix, rows, picked = std::move(picked)](const Tensor& g, BackwardContext& ctx) {
                    Tensor& gx = ctx.grad(ix);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t p = 0; p < picked.size(); ++p)
                        gx.at(r, picked[p]) += g.at(r, p);
                  });
}

Var softmax(const Var& x) {
  require_rank("softmax", x, 2);
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = xv.at(r, 0);
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, xv.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(xv.at(r, c) - mx);
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = std::exp(xv.at(r, c) - mx) / z;
  }
  const std::size_t ix = x.id();
  return t.record(std::move(out), {ix}, [ix, rows, cols](const Tensor& g, BackwardContext& ctx) {
    const Tensor& p = ctx.output();
    Tensor& gx = ctx.grad(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g.at(r, c) * p.at(r, c);
      for (std::size_t c = 0; c < cols; ++c) gx.at(r, c) += p.at(r, c) * (g.at(r, c) - dot);
    }
  });
}

Var log_softmax(const Var& x) {
  require_rank("log_softmax", x, 2);
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = xv.at(r, 0);
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, xv.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(xv.at(r, c) - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = xv.at(r, c) - lse;
  }
  const std::size_t ix = x.id();
  return t.record(std::move(out), {ix}, [ix, rows, cols](const Tensor& g, BackwardContext& ctx) {
    const Tensor& lp = ctx.output();
    Tensor& gx = ctx.grad(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) total += g.at(r, c);
      for (std::size_t c = 0; c < cols; ++c)
        gx.at(r, c) += g.at(r, c) - std::exp(lp.at(r, c)) * total;
    }
  });
}

Var pick(const Var& x, std::span<const std::size_t> index) {
  require_rank("pick", x, 2);
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  if (index.size() != rows) {
    throw ShapeError("pick: " + std::to_string(index.size()) + " indices for " +
                     shape_string(xv.shape()));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    if (idx[r] >= cols) {
      throw ShapeError("pick: index " + std::to_string(idx[r]) + " out of range for " +
                       shape_string(xv.shape()));
    }
    out[r] = xv.at(r, idx[r]);
  }
  const std::size_t ix = x.id();
  return t.record(std::move(out), {ix}, [ix, idx = std::move(idx)](const Tensor& g, BackwardContext& ctx) {
    Tensor& gx = ctx.grad(ix);
    for (std::size_t r = 0; r < idx.size(); ++r) gx.at(r, idx[r]) += g[r];
  });
}

Var pearson_similarity(const Var& x, double epsilon) {
  require_rank("pearson_similarity", x, 2);
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  if (rows < 2) {
    throw ShapeError("pearson_similarity: needs at least 2 samples, got " + std::to_string(rows));
  }
  const double n = static_cast<double>(rows);

  // Column-major centred copy: centred[c * rows + r].
  std::vector<double> centred(rows * cols);
  std::vector<double> sigma(cols);
  for (std::size_t c = 0; c < cols; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < rows; ++r) acc += xv.at(r, c);
    const double mu = acc / n;
    double sq = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double d = xv.at(r, c) - mu;
      centred[c * rows + r] = d;
      sq += d * d;
    }
    sigma[c] = std::sqrt(sq / n);
  }
  auto cov = [&](std::size_t i, std::size_t j) {
    double acc = 0.0;
    for (std::size_t r = 0; r < rows; ++r) acc += centred[i * rows + r] * centred[j * rows + r];
    return acc / n;
  };

  Tensor out(Shape{cols, cols});
  for (std::size_t i = 0; i < cols; ++i) {
    out.at(i, i) = sigma[i] > 0.0 ? 2.0 : 1.0;
    for (std::size_t j = i + 1; j < cols; ++j) {
      const double s = cov(i, j) / (sigma[i] * sigma[j] + epsilon) + 1.0;
      out.at(i, j) = s;
      out.at(j, i) = s;
    }
  }

  const std::size_t ix = x.id();
  return t.record(
      std::move(out), {ix},
      [ix, rows, cols, n, epsilon, centred = std::move(centred), sigma = std::move(sigma)](
          const Tensor& g, BackwardContext& ctx) {
        Tensor& gx = ctx.grad(ix);
        std::vector<double> g_sigma(cols, 0.0);
        for (std::size_t i = 0; i < cols; ++i)
          for (std::size_t j = i + 1; j < cols; ++j) {
            const double gs = g.at(i, j) + g.at(j, i);
            if (gs == 0.0) continue;
            double c = 0.0;
            for (std::size_t r = 0; r < rows; ++r) c += centred[i * rows + r] * centred[j * rows + r];
            c /= n;
            const double denom = sigma[i] * sigma[j] + epsilon;
            const double g_cov = gs / denom;
            g_sigma[i] -= gs * c * sigma[j] / (denom * denom);
            g_sigma[j] -= gs * c * sigma[i] / (denom * denom);
            for (std::size_t r = 0; r < rows; ++r) {
              gx.at(r, i) += g_cov * centred[j * rows + r] / n;
              gx.at(r, j) += g_cov * centred[i * rows + r] / n;
            }
          }
        for (std::size_t i = 0; i < cols; ++i) {
          if (sigma[i] <= 0.0 || g_sigma[i] == 0.0) continue;
          for (std::size_t r = 0; r < rows; ++r)
            gx.at(r, i) += g_sigma[i] * centred[i * rows + r] / (n * sigma[i]);
        }
      });
}

}  // namespace ldcbm::ad

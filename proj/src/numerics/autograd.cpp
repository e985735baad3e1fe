#include "lvprune/numerics/autograd.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "lvprune/numerics/kernels.hpp"

namespace lvprune::ad {

const Tensor& Var::value() const { return tape_->value(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

double Var::scalar() const {
  const Tensor& v = value();
  if (v.size() != 1) throw DimensionError("Var::scalar on non-scalar " + shape_string(v));
  return v(0, 0);
}

Var Tape::push(Tensor value, bool requires_grad, Backward backward) {
  nodes_.push_back(Node{std::move(value), nullptr, Tensor(), requires_grad, std::move(backward)});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::parameter(Tensor value) { return push(std::move(value), true, nullptr); }

Var Tape::constant_view(const Tensor& value) {
  Var v = push(Tensor(), false, nullptr);
  nodes_.back().view = &value;
  return v;
}

Var Tape::parameter_view(const Tensor& value) {
  Var v = push(Tensor(), true, nullptr);
  nodes_.back().view = &value;
  return v;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape_ != this) throw Error("autograd: input recorded on a different tape");
    needs = needs || nodes_[v.id_].requires_grad;
  }
  return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id_];
  if (!n.requires_grad) return Tensor();
  if (n.grad.size() == 0) return Tensor::Zero(value(v).rows(), value(v).cols());
  return n.grad;
}

Tensor Tape::take_grad(Var v) {
  Node& n = nodes_[v.id_];
  if (!n.requires_grad) return Tensor();
  if (n.grad.size() == 0) return Tensor::Zero(value(v).rows(), value(v).cols());
  return std::move(n.grad);
}

void Tape::backward(Var root) {
  if (root.tape_ != this) throw Error("autograd: backward root from a different tape");
  if (value(root).size() != 1) {
    throw DimensionError("autograd: backward root must be 1x1, got " + shape_string(value(root)));
  }
  for (Node& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[root.id_].requires_grad) return;
  nodes_[root.id_].grad = Tensor::Ones(1, 1);
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() != 0) n.backward(*this, n.grad);
  }
}

Var matmul(Var a, Var b) {
  Tape& t = *a.tape();
  return t.record(lvprune::matmul(a.value(), b.value()), {a, b},
                  [a, b](Tape& t, const Tensor& g) {
                    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
                    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
                  });
}

Var transpose(Var a) {
  Tape& t = *a.tape();
  return t.record(a.value().transpose(), {a},
                  [a](Tape& t, const Tensor& g) { t.accumulate(a, g.transpose()); });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tape& t = *a.tape();
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tape& t = *a.tape();
  return t.record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tape& t = *a.tape();
  return t.record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(b.value()));
    if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape();
  return t.record(a.value() * s, {a}, [a, s](Tape& t, const Tensor& g) { t.accumulate(a, g * s); });
}

Var add_scalar(Var a, double s) {
  Tape& t = *a.tape();
  return t.record((a.value().array() + s).matrix(), {a},
                  [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_row: expected 1x" + std::to_string(a.cols()) + " row, got " +
                         shape_string(row.value()));
  }
  Tape& t = *a.tape();
  Tensor out = a.value().rowwise() + row.value().row(0);
  return t.record(std::move(out), {a, row}, [a, row](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (row.requires_grad()) t.accumulate(row, g.colwise().sum());
  });
}

Var add_constant(Var a, const Tensor& c) {
  require_same_shape(a.value(), c, "add_constant");
  Tape& t = *a.tape();
  return t.record(a.value() + c, {a}, [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
}

Var square(Var a) {
  Tape& t = *a.tape();
  return t.record(a.value().array().square().matrix(), {a}, [a](Tape& t, const Tensor& g) {
    t.accumulate(a, 2.0 * g.cwiseProduct(a.value()));
  });
}

Var silu(Var a) {
  Tape& t = *a.tape();
  return t.record(lvprune::silu(a.value()), {a}, [a](Tape& t, const Tensor& g) {
    const Tensor s = logistic(a.value());
    const Tensor d = (s.array() + a.value().array() * s.array() * (1.0 - s.array())).matrix();
    t.accumulate(a, g.cwiseProduct(d));
  });
}

namespace {

// Shared softmax adjoint: da = y * (g - rowsum(g * y)).
Tensor softmax_adjoint(const Tensor& y, const Tensor& g) {
  const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
  return y.cwiseProduct(g - dots.replicate(1, g.cols()));
}

}  // namespace

Var row_softmax(Var a) {
  Tape& t = *a.tape();
  Tensor y = lvprune::row_softmax(a.value());
  return t.record(y, {a}, [a, y](Tape& t, const Tensor& g) {
    t.accumulate(a, softmax_adjoint(y, g));
  });
}

Var masked_row_softmax(Var a, Var mask) {
  Tape& t = *a.tape();
  Tensor y = lvprune::masked_row_softmax(a.value(), mask.value());
  return t.record(y, {a, mask}, [a, mask, y](Tape& t, const Tensor& g) {
    const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    if (a.requires_grad()) t.accumulate(a, softmax_adjoint(y, g));
    if (mask.requires_grad()) {
      // d y_ij / d m_il = delta_jl e_il / Z_i - y_ij e_il / Z_i, so
      // dm_il = (e_il / Z_i) (g_il - sum_j g_ij y_ij).
      const Tensor& av = a.value();
      const Tensor& mv = mask.value();
      Tensor dm(av.rows(), av.cols());
      for (Eigen::Index i = 0; i < av.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < av.cols(); ++j) {
          if (mv(i, j) != 0.0 && av(i, j) > mx) mx = av(i, j);
        }
        double z = 0.0;
        for (Eigen::Index j = 0; j < av.cols(); ++j) {
          if (mv(i, j) != 0.0) z += std::exp(av(i, j) - mx) * mv(i, j);
        }
        for (Eigen::Index j = 0; j < av.cols(); ++j) {
          dm(i, j) = std::exp(av(i, j) - mx) / z * (g(i, j) - dots(i));
        }
      }
      t.accumulate(mask, dm);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = *x.tape();
  Tensor out = lvprune::layer_norm(x.value(), gain.value(), bias.value(), eps);
  return t.record(std::move(out), {x, gain, bias}, [x, gain, bias, eps](Tape& t, const Tensor& g) {
    const Tensor& xv = x.value();
    const Eigen::Index n = xv.rows();
    const Eigen::Index d = xv.cols();
    Tensor xhat(n, d);
    Eigen::VectorXd inv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mean = xv.row(i).sum() / static_cast<double>(d);
      const auto c = (xv.row(i).array() - mean).eval();
      const double var = c.square().sum() / static_cast<double>(d);
      inv(i) = 1.0 / std::sqrt(var + eps);
      xhat.row(i) = (c * inv(i)).matrix();
    }
    if (gain.requires_grad()) t.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
    if (bias.requires_grad()) t.accumulate(bias, g.colwise().sum());
    if (x.requires_grad()) {
      Tensor dx(n, d);
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::RowVectorXd dxhat = g.row(i).cwiseProduct(gain.value().row(0));
        const double m1 = dxhat.mean();
        const double m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
        dx.row(i) = inv(i) * (dxhat.array() - m1 - xhat.row(i).array() * m2).matrix();
      }
      t.accumulate(x, dx);
    }
  });
}

Var gather_rows(Var a, std::span<const int> rows) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  Tensor out(static_cast<Eigen::Index>(rows.size()), av.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= av.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[r]) + " out of range " +
                           shape_string(av));
    }
    out.row(static_cast<Eigen::Index>(r)) = av.row(rows[r]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return t.record(std::move(out), {a}, [a, idx = std::move(idx)](Tape& t, const Tensor& g) {
    for (std::size_t r = 0; r < idx.size(); ++r) {
      t.accumulate_block(a, idx[r], 0, g.row(static_cast<Eigen::Index>(r)));
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") out of range " + shape_string(a.value()));
  }
  Tape& t = *a.tape();
  return t.record(a.value().middleCols(start, count), {a},
                  [a, start, count](Tape& t, const Tensor& g) {
                    t.accumulate_block(a, 0, start, g);
                  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Tape& t = *parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> in(parts.begin(), parts.end());
  return t.record(std::move(out), parts, [in](Tape& t, const Tensor& g) {
    Eigen::Index at = 0;
    for (const Var& p : in) {
      if (p.requires_grad()) t.accumulate(p, g.middleCols(at, p.cols()));
      at += p.cols();
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Tape& t = *parts.front().tape();
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw DimensionError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> in(parts.begin(), parts.end());
  return t.record(std::move(out), parts, [in](Tape& t, const Tensor& g) {
    Eigen::Index at = 0;
    for (const Var& p : in) {
      if (p.requires_grad()) t.accumulate(p, g.middleRows(at, p.rows()));
      at += p.rows();
    }
  });
}

namespace {

// Rotates (or, with sign = -1, un-rotates) column pairs of x in place.
void apply_rotary(Tensor& x, std::span<const int> positions, Eigen::Index head_dim, double base,
                  double sign) {
  const Eigen::Index heads = x.cols() / head_dim;
  std::vector<double> freq(static_cast<std::size_t>(head_dim / 2));
  for (Eigen::Index i = 0; i < head_dim / 2; ++i) {
    freq[static_cast<std::size_t>(i)] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
  }
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double pos = positions[static_cast<std::size_t>(r)];
    for (Eigen::Index i = 0; i < head_dim / 2; ++i) {
      const double theta = pos * freq[static_cast<std::size_t>(i)];
      const double c = std::cos(theta);
      const double s = sign * std::sin(theta);
      for (Eigen::Index h = 0; h < heads; ++h) {
        const Eigen::Index j = h * head_dim + 2 * i;
        const double x0 = x(r, j);
        const double x1 = x(r, j + 1);
        x(r, j) = x0 * c - x1 * s;
        x(r, j + 1) = x0 * s + x1 * c;
      }
    }
  }
}

}  // namespace

Var rotary(Var a, std::span<const int> positions, Eigen::Index head_dim, double base) {
  if (static_cast<Eigen::Index>(positions.size()) != a.rows()) {
    throw DimensionError("rotary: " + std::to_string(positions.size()) + " positions for " +
                         std::to_string(a.rows()) + " rows");
  }
  if (head_dim <= 0 || head_dim % 2 != 0 || a.cols() % head_dim != 0) {
    throw DimensionError("rotary: head_dim must be even and divide the width");
  }
  Tape& t = *a.tape();
  Tensor out = a.value();
  apply_rotary(out, positions, head_dim, base, 1.0);
  std::vector<int> pos(positions.begin(), positions.end());
  return t.record(std::move(out), {a},
                  [a, pos = std::move(pos), head_dim, base](Tape& t, const Tensor& g) {
                    Tensor da = g;
                    apply_rotary(da, pos, head_dim, base, -1.0);
                    t.accumulate(a, da);
                  });
}

Var sum(Var a) {
  Tape& t = *a.tape();
  Tensor out(1, 1);
  out(0, 0) = a.value().sum();
  return t.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    t.accumulate(a, Tensor::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean(Var a) {
  if (a.value().size() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var huber(Var a, double beta) {
  Tape& t = *a.tape();
  Tensor out = a.value().unaryExpr([beta](double x) {
    const double ax = std::abs(x);
    return ax <= beta ? 0.5 * x * x : beta * (ax - 0.5 * beta);
  });
  return t.record(std::move(out), {a}, [a, beta](Tape& t, const Tensor& g) {
    const Tensor d = a.value().unaryExpr([beta](double x) {
      return std::abs(x) <= beta ? x : (x > 0 ? beta : -beta);
    });
    t.accumulate(a, g.cwiseProduct(d));
  });
}

Var cross_entropy(Var logits, std::span<const int> rows, std::span<const int> targets) {
  if (rows.empty()) throw DegenerateLossError("cross_entropy: empty loss-position set");
  if (rows.size() != targets.size()) throw DimensionError("cross_entropy: rows/targets length mismatch");
  const Tensor& lv = logits.value();
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= lv.rows() || targets[k] < 0 || targets[k] >= lv.cols()) {
      throw DimensionError("cross_entropy: position or target out of range");
    }
  }
  Tape& t = *logits.tape();
  const double inv_count = 1.0 / static_cast<double>(rows.size());
  Tensor probs(static_cast<Eigen::Index>(rows.size()), lv.cols());
  double loss = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto row = lv.row(rows[k]);
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    loss += lse - row(targets[k]);
    probs.row(static_cast<Eigen::Index>(k)) = (row.array() - lse).exp().matrix();
  }
  Tensor out(1, 1);
  out(0, 0) = loss * inv_count;
  std::vector<int> r(rows.begin(), rows.end());
  std::vector<int> tg(targets.begin(), targets.end());
  return t.record(std::move(out), {logits},
                  [logits, r = std::move(r), tg = std::move(tg), probs = std::move(probs),
                   inv_count](Tape& t, const Tensor& g) {
                    Tensor d = Tensor::Zero(logits.rows(), logits.cols());
                    for (std::size_t k = 0; k < r.size(); ++k) {
                      d.row(r[k]) += probs.row(static_cast<Eigen::Index>(k)) * (g(0, 0) * inv_count);
                      d(r[k], tg[k]) -= g(0, 0) * inv_count;
                    }
                    t.accumulate(logits, d);
                  });
}

Var straight_through(Var soft, Tensor hard) {
  require_same_shape(soft.value(), hard, "straight_through");
  Tape& t = *soft.tape();
  return t.record(std::move(hard), {soft}, [soft](Tape& t, const Tensor& g) { t.accumulate(soft, g); });
}

}  // namespace lvprune::ad

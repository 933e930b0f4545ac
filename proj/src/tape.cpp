#include "p2g/tape.hpp"

#include <cmath>

namespace p2g {

const Mat& Var::value() const { return tape_->value_of(id_); }
const Mat& Var::grad() const { return tape_->grad_of(id_); }

Var Tape::push(Mat value, std::function<void(Tape&)> back) {
  Node n;
  n.value = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Mat value) { return push(std::move(value)); }

Var Tape::leaf(const Mat& value, Mat* grad_sink) {
  Node n;
  n.value = value;
  n.sink = grad_sink;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::add(Var a, Var b) {
  int ia = a.id(), ib = b.id();
  Var out = push(v(ia) + v(ib));
  int self = out.id();
  nodes_[self].back = [ia, ib, self](Tape& t) {
    t.g(ia) += t.g(self);
    t.g(ib) += t.g(self);
  };
  return out;
}

Var Tape::sub(Var a, Var b) {
  int ia = a.id(), ib = b.id();
  Var out = push(v(ia) - v(ib));
  int self = out.id();
  nodes_[self].back = [ia, ib, self](Tape& t) {
    t.g(ia) += t.g(self);
    t.g(ib) -= t.g(self);
  };
  return out;
}

Var Tape::scale(Var a, double s) {
  int ia = a.id();
  Var out = push(v(ia) * s);
  int self = out.id();
  nodes_[self].back = [ia, s, self](Tape& t) { t.g(ia) += s * t.g(self); };
  return out;
}

Var Tape::cmul(Var a, Var b) {
  int ia = a.id(), ib = b.id();
  Var out = push(v(ia).cwiseProduct(v(ib)));
  int self = out.id();
  nodes_[self].back = [ia, ib, self](Tape& t) {
    t.g(ia).array() += t.g(self).array() * t.v(ib).array();
    t.g(ib).array() += t.g(self).array() * t.v(ia).array();
  };
  return out;
}

Var Tape::matmul(Var a, Var b) {
  int ia = a.id(), ib = b.id();
  Mat out;
  out.noalias() = v(ia) * v(ib);
  Var o = push(std::move(out));
  int self = o.id();
  nodes_[self].back = [ia, ib, self](Tape& t) {
    t.g(ia).noalias() += t.g(self) * t.v(ib).transpose();
    t.g(ib).noalias() += t.v(ia).transpose() * t.g(self);
  };
  return o;
}

Var Tape::matmul_nt(Var a, Var b) {
  int ia = a.id(), ib = b.id();
  Mat out;
  out.noalias() = v(ia) * v(ib).transpose();
  Var o = push(std::move(out));
  int self = o.id();
  nodes_[self].back = [ia, ib, self](Tape& t) {
    t.g(ia).noalias() += t.g(self) * t.v(ib);
    t.g(ib).noalias() += t.g(self).transpose() * t.v(ia);
  };
  return o;
}

Var Tape::add_row_broadcast(Var x, Var bias) {
  int ix = x.id(), ib = bias.id();
  Var o = push(v(ix).rowwise() + v(ib).row(0));
  int self = o.id();
  nodes_[self].back = [ix, ib, self](Tape& t) {
    t.g(ix) += t.g(self);
    t.g(ib).row(0) += t.g(self).colwise().sum();
  };
  return o;
}

Var Tape::gather_rows(Var table, std::vector<int> idx) {
  int it = table.id();
  Mat out(static_cast<Eigen::Index>(idx.size()), v(it).cols());
  for (size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = v(it).row(idx[r]);
  Var o = push(std::move(out));
  int self = o.id();
  nodes_[self].back = [it, idx = std::move(idx), self](Tape& t) {
    for (size_t r = 0; r < idx.size(); ++r)
      t.g(it).row(idx[r]) += t.g(self).row(static_cast<Eigen::Index>(r));
  };
  return o;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  Eigen::Index rows = 0, cols = v(parts[0].id()).cols();
  std::vector<int> ids;
  ids.reserve(parts.size());
  for (const Var& p : parts) {
    rows += v(p.id()).rows();
    ids.push_back(p.id());
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (int id : ids) {
    out.middleRows(at, v(id).rows()) = v(id);
    at += v(id).rows();
  }
  Var o = push(std::move(out));
  int self = o.id();
  nodes_[self].back = [ids = std::move(ids), self](Tape& t) {
    Eigen::Index at = 0;
    for (int id : ids) {
      Eigen::Index r = t.v(id).rows();
      t.g(id) += t.g(self).middleRows(at, r);
      at += r;
    }
  };
  return o;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  Eigen::Index cols = 0, rows = v(parts[0].id()).rows();
  std::vector<int> ids;
  ids.reserve(parts.size());
  for (const Var& p : parts) {
    cols += v(p.id()).cols();
    ids.push_back(p.id());
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (int id : ids) {
    out.middleCols(at, v(id).cols()) = v(id);
    at += v(id).cols();
  }
  Var o = push(std::move(out));
  int self = o.id();
  nodes_[self].back = [ids = std::move(ids), self](Tape& t) {
    Eigen::Index at = 0;
    for (int id : ids) {
      Eigen::Index c = t.v(id).cols();
      t.g(id) += t.g(self).middleCols(at, c);
      at += c;
    }
  };
  return o;
}

Var Tape::slice_cols(Var a, int start, int n) {
  int ia = a.id();
  Var o = push(v(ia).middleCols(start, n));
  int self = o.id();
  nodes_[self].back = [ia, start, n, self](Tape& t) {
    t.g(ia).middleCols(start, n) += t.g(self);
  };
  return o;
}

Var Tape::softmax_rows(Var a, const RowVec* key_bias) {
  int ia = a.id();
  Mat scores = v(ia);
  if (key_bias != nullptr) scores.rowwise() += *key_bias;
  Mat out(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    double mx = scores.row(r).maxCoeff();
    Eigen::ArrayXd e = (scores.row(r).array() - mx).exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  Var o = push(std::move(out));
  int self = o.id();
  nodes_[self].back = [ia, self](Tape& t) {
    const Mat& y = t.v(self);
    const Mat& dy = t.g(self);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      double dot = dy.row(r).dot(y.row(r));
      t.g(ia).row(r).array() += (dy.row(r).array() - dot) * y.row(r).array();
    }
  };
  return o;
}

Var Tape::logsumexp_rows(Var a) {
  int ia = a.id();
  const Mat& x = v(ia);
  Mat out(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mx = x.row(r).maxCoeff();
    out(r, 0) = mx + std::log((x.row(r).array() - mx).exp().sum());
  }
  Var o = push(std::move(out));
  int self = o.id();
  nodes_[self].back = [ia, self](Tape& t) {
    const Mat& x = t.v(ia);
    const Mat& lse = t.v(self);
    const Mat& dy = t.g(self);
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      t.g(ia).row(r).array() += dy(r, 0) * (x.row(r).array() - lse(r, 0)).exp();
  };
  return o;
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
  int ix = x.id(), ig = gamma.id(), ib = beta.id();
  const Mat& in = v(ix);
  Eigen::Index rows = in.rows(), cols = in.cols();
  Mat xhat(rows, cols);
  Vec inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    double mean = in.row(r).mean();
    RowVec centered = (in.row(r).array() - mean).matrix();
    double var = centered.array().square().mean();
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    xhat.row(r) = centered * is;
  }
  Mat out = (xhat.array().rowwise() * v(ig).row(0).array()).rowwise() + v(ib).row(0).array();
  Var o = push(std::move(out));
  int self = o.id();
  nodes_[self].back = [ix, ig, ib, self, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t) {
    const Mat& dy = t.g(self);
    const RowVec gamma_row = t.v(ig).row(0);
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
      RowVec dxhat = (dy.row(r).array() * gamma_row.array()).matrix();
      double m1 = dxhat.mean();
      double m2 = (dxhat.array() * xhat.row(r).array()).mean();
      t.g(ix).row(r).array() += inv_std[r] * (dxhat.array() - m1 - xhat.row(r).array() * m2);
    }
    t.g(ig).row(0).array() += (dy.array() * xhat.array()).colwise().sum();
    t.g(ib).row(0) += dy.colwise().sum();
  };
  return o;
}

Var Tape::relu(Var a) {
  int ia = a.id();
  Var o = push(v(ia).cwiseMax(0.0));
  int self = o.id();
  nodes_[self].back = [ia, self](Tape& t) {
    t.g(ia).array() += (t.v(ia).array() > 0.0).cast<double>() * t.g(self).array();
  };
  return o;
}

Var Tape::gelu(Var a) {
  int ia = a.id();
  const double inv_sqrt2 = 0.70710678118654752440;
  Mat out = v(ia).unaryExpr([&](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  Var o = push(std::move(out));
  int self = o.id();
  nodes_[self].back = [ia, self](Tape& t) {
    const double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt_2pi = 0.39894228040143267794;
    t.g(ia).array() += t.g(self).array() * t.v(ia).unaryExpr([&](double x) {
                                               double phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                                               double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
                                               return phi + x * pdf;
                                             }).array();
  };
  return o;
}

Var Tape::exp(Var a) {
  int ia = a.id();
  Var o = push(v(ia).array().exp().matrix());
  int self = o.id();
  nodes_[self].back = [ia, self](Tape& t) {
    t.g(ia).array() += t.g(self).array() * t.v(self).array();
  };
  return o;
}

Var Tape::log_floor(Var a, double floor) {
  int ia = a.id();
  Var o = push(v(ia).cwiseMax(floor).array().log().matrix());
  int self = o.id();
  nodes_[self].back = [ia, floor, self](Tape& t) {
    t.g(ia).array() += (t.v(ia).array() > floor).cast<double>() * t.g(self).array() / t.v(ia).array().max(floor);
  };
  return o;
}

Var Tape::sqrt_floor(Var a, double floor) {
  int ia = a.id();
  Var o = push(v(ia).cwiseMax(floor).cwiseSqrt());
  int self = o.id();
  nodes_[self].back = [ia, floor, self](Tape& t) {
    t.g(ia).array() += (t.v(ia).array() > floor).cast<double>() * t.g(self).array() * 0.5 / t.v(self).array();
  };
  return o;
}

Var Tape::sum(Var a) {
  int ia = a.id();
  Mat out(1, 1);
  out(0, 0) = v(ia).sum();
  Var o = push(std::move(out));
  int self = o.id();
  nodes_[self].back = [ia, self](Tape& t) { t.g(ia).array() += t.g(self)(0, 0); };
  return o;
}

Var Tape::average(const std::vector<Var>& parts) {
  std::vector<int> ids;
  ids.reserve(parts.size());
  Mat out = Mat::Zero(v(parts[0].id()).rows(), v(parts[0].id()).cols());
  for (const Var& p : parts) {
    out += v(p.id());
    ids.push_back(p.id());
  }
  out /= static_cast<double>(parts.size());
  Var o = push(std::move(out));
  int self = o.id();
  nodes_[self].back = [ids = std::move(ids), self](Tape& t) {
    double k = 1.0 / static_cast<double>(ids.size());
    for (int id : ids) t.g(id) += k * t.g(self);
  };
  return o;
}

void Tape::backward(Var loss) {
  if (loss.value().rows() != 1 || loss.value().cols() != 1)
    throw Error(ErrorKind::Internal, "backward() requires a scalar loss node");
  for (Node& n : nodes_) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  nodes_[loss.id()].grad(0, 0) = 1.0;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.back) n.back(*this);
    if (n.sink != nullptr) {
      if (n.sink->size() == 0) *n.sink = Mat::Zero(n.value.rows(), n.value.cols());
      *n.sink += n.grad;
    }
  }
}

void Tape::clear() { nodes_.clear(); }

}  // namespace p2g

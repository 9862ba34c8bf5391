#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "emogen/error.hpp"
#include "emogen/tensor.hpp"

namespace emogen {

class Graph;

// Lightweight handle into a Graph's tape.
struct Expr {
  Graph* g = nullptr;
  int id = -1;
  bool valid() const { return g != nullptr && id >= 0; }
};

// Reverse-mode tape over Tensor values. Nodes are appended in evaluation
// order; backward() walks them in reverse, so gradient accumulation order
// is fixed by construction. Values are immutable once written. Every op
// checks its output for NaN/Inf and aborts with NumericError instead of
// letting bad values propagate into training.
class Graph {
 public:
  Graph() = default;
  explicit Graph(ParamStore& store) : store_(&store) {}

  ParamStore* store() const { return store_; }

  // ---- leaves ----

  Expr input(Tensor t) {
    check_finite(t, "input");
    return push(Node{Op::Input, -1, -1, 0, 0, -1, 0, 0, std::move(t)});
  }

  Expr input_scalar(double x) { return input(Tensor::scalar(x)); }

  Expr param(const std::string& name) {
    if (!store_) throw ContractError("graph has no parameter store bound");
    int idx = store_->index_of(name);
    auto it = param_nodes_.find(idx);
    if (it != param_nodes_.end()) return Expr{this, it->second};
    Node n{Op::Param, -1, -1, 0, 0, idx, 0, 0, store_->entry(idx).value};
    Expr e = push(std::move(n));
    param_nodes_[idx] = e.id;
    return e;
  }

  // ---- ops ----

  // matrix [m,n] x vector [n] -> [m], or matrix [m,k] x matrix [k,n] -> [m,n]
  Expr matmul(Expr a, Expr b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (A.shape.size() != 2) throw DimError("matmul: left operand must be 2-D");
    if (B.shape.size() == 1) {
      if (A.cols() != B.rows()) throw DimError("matmul: inner dimensions disagree");
      Tensor out({A.rows()});
      for (int i = 0; i < A.rows(); ++i) {
        double s = 0;
        const double* row = &A.v[static_cast<size_t>(i) * A.cols()];
        for (int j = 0; j < A.cols(); ++j) s += row[j] * B.v[j];
        out.v[i] = s;
      }
      return push(Node{Op::MatVec, a.id, b.id, 0, 0, 0, 0, 0, std::move(out)});
    }
    if (B.shape.size() != 2 || A.cols() != B.rows()) throw DimError("matmul: inner dimensions disagree");
    Tensor out({A.rows(), B.cols()});
    for (int i = 0; i < A.rows(); ++i)
      for (int k = 0; k < A.cols(); ++k) {
        double aik = A.at(i, k);
        for (int j = 0; j < B.cols(); ++j) out.at(i, j) += aik * B.at(k, j);
      }
    return push(Node{Op::MatMat, a.id, b.id, 0, 0, 0, 0, 0, std::move(out)});
  }

  Expr add(Expr a, Expr b) { return elemwise2(Op::Add, a, b); }
  Expr sub(Expr a, Expr b) { return elemwise2(Op::Sub, a, b); }
  Expr mul(Expr a, Expr b) { return elemwise2(Op::Mul, a, b); }

  // ca * x + cb, elementwise with scalar constants
  Expr affine(Expr x, double ca, double cb) {
    Tensor out = val(x);
    for (auto& v : out.v) v = ca * v + cb;
    return push(Node{Op::AffineConst, x.id, -1, 0, 0, 0, ca, cb, std::move(out)});
  }

  Expr neg(Expr x) { return affine(x, -1.0, 0.0); }
  Expr scale(Expr x, double c) { return affine(x, c, 0.0); }

  Expr tanh(Expr x) {
    Tensor out = val(x);
    for (auto& v : out.v) v = std::tanh(v);
    return push(Node{Op::Tanh, x.id, -1, 0, 0, 0, 0, 0, std::move(out)});
  }

  Expr sigmoid(Expr x) {
    Tensor out = val(x);
    for (auto& v : out.v) v = 1.0 / (1.0 + std::exp(-v));
    return push(Node{Op::Sigmoid, x.id, -1, 0, 0, 0, 0, 0, std::move(out)});
  }

  Expr concat(const std::vector<Expr>& parts) {
    if (parts.empty()) throw DimError("concat: no operands");
    int total = 0;
    for (Expr p : parts) {
      if (val(p).shape.size() != 1) throw DimError("concat: 1-D operands only");
      total += val(p).rows();
    }
    Tensor out({total});
    int off = 0;
    for (Expr p : parts) {
      const Tensor& t = val(p);
      std::copy(t.v.begin(), t.v.end(), out.v.begin() + off);
      off += t.rows();
    }
    Node n{Op::Concat, -1, -1, 0, 0, 0, 0, 0, std::move(out)};
    set_args(n, parts);
    return push(std::move(n));
  }

  // Elementwise sum of same-shaped operands.
  Expr add_n(const std::vector<Expr>& parts) {
    if (parts.empty()) throw DimError("add_n: no operands");
    Tensor out = val(parts[0]);
    for (size_t i = 1; i < parts.size(); ++i) {
      const Tensor& t = val(parts[i]);
      if (!t.same_shape(out)) throw DimError("add_n: shape mismatch");
      for (size_t j = 0; j < out.v.size(); ++j) out.v[j] += t.v[j];
    }
    Node n{Op::AddN, -1, -1, 0, 0, 0, 0, 0, std::move(out)};
    set_args(n, parts);
    return push(std::move(n));
  }

  // Elementwise max of same-shaped operands; backward routes to the argmax.
  Expr max_n(const std::vector<Expr>& parts) {
    if (parts.empty()) throw DimError("max_n: no operands");
    Tensor out = val(parts[0]);
    for (size_t i = 1; i < parts.size(); ++i) {
      const Tensor& t = val(parts[i]);
      if (!t.same_shape(out)) throw DimError("max_n: shape mismatch");
      for (size_t j = 0; j < out.v.size(); ++j) out.v[j] = std::max(out.v[j], t.v[j]);
    }
    Node n{Op::MaxN, -1, -1, 0, 0, 0, 0, 0, std::move(out)};
    set_args(n, parts);
    return push(std::move(n));
  }

  Expr sum(Expr x) {
    double s = 0;
    for (double v : val(x).v) s += v;
    return push(Node{Op::Sum, x.id, -1, 0, 0, 0, 0, 0, Tensor::scalar(s)});
  }

  Expr log_softmax(Expr x) {
    const Tensor& t = val(x);
    if (t.shape.size() != 1) throw DimError("log_softmax: 1-D input only");
    Tensor out = t;
    double m = out.v[0];
    for (double v : out.v) m = std::max(m, v);
    double lse = 0;
    for (double v : out.v) lse += std::exp(v - m);
    lse = m + std::log(lse);
    for (auto& v : out.v) v -= lse;
    return push(Node{Op::LogSoftmax, x.id, -1, 0, 0, 0, 0, 0, std::move(out)});
  }

  // Log-softmax normalized over a support subset. Entries outside the
  // support get log-probability kMaskedLogProb, whose exp is exactly 0.
  Expr masked_log_softmax(Expr x, const std::vector<char>& support) {
    const Tensor& t = val(x);
    if (t.shape.size() != 1) throw DimError("masked_log_softmax: 1-D input only");
    if (support.size() != t.v.size()) throw DimError("masked_log_softmax: support size mismatch");
    bool any = false;
    double m = -1e300;
    for (size_t i = 0; i < t.v.size(); ++i)
      if (support[i]) {
        any = true;
        m = std::max(m, t.v[i]);
      }
    if (!any) throw ContractError("masked_log_softmax: empty support");
    double lse = 0;
    for (size_t i = 0; i < t.v.size(); ++i)
      if (support[i]) lse += std::exp(t.v[i] - m);
    lse = m + std::log(lse);
    Tensor out = t;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = support[i] ? t.v[i] - lse : kMaskedLogProb;
    Node n{Op::MaskedLogSoftmax, x.id, -1, 0, 0, static_cast<int>(masks_.size()), 0, 0, std::move(out)};
    masks_.push_back(support);
    return push(std::move(n));
  }

  Expr pick(Expr x, int i) {
    const Tensor& t = val(x);
    if (i < 0 || static_cast<size_t>(i) >= t.v.size()) throw DimError("pick: index out of range");
    return push(Node{Op::Pick, x.id, -1, 0, 0, i, 0, 0, Tensor::scalar(t.v[i])});
  }

  // Row i of a 2-D expression, as a vector.
  Expr row(Expr x, int i) {
    const Tensor& t = val(x);
    if (t.shape.size() != 2) throw DimError("row: 2-D input only");
    if (i < 0 || i >= t.rows()) throw DimError("row: index out of range");
    Tensor out({t.cols()});
    std::copy(t.v.begin() + static_cast<size_t>(i) * t.cols(),
              t.v.begin() + static_cast<size_t>(i + 1) * t.cols(), out.v.begin());
    return push(Node{Op::Row, x.id, -1, 0, 0, i, 0, 0, std::move(out)});
  }

  // ---- evaluation ----

  const Tensor& value(Expr e) const { return val(e); }

  double value_scalar(Expr e) const {
    const Tensor& t = val(e);
    if (t.size() != 1) throw DimError("value_scalar: expression is not a scalar");
    return t.v[0];
  }

  // Reverse pass from a scalar node, seeding its gradient with `seed`.
  // Parameter gradients are accumulated (+=) into the bound store in
  // entry insertion order.
  void backward(Expr loss, double seed = 1.0) {
    if (val(loss).size() != 1) throw ContractError("backward: loss must be a scalar");
    grads_.assign(nodes_.size(), Tensor());
    grad_at(loss.id).v[0] = seed;
    for (int id = loss.id; id >= 0; --id) {
      if (grads_[id].v.empty()) continue;  // node not on any path to the loss
      step_backward(id);
    }
    if (store_) {
      for (auto& kv : param_nodes_) {
        if (grads_[kv.second].v.empty()) continue;
        Tensor& g = store_->entry(kv.first).grad;
        const Tensor& ng = grads_[kv.second];
        for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += ng.v[i];
      }
    }
  }

  size_t size() const { return nodes_.size(); }

  static constexpr double kMaskedLogProb = -1e30;

 private:
  enum class Op : uint8_t {
    Input,
    Param,
    Row,
    MatVec,
    MatMat,
    Add,
    Sub,
    Mul,
    AffineConst,
    Tanh,
    Sigmoid,
    Concat,
    AddN,
    MaxN,
    Sum,
    LogSoftmax,
    MaskedLogSoftmax,
    Pick,
  };

  struct Node {
    Op op;
    int a, b;                 // binary/unary operand ids
    int args_begin, args_end; // n-ary operand range in args_
    int aux;                  // pick/row index, param entry, mask index
    double ca, cb;            // affine constants
    Tensor val;
  };

  const Tensor& val(Expr e) const {
    if (e.g != this) throw ContractError("expression belongs to another graph");
    return nodes_[static_cast<size_t>(e.id)].val;
  }

  Expr elemwise2(Op op, Expr a, Expr b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (!A.same_shape(B)) throw DimError("elementwise op: shape mismatch");
    Tensor out = A;
    switch (op) {
      case Op::Add:
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += B.v[i];
        break;
      case Op::Sub:
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= B.v[i];
        break;
      case Op::Mul:
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= B.v[i];
        break;
      default:
        throw ContractError("elemwise2: bad op");
    }
    return push(Node{op, a.id, b.id, 0, 0, 0, 0, 0, std::move(out)});
  }

  void set_args(Node& n, const std::vector<Expr>& parts) {
    n.args_begin = static_cast<int>(args_.size());
    for (Expr p : parts) {
      if (p.g != this) throw ContractError("expression belongs to another graph");
      args_.push_back(p.id);
    }
    n.args_end = static_cast<int>(args_.size());
  }

  Expr push(Node n) {
    check_finite(n.val, op_name(n.op));
    nodes_.push_back(std::move(n));
    return Expr{this, static_cast<int>(nodes_.size() - 1)};
  }

  static void check_finite(const Tensor& t, const char* where) {
    if (!t.finite()) throw NumericError(std::string("non-finite value produced by ") + where);
  }

  static const char* op_name(Op op) {
    switch (op) {
      case Op::Input: return "input";
      case Op::Param: return "param";
      case Op::Row: return "row";
      case Op::MatVec:
      case Op::MatMat: return "matmul";
      case Op::Add: return "add";
      case Op::Sub: return "sub";
      case Op::Mul: return "mul";
      case Op::AffineConst: return "affine";
      case Op::Tanh: return "tanh";
      case Op::Sigmoid: return "sigmoid";
      case Op::Concat: return "concat";
      case Op::AddN: return "add_n";
      case Op::MaxN: return "max_n";
      case Op::Sum: return "sum";
      case Op::LogSoftmax: return "log_softmax";
      case Op::MaskedLogSoftmax: return "masked_log_softmax";
      case Op::Pick: return "pick";
    }
    return "?";
  }

  Tensor& grad_at(int id) {
    Tensor& g = grads_[static_cast<size_t>(id)];
    if (g.v.empty()) g = Tensor(nodes_[static_cast<size_t>(id)].val.shape);
    return g;
  }

  void step_backward(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    const Tensor& g = grads_[static_cast<size_t>(id)];
    switch (n.op) {
      case Op::Input:
      case Op::Param:
        break;
      case Op::Row: {
        Tensor& ga = grad_at(n.a);
        int c = nodes_[n.a].val.cols();
        for (int j = 0; j < c; ++j) ga.v[static_cast<size_t>(n.aux) * c + j] += g.v[j];
        break;
      }
      case Op::MatVec: {
        const Tensor& A = nodes_[n.a].val;
        const Tensor& x = nodes_[n.b].val;
        Tensor& gA = grad_at(n.a);
        Tensor& gx = grad_at(n.b);
        for (int i = 0; i < A.rows(); ++i) {
          double gi = g.v[i];
          if (gi == 0) continue;
          const double* arow = &A.v[static_cast<size_t>(i) * A.cols()];
          double* garow = &gA.v[static_cast<size_t>(i) * A.cols()];
          for (int j = 0; j < A.cols(); ++j) {
            garow[j] += gi * x.v[j];
            gx.v[j] += gi * arow[j];
          }
        }
        break;
      }
      case Op::MatMat: {
        const Tensor& A = nodes_[n.a].val;
        const Tensor& B = nodes_[n.b].val;
        Tensor& gA = grad_at(n.a);
        Tensor& gB = grad_at(n.b);
        for (int i = 0; i < A.rows(); ++i)
          for (int j = 0; j < B.cols(); ++j) {
            double gij = g.v[static_cast<size_t>(i) * B.cols() + j];
            if (gij == 0) continue;
            for (int k = 0; k < A.cols(); ++k) {
              gA.at(i, k) += gij * B.at(k, j);
              gB.at(k, j) += gij * A.at(i, k);
            }
          }
        break;
      }
      case Op::Add: {
        Tensor& ga = grad_at(n.a);
        Tensor& gb = grad_at(n.b);
        for (size_t i = 0; i < g.v.size(); ++i) {
          ga.v[i] += g.v[i];
          gb.v[i] += g.v[i];
        }
        break;
      }
      case Op::Sub: {
        Tensor& ga = grad_at(n.a);
        Tensor& gb = grad_at(n.b);
        for (size_t i = 0; i < g.v.size(); ++i) {
          ga.v[i] += g.v[i];
          gb.v[i] -= g.v[i];
        }
        break;
      }
      case Op::Mul: {
        const Tensor& A = nodes_[n.a].val;
        const Tensor& B = nodes_[n.b].val;
        Tensor& ga = grad_at(n.a);
        Tensor& gb = grad_at(n.b);
        for (size_t i = 0; i < g.v.size(); ++i) {
          ga.v[i] += g.v[i] * B.v[i];
          gb.v[i] += g.v[i] * A.v[i];
        }
        break;
      }
      case Op::AffineConst: {
        Tensor& ga = grad_at(n.a);
        for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] * n.ca;
        break;
      }
      case Op::Tanh: {
        Tensor& ga = grad_at(n.a);
        for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] * (1.0 - n.val.v[i] * n.val.v[i]);
        break;
      }
      case Op::Sigmoid: {
        Tensor& ga = grad_at(n.a);
        for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] * n.val.v[i] * (1.0 - n.val.v[i]);
        break;
      }
      case Op::Concat: {
        size_t off = 0;
        for (int ai = n.args_begin; ai < n.args_end; ++ai) {
          int cid = args_[static_cast<size_t>(ai)];
          Tensor& gc = grad_at(cid);
          for (size_t i = 0; i < gc.v.size(); ++i) gc.v[i] += g.v[off + i];
          off += gc.v.size();
        }
        break;
      }
      case Op::AddN: {
        for (int ai = n.args_begin; ai < n.args_end; ++ai) {
          Tensor& gc = grad_at(args_[static_cast<size_t>(ai)]);
          for (size_t i = 0; i < g.v.size(); ++i) gc.v[i] += g.v[i];
        }
        break;
      }
      case Op::MaxN: {
        // route each element's gradient to the first operand attaining the max
        for (size_t i = 0; i < g.v.size(); ++i) {
          if (g.v[i] == 0) continue;
          for (int ai = n.args_begin; ai < n.args_end; ++ai) {
            int cid = args_[static_cast<size_t>(ai)];
            if (nodes_[cid].val.v[i] == n.val.v[i]) {
              grad_at(cid).v[i] += g.v[i];
              break;
            }
          }
        }
        break;
      }
      case Op::Sum: {
        Tensor& ga = grad_at(n.a);
        for (auto& x : ga.v) x += g.v[0];
        break;
      }
      case Op::LogSoftmax: {
        Tensor& ga = grad_at(n.a);
        double gsum = 0;
        for (double x : g.v) gsum += x;
        for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] - std::exp(n.val.v[i]) * gsum;
        break;
      }
      case Op::MaskedLogSoftmax: {
        const std::vector<char>& support = masks_[static_cast<size_t>(n.aux)];
        Tensor& ga = grad_at(n.a);
        double gsum = 0;
        for (size_t i = 0; i < g.v.size(); ++i)
          if (support[i]) gsum += g.v[i];
        for (size_t i = 0; i < g.v.size(); ++i)
          if (support[i]) ga.v[i] += g.v[i] - std::exp(n.val.v[i]) * gsum;
        break;
      }
      case Op::Pick: {
        grad_at(n.a).v[static_cast<size_t>(n.aux)] += g.v[0];
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<int> args_;
  std::vector<std::vector<char>> masks_;
  std::vector<Tensor> grads_;
  std::map<int, int> param_nodes_;
  ParamStore* store_ = nullptr;
};

}  // namespace emogen

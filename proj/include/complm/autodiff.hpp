// autodiff.hpp
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Copyright 2026 The complm Authors
//
// Tape-based reverse-mode autodiff over dense float64 matrices. Values are
// (rows x cols) with the batch along columns; vectors are single columns,
// scalars 1x1. One tape records one training chunk and is cleared after
// the optimizer step.

#pragma once

#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "complm/common.hpp"
#include "complm/params.hpp"

namespace complm::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

class Tape {
 public:
  Var Constant(Mat v) { return Push(std::move(v), nullptr, {}); }

  // Leaf bound to an external parameter; Backward() accumulates into
  // p->grad. Repeated calls return the same node.
  Var Param(Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var{this, it->second};
    Var v = Push(p.value, &p, {});
    param_nodes_[&p] = v.id;
    return v;
  }

  const Mat& value(Var v) const { return nodes_[Check(v)].val; }

  void Clear() {
    nodes_.clear();
    param_nodes_.clear();
  }
  size_t size() const { return nodes_.size(); }

  // Reverse sweep from a finite scalar loss. Touched parameters get their
  // gradient accumulated; unreached ones are left as they are.
  void Backward(Var loss) {
    int id = Check(loss);
    Require(nodes_[id].val.size() == 1, "backward: loss must be scalar");
    Require(std::isfinite(nodes_[id].val(0, 0)),
            "backward: loss is not finite");
    GradRef(id)(0, 0) += 1.0;
    for (int i = id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (n.param != nullptr) n.param->grad += n.grad;
      if (n.back) n.back(*this, n.grad);
    }
  }

  // --- elementwise / structural ops -------------------------------------

  Var Add(Var a, Var b) {
    CheckShape(a, b);
    Mat out = value(a) + value(b);
    return Push(std::move(out), nullptr,
                [ia = a.id, ib = b.id](Tape& t, const Mat& g) {
                  t.GradRef(ia) += g;
                  t.GradRef(ib) += g;
                });
  }

  Var Sub(Var a, Var b) {
    CheckShape(a, b);
    Mat out = value(a) - value(b);
    return Push(std::move(out), nullptr,
                [ia = a.id, ib = b.id](Tape& t, const Mat& g) {
                  t.GradRef(ia) += g;
                  t.GradRef(ib) -= g;
                });
  }

  Var Mul(Var a, Var b) {
    CheckShape(a, b);
    Mat out = value(a).cwiseProduct(value(b));
    return Push(std::move(out), nullptr,
                [ia = a.id, ib = b.id](Tape& t, const Mat& g) {
                  t.GradRef(ia) += g.cwiseProduct(t.nodes_[ib].val);
                  t.GradRef(ib) += g.cwiseProduct(t.nodes_[ia].val);
                });
  }

  Var Neg(Var a) {
    Mat out = -value(a);
    return Push(std::move(out), nullptr, [ia = a.id](Tape& t, const Mat& g) {
      t.GradRef(ia) -= g;
    });
  }

  Var AddConst(Var a, const Mat& c) {
    Require(value(a).rows() == c.rows() && value(a).cols() == c.cols(),
            "AddConst shape mismatch");
    Mat out = value(a) + c;
    return Push(std::move(out), nullptr, [ia = a.id](Tape& t, const Mat& g) {
      t.GradRef(ia) += g;
    });
  }

  Var MulScalar(Var a, double s) {
    Mat out = value(a) * s;
    return Push(std::move(out), nullptr, [ia = a.id, s](Tape& t, const Mat& g) {
      t.GradRef(ia) += g * s;
    });
  }

  Var MatMul(Var a, Var b) {
    Require(value(a).cols() == value(b).rows(), "MatMul shape mismatch");
    Mat out = value(a) * value(b);
    return Push(std::move(out), nullptr,
                [ia = a.id, ib = b.id](Tape& t, const Mat& g) {
                  t.GradRef(ia).noalias() += g * t.nodes_[ib].val.transpose();
                  t.GradRef(ib).noalias() += t.nodes_[ia].val.transpose() * g;
                });
  }

  // y = W x + b with b broadcast over columns.
  Var Affine(Var w, Var b, Var x) {
    return AddColBroadcast(MatMul(w, x), b);
  }

  Var AddColBroadcast(Var a, Var bias) {
    Require(value(bias).cols() == 1 && value(bias).rows() == value(a).rows(),
            "AddColBroadcast: bias must be (rows x 1)");
    Mat out = value(a).colwise() + Eigen::VectorXd(value(bias).col(0));
    return Push(std::move(out), nullptr,
                [ia = a.id, ib = bias.id](Tape& t, const Mat& g) {
                  t.GradRef(ia) += g;
                  t.GradRef(ib) += g.rowwise().sum();
                });
  }

  Var BroadcastCols(Var v, int cols) {
    Require(value(v).cols() == 1, "BroadcastCols: input must be a column");
    Mat out = value(v).replicate(1, cols);
    return Push(std::move(out), nullptr, [iv = v.id](Tape& t, const Mat& g) {
      t.GradRef(iv) += g.rowwise().sum();
    });
  }

  Var ConcatRows(const std::vector<Var>& parts) {
    Require(!parts.empty(), "ConcatRows: empty");
    Eigen::Index cols = value(parts[0]).cols();
    Eigen::Index rows = 0;
    for (Var p : parts) {
      Require(value(p).cols() == cols, "ConcatRows: column mismatch");
      rows += value(p).rows();
    }
    Mat out(rows, cols);
    std::vector<std::pair<int, int>> spans;  // (id, row offset)
    Eigen::Index r = 0;
    for (Var p : parts) {
      out.middleRows(r, value(p).rows()) = value(p);
      spans.emplace_back(p.id, int(r));
      r += value(p).rows();
    }
    return Push(std::move(out), nullptr,
                [spans](Tape& t, const Mat& g) {
                  for (auto [id, off] : spans) {
                    Eigen::Index n = t.nodes_[id].val.rows();
                    t.GradRef(id) += g.middleRows(off, n);
                  }
                });
  }

  Var SliceRows(Var a, int row0, int nrows) {
    Require(row0 >= 0 && row0 + nrows <= value(a).rows(),
            "SliceRows out of range");
    Mat out = value(a).middleRows(row0, nrows);
    return Push(std::move(out), nullptr,
                [ia = a.id, row0, nrows](Tape& t, const Mat& g) {
                  t.GradRef(ia).middleRows(row0, nrows) += g;
                });
  }

  // Per-column constant scaling (used for boundary and reset masks; the
  // mask itself carries no gradient).
  Var ScaleCols(Var a, const Eigen::RowVectorXd& scale) {
    Require(scale.cols() == value(a).cols(), "ScaleCols shape mismatch");
    Mat out = value(a).array().rowwise() * scale.array();
    return Push(std::move(out), nullptr,
                [ia = a.id, scale](Tape& t, const Mat& g) {
                  t.GradRef(ia) += (g.array().rowwise() * scale.array()).matrix();
                });
  }

  Var Sigmoid(Var a) {
    Mat out = value(a).unaryExpr([](double x) { return complm::Sigmoid(x); });
    int iy;
    Var y = Push(std::move(out), nullptr, {}, &iy);
    nodes_[iy].back = [ia = a.id, iy](Tape& t, const Mat& g) {
      const Mat& yv = t.nodes_[iy].val;
      t.GradRef(ia) +=
          g.cwiseProduct(yv.cwiseProduct(Mat::Ones(yv.rows(), yv.cols()) - yv));
    };
    return y;
  }

  Var Tanh(Var a) {
    Mat out = value(a).array().tanh();
    int iy;
    Var y = Push(std::move(out), nullptr, {}, &iy);
    nodes_[iy].back = [ia = a.id, iy](Tape& t, const Mat& g) {
      const Mat& yv = t.nodes_[iy].val;
      t.GradRef(ia) += g.cwiseProduct(
          (Mat::Ones(yv.rows(), yv.cols()) - yv.cwiseProduct(yv)));
    };
    return y;
  }

  // log(1 + e^x), elementwise, overflow-safe.
  Var Softplus(Var a) {
    Mat out = value(a).unaryExpr([](double x) { return complm::Softplus(x); });
    return Push(std::move(out), nullptr, [ia = a.id](Tape& t, const Mat& g) {
      t.GradRef(ia) += g.cwiseProduct(t.nodes_[ia].val.unaryExpr(
          [](double x) { return complm::Sigmoid(x); }));
    });
  }

  Var Log(Var a) {
    Mat out = value(a).array().log();
    return Push(std::move(out), nullptr, [ia = a.id](Tape& t, const Mat& g) {
      t.GradRef(ia) += g.cwiseQuotient(t.nodes_[ia].val);
    });
  }

  Var Exp(Var a) {
    Mat out = value(a).array().exp();
    int iy;
    Var y = Push(std::move(out), nullptr, {}, &iy);
    nodes_[iy].back = [ia = a.id, iy](Tape& t, const Mat& g) {
      t.GradRef(ia) += g.cwiseProduct(t.nodes_[iy].val);
    };
    return y;
  }

  // Column-wise log-softmax with max subtraction.
  Var LogSoftmaxCols(Var a) {
    const Mat& x = value(a);
    Mat out(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      double m = x.col(j).maxCoeff();
      double lse = m + std::log((x.col(j).array() - m).exp().sum());
      out.col(j) = x.col(j).array() - lse;
    }
    int iy;
    Var y = Push(std::move(out), nullptr, {}, &iy);
    nodes_[iy].back = [ia = a.id, iy](Tape& t, const Mat& g) {
      const Mat& yv = t.nodes_[iy].val;
      Mat soft = yv.array().exp();
      Eigen::RowVectorXd gsum = g.colwise().sum();
      t.GradRef(ia) += g - (soft.array().rowwise() * gsum.array()).matrix();
    };
    return y;
  }

  Var SoftmaxCols(Var a) { return Exp(LogSoftmaxCols(a)); }

  // out(:, j) = a(:, cols[j]); used for trainable embedding lookups.
  Var GatherCols(Var a, std::vector<int> cols) {
    const Mat& x = value(a);
    Mat out(x.rows(), Eigen::Index(cols.size()));
    for (size_t j = 0; j < cols.size(); ++j) {
      Require(cols[j] >= 0 && cols[j] < x.cols(), "GatherCols out of range");
      out.col(Eigen::Index(j)) = x.col(cols[j]);
    }
    return Push(std::move(out), nullptr,
                [ia = a.id, cols = std::move(cols)](Tape& t, const Mat& g) {
                  Mat& ga = t.GradRef(ia);
                  for (size_t j = 0; j < cols.size(); ++j)
                    ga.col(cols[j]) += g.col(Eigen::Index(j));
                });
  }

  // out(0, j) = a(rows[j], j)
  Var PickRowPerCol(Var a, std::vector<int> rows) {
    const Mat& x = value(a);
    Require(Eigen::Index(rows.size()) == x.cols(),
            "PickRowPerCol: need one row index per column");
    Mat out(1, x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      Require(rows[j] >= 0 && rows[j] < x.rows(), "PickRowPerCol out of range");
      out(0, j) = x(rows[j], j);
    }
    return Push(std::move(out), nullptr,
                [ia = a.id, rows = std::move(rows)](Tape& t, const Mat& g) {
                  Mat& ga = t.GradRef(ia);
                  for (Eigen::Index j = 0; j < g.cols(); ++j)
                    ga(rows[j], j) += g(0, j);
                });
  }

  // Column-wise log-sum-exp over rows: (K x C) -> (1 x C). Rows may be -inf.
  Var LseOverRows(Var a) {
    const Mat& x = value(a);
    Mat out(1, x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      double m = x.col(j).maxCoeff();
      if (m == kNegInf) {
        out(0, j) = kNegInf;
        continue;
      }
      out(0, j) = m + std::log((x.col(j).array() - m).exp().sum());
    }
    int iy;
    Var y = Push(std::move(out), nullptr, {}, &iy);
    nodes_[iy].back = [ia = a.id, iy](Tape& t, const Mat& g) {
      const Mat& x = t.nodes_[ia].val;
      const Mat& yv = t.nodes_[iy].val;
      Mat& ga = t.GradRef(ia);
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (yv(0, j) == kNegInf) continue;
        ga.col(j) += g(0, j) * (x.col(j).array() - yv(0, j)).exp().matrix();
      }
    };
    return y;
  }

  // out = a - row replicated down the rows (row: 1 x C).
  Var SubRowBroadcast(Var a, Var row) {
    Require(value(row).rows() == 1 && value(row).cols() == value(a).cols(),
            "SubRowBroadcast shape mismatch");
    Mat out = value(a).array().rowwise() -
              Eigen::RowVectorXd(value(row).row(0)).array();
    return Push(std::move(out), nullptr,
                [ia = a.id, ir = row.id](Tape& t, const Mat& g) {
                  t.GradRef(ia) += g;
                  t.GradRef(ir) -= g.colwise().sum();
                });
  }

  Var SumAll(Var a) {
    Mat out(1, 1);
    out(0, 0) = value(a).sum();
    return Push(std::move(out), nullptr, [ia = a.id](Tape& t, const Mat& g) {
      t.GradRef(ia).array() += g(0, 0);
    });
  }

  // Scalar inner product with a constant weight matrix.
  Var WeightedSumAll(Var a, const Mat& w) {
    Require(value(a).rows() == w.rows() && value(a).cols() == w.cols(),
            "WeightedSumAll shape mismatch");
    Mat out(1, 1);
    out(0, 0) = value(a).cwiseProduct(w).sum();
    return Push(std::move(out), nullptr, [ia = a.id, w](Tape& t, const Mat& g) {
      t.GradRef(ia) += g(0, 0) * w;
    });
  }

  // Inverted dropout; identity when rate == 0. Mask draws are column-major.
  Var Dropout(Var a, double rate, Rng& rng) {
    Require(rate >= 0.0 && rate < 1.0, "dropout rate must be in [0, 1)");
    if (rate == 0.0) return a;
    const double keep = 1.0 - rate;
    const Mat& x = value(a);
    Mat mask(x.rows(), x.cols());
    std::bernoulli_distribution coin(keep);
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        mask(i, j) = coin(rng) ? 1.0 / keep : 0.0;
    Mat out = x.cwiseProduct(mask);
    return Push(std::move(out), nullptr,
                [ia = a.id, mask = std::move(mask)](Tape& t, const Mat& g) {
                  t.GradRef(ia) += g.cwiseProduct(mask);
                });
  }

 private:
  struct Node {
    Mat val;
    Mat grad;  // empty until touched by backward
    Parameter* param = nullptr;
    std::function<void(Tape&, const Mat&)> back;
  };

  int Check(Var v) const {
    Require(v.tape == this && v.id >= 0 && v.id < int(nodes_.size()),
            "Var does not belong to this tape");
    return v.id;
  }

  void CheckShape(Var a, Var b) const {
    Require(value(a).rows() == value(b).rows() &&
                value(a).cols() == value(b).cols(),
            "elementwise op shape mismatch");
  }

  Mat& GradRef(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
    return n.grad;
  }

  Var Push(Mat val, Parameter* param,
           std::function<void(Tape&, const Mat&)> back, int* out_id = nullptr) {
    Node n;
    n.val = std::move(val);
    n.param = param;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    int id = int(nodes_.size()) - 1;
    if (out_id) *out_id = id;
    return Var{this, id};
  }

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, int> param_nodes_;
};

// ---------------------------------------------------------------------------
// LSTM cell on the tape. Weights follow the [i; f; g; o] row layout with
// W: (4H x (I+H)) applied to [x; h], bias (4H x 1).

struct LstmCellVars {
  Var h;
  Var c;
};

inline LstmCellVars LstmStep(Tape& t, Parameter& w, Parameter& b, Var x, Var h,
                             Var c) {
  const int hidden = int(b.value.rows()) / 4;
  Require(w.value.rows() == 4 * hidden &&
              w.value.cols() == t.value(x).rows() + hidden,
          "lstm_step: weight shape mismatch");
  Var z = t.ConcatRows({x, h});
  Var gates = t.Affine(t.Param(w), t.Param(b), z);
  Var gi = t.Sigmoid(t.SliceRows(gates, 0, hidden));
  Var gf = t.Sigmoid(t.SliceRows(gates, hidden, hidden));
  Var gg = t.Tanh(t.SliceRows(gates, 2 * hidden, hidden));
  Var go = t.Sigmoid(t.SliceRows(gates, 3 * hidden, hidden));
  Var c2 = t.Add(t.Mul(gf, c), t.Mul(gi, gg));
  Var h2 = t.Mul(go, t.Tanh(c2));
  return {h2, c2};
}

}  // namespace complm::ad

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace obfrev::ad {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Shared forward kernels, used by both the taped (training) and plain
// (inference) paths so the two cannot drift apart.
// ---------------------------------------------------------------------------

template <typename S>
void lstm_gates(const Mat<S>& x, const Mat<S>& h_prev, const Mat<S>& w_ih, const Mat<S>& w_hh,
                const Mat<S>& bias, Mat<S>& gates) {
  gates.noalias() = x * w_ih;
  gates.noalias() += h_prev * w_hh;
  gates.rowwise() += bias.row(0);
  const Eigen::Index hidden = gates.cols() / 4;
  auto i = gates.leftCols(hidden);
  auto f = gates.middleCols(hidden, hidden);
  auto g = gates.middleCols(2 * hidden, hidden);
  auto o = gates.rightCols(hidden);
  i = ((-i.array()).exp() + S(1)).inverse();
  f = ((-f.array()).exp() + S(1)).inverse();
  g = g.array().tanh();
  o = ((-o.array()).exp() + S(1)).inverse();
}

/// One LSTM step on activated gates; fills c_new (pre-mask) and tanh(c_new).
template <typename S>
void lstm_state(const Mat<S>& gates, const Mat<S>& c_prev, Mat<S>& c_raw, Mat<S>& tanh_c,
                Mat<S>& h_raw) {
  const Eigen::Index hidden = gates.cols() / 4;
  auto i = gates.leftCols(hidden).array();
  auto f = gates.middleCols(hidden, hidden).array();
  auto g = gates.middleCols(2 * hidden, hidden).array();
  auto o = gates.rightCols(hidden).array();
  c_raw = (f * c_prev.array() + i * g).matrix();
  tanh_c = c_raw.array().tanh().matrix();
  h_raw = (o * tanh_c.array()).matrix();
}

// ---------------------------------------------------------------------------
// Reverse-mode tape over dense matrices. Parameters are referenced by view
// and slot index; their gradients are harvested into a caller-owned vector,
// which keeps worker threads free to accumulate independently.
// ---------------------------------------------------------------------------

template <typename S>
class Tape {
 public:
  using M = Mat<S>;
  using VarId = int;

  enum class Op {
    kInput,
    kParam,
    kLinear,       // a:x  p1:W p2:b
    kLstm,         // a:x b:h_prev c:c_prev  p1:W_ih p2:W_hh p3:bias; val = [h | c]
    kSliceCols,    // a, int_args = {begin, len}
    kConcatCols,   // a, b
    kTanh,         // a
    kStackRows,    // int_args = arg ids
    kAttend,       // a: enc stack ((T*B) x H), b: h (B x H); saved alpha (B x T)
    kGather,       // p1: table, int_args = row ids
    kNllSoftmax,   // a: logits; int_args = targets then mask bits
    kAdd,          // a + b
    kScale,        // a * scalar
  };

  struct Node {
    Op op;
    int a = -1, b = -1, c = -1;
    int p1 = -1, p2 = -1, p3 = -1;  // parameter slots
    const M* ext = nullptr;         // kParam / external kInput storage
    M own;
    M grad;
    bool grad_ready = false;
    std::vector<M> saved;
    std::vector<int> int_args;
    double scalar = 0.0;

    const M& value() const { return ext ? *ext : own; }
  };

  explicit Tape(const std::vector<M>* params = nullptr) : params_(params) {}

  const M& value(VarId id) const { return nodes_[static_cast<size_t>(id)].value(); }
  Eigen::Index rows(VarId id) const { return value(id).rows(); }
  Eigen::Index cols(VarId id) const { return value(id).cols(); }

  VarId constant(M v) {
    Node n;
    n.op = Op::kInput;
    n.own = std::move(v);
    return push(std::move(n));
  }

  VarId view(const M* v) {
    Node n;
    n.op = Op::kInput;
    n.ext = v;
    return push(std::move(n));
  }

  /// Parameter leaf for slot `index` of the bound parameter vector.
  VarId param(int index) {
    Node n;
    n.op = Op::kParam;
    n.ext = &(*params_)[static_cast<size_t>(index)];
    n.p1 = index;
    return push(std::move(n));
  }

  /// y = x W + b with b broadcast over rows.
  VarId linear(VarId x, int w_slot, int b_slot) {
    Node n;
    n.op = Op::kLinear;
    n.a = x;
    n.p1 = w_slot;
    n.p2 = b_slot;
    n.own.noalias() = value(x) * P(w_slot);
    n.own.rowwise() += P(b_slot).row(0);
    return push(std::move(n));
  }

  /// Masked LSTM cell; returns a (B x 2H) node laid out [h | c]. Rows whose
  /// mask is zero carry the previous state through unchanged.
  VarId lstm(VarId x, VarId h_prev, VarId c_prev, int w_ih, int w_hh, int bias, M mask) {
    Node n;
    n.op = Op::kLstm;
    n.a = x;
    n.b = h_prev;
    n.c = c_prev;
    n.p1 = w_ih;
    n.p2 = w_hh;
    n.p3 = bias;

    M gates;
    lstm_gates(value(x), value(h_prev), P(w_ih), P(w_hh), P(bias), gates);
    M c_raw, tanh_c, h_raw;
    lstm_state(gates, value(c_prev), c_raw, tanh_c, h_raw);

    const Eigen::Index B = h_raw.rows(), H = h_raw.cols();
    n.own.resize(B, 2 * H);
    for (Eigen::Index r = 0; r < B; ++r) {
      S m = mask(r, 0);
      n.own.row(r).leftCols(H) = m * h_raw.row(r) + (S(1) - m) * value(h_prev).row(r);
      n.own.row(r).rightCols(H) = m * c_raw.row(r) + (S(1) - m) * value(c_prev).row(r);
    }
    n.saved.push_back(std::move(gates));
    n.saved.push_back(std::move(tanh_c));
    n.saved.push_back(std::move(mask));
    return push(std::move(n));
  }

  VarId slice_cols(VarId a, int begin, int len) {
    Node n;
    n.op = Op::kSliceCols;
    n.a = a;
    n.int_args = {begin, len};
    n.own = value(a).middleCols(begin, len);
    return push(std::move(n));
  }

  VarId concat_cols(VarId a, VarId b) {
    Node n;
    n.op = Op::kConcatCols;
    n.a = a;
    n.b = b;
    n.own.resize(rows(a), cols(a) + cols(b));
    n.own.leftCols(cols(a)) = value(a);
    n.own.rightCols(cols(b)) = value(b);
    return push(std::move(n));
  }

  VarId tanh(VarId a) {
    Node n;
    n.op = Op::kTanh;
    n.a = a;
    n.own = value(a).array().tanh().matrix();
    return push(std::move(n));
  }

  /// Stacks T nodes of shape (B x D) into ((T*B) x D); row t*B + b.
  VarId stack_rows(const std::vector<VarId>& parts) {
    Node n;
    n.op = Op::kStackRows;
    n.int_args.assign(parts.begin(), parts.end());
    const Eigen::Index B = rows(parts[0]), D = cols(parts[0]);
    n.own.resize(static_cast<Eigen::Index>(parts.size()) * B, D);
    for (size_t t = 0; t < parts.size(); ++t) {
      n.own.middleRows(static_cast<Eigen::Index>(t) * B, B) = value(parts[t]);
    }
    return push(std::move(n));
  }

  /// Global dot-product attention. enc is a stack_rows result ((T*B) x H),
  /// h is (B x H), mask is (B x T) with 1 on valid source steps. Returns the
  /// context (B x H); the attention weights are saved for backward.
  VarId attend(VarId enc, VarId h, M mask) {
    Node n;
    n.op = Op::kAttend;
    n.a = enc;
    n.b = h;
    const M& E = value(enc);
    const M& Q = value(h);
    const Eigen::Index B = Q.rows(), H = Q.cols();
    const Eigen::Index T = E.rows() / B;

    M alpha(B, T);
    for (Eigen::Index r = 0; r < B; ++r) {
      S mx = std::numeric_limits<S>::lowest();
      for (Eigen::Index t = 0; t < T; ++t) {
        if (mask(r, t) == S(0)) {
          alpha(r, t) = std::numeric_limits<S>::lowest();
          continue;
        }
        alpha(r, t) = E.row(t * B + r).dot(Q.row(r));
        mx = std::max(mx, alpha(r, t));
      }
      S sum = S(0);
      for (Eigen::Index t = 0; t < T; ++t) {
        if (mask(r, t) == S(0)) {
          alpha(r, t) = S(0);
        } else {
          alpha(r, t) = std::exp(alpha(r, t) - mx);
          sum += alpha(r, t);
        }
      }
      if (sum > S(0)) alpha.row(r) /= sum;
    }
    n.own.setZero(B, H);
    for (Eigen::Index r = 0; r < B; ++r) {
      for (Eigen::Index t = 0; t < T; ++t) {
        if (alpha(r, t) != S(0)) n.own.row(r) += alpha(r, t) * E.row(t * B + r);
      }
    }
    n.saved.push_back(std::move(alpha));
    return push(std::move(n));
  }

  /// Embedding lookup: rows of the table parameter by id.
  VarId gather(int table_slot, const std::vector<int>& ids) {
    Node n;
    n.op = Op::kGather;
    n.p1 = table_slot;
    n.int_args = ids;
    const M& T = P(table_slot);
    n.own.resize(static_cast<Eigen::Index>(ids.size()), T.cols());
    for (size_t r = 0; r < ids.size(); ++r) n.own.row(static_cast<Eigen::Index>(r)) = T.row(ids[r]);
    return push(std::move(n));
  }

  /// Summed token NLL under log-softmax for the masked rows; result is 1x1.
  /// Also counts the contributing tokens via `tokens_out`.
  VarId nll_log_softmax(VarId logits, const std::vector<int>& targets,
                        const std::vector<int>& mask, int* tokens_out = nullptr) {
    Node n;
    n.op = Op::kNllSoftmax;
    n.a = logits;
    n.int_args = targets;
    n.int_args.insert(n.int_args.end(), mask.begin(), mask.end());

    const M& L = value(logits);
    const Eigen::Index B = L.rows();
    M probs(L.rows(), L.cols());
    double loss = 0.0;
    int tokens = 0;
    for (Eigen::Index r = 0; r < B; ++r) {
      S mx = L.row(r).maxCoeff();
      probs.row(r) = (L.row(r).array() - mx).exp().matrix();
      S z = probs.row(r).sum();
      probs.row(r) /= z;
      if (mask[static_cast<size_t>(r)]) {
        // The NLL gradient (p - onehot) stays bounded even when the target
        // probability underflows, so the value is floored rather than letting
        // a single underflow poison the loss.
        double p = static_cast<double>(probs(r, targets[static_cast<size_t>(r)]));
        loss -= std::max(std::log(p), -50.0);
        ++tokens;
      }
    }
    if (tokens_out) *tokens_out = tokens;
    n.own.resize(1, 1);
    n.own(0, 0) = static_cast<S>(loss);
    n.saved.push_back(std::move(probs));
    return push(std::move(n));
  }

  VarId add(VarId a, VarId b) {
    Node n;
    n.op = Op::kAdd;
    n.a = a;
    n.b = b;
    n.own = value(a) + value(b);
    return push(std::move(n));
  }

  VarId scale(VarId a, double s) {
    Node n;
    n.op = Op::kScale;
    n.a = a;
    n.scalar = s;
    n.own = value(a) * static_cast<S>(s);
    return push(std::move(n));
  }

  /// Reverse pass from a scalar node; parameter gradients are ADDED into
  /// `grad_sink`, which must be sized like the bound parameter vector.
  void backward(VarId loss, std::vector<M>& grad_sink) {
    grad_of(loss).setConstant(S(1));
    for (int id = loss; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.grad_ready) continue;
      const M& gy = n.grad;
      switch (n.op) {
        case Op::kInput:
          break;
        case Op::kParam:
          add_to(grad_sink[static_cast<size_t>(n.p1)], gy, n.value());
          break;
        case Op::kLinear: {
          const M& x = value(n.a);
          grad_of(n.a).noalias() += gy * P(n.p1).transpose();
          sized(grad_sink[static_cast<size_t>(n.p1)], P(n.p1)).noalias() += x.transpose() * gy;
          sized(grad_sink[static_cast<size_t>(n.p2)], P(n.p2)).row(0) += gy.colwise().sum();
          break;
        }
        case Op::kLstm:
          backward_lstm(n, gy, grad_sink);
          break;
        case Op::kSliceCols:
          grad_of(n.a).middleCols(n.int_args[0], n.int_args[1]) += gy;
          break;
        case Op::kConcatCols:
          grad_of(n.a) += gy.leftCols(cols(n.a));
          grad_of(n.b) += gy.rightCols(cols(n.b));
          break;
        case Op::kTanh:
          grad_of(n.a).array() += gy.array() * (S(1) - n.own.array().square());
          break;
        case Op::kStackRows: {
          const Eigen::Index B = value(n.int_args[0]).rows();
          for (size_t t = 0; t < n.int_args.size(); ++t) {
            grad_of(n.int_args[t]) += gy.middleRows(static_cast<Eigen::Index>(t) * B, B);
          }
          break;
        }
        case Op::kAttend:
          backward_attend(n, gy);
          break;
        case Op::kGather: {
          M& g = sized(grad_sink[static_cast<size_t>(n.p1)], P(n.p1));
          for (size_t r = 0; r < n.int_args.size(); ++r) {
            g.row(n.int_args[r]) += gy.row(static_cast<Eigen::Index>(r));
          }
          break;
        }
        case Op::kNllSoftmax: {
          const M& probs = n.saved[0];
          const Eigen::Index B = probs.rows();
          const int* targets = n.int_args.data();
          const int* mask = n.int_args.data() + B;
          M& gx = grad_of(n.a);
          S go = gy(0, 0);
          for (Eigen::Index r = 0; r < B; ++r) {
            if (!mask[r]) continue;
            gx.row(r) += go * probs.row(r);
            gx(r, targets[r]) -= go;
          }
          break;
        }
        case Op::kAdd:
          grad_of(n.a) += gy;
          grad_of(n.b) += gy;
          break;
        case Op::kScale:
          grad_of(n.a) += gy * static_cast<S>(n.scalar);
          break;
      }
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  const M& P(int slot) const { return (*params_)[static_cast<size_t>(slot)]; }

  static M& sized(M& g, const M& like) {
    if (g.rows() != like.rows() || g.cols() != like.cols()) g.setZero(like.rows(), like.cols());
    return g;
  }

  static void add_to(M& g, const M& gy, const M& like) { sized(g, like) += gy; }

  VarId push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<VarId>(nodes_.size() - 1);
  }

  M& grad_of(VarId id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_ready) {
      n.grad.setZero(n.value().rows(), n.value().cols());
      n.grad_ready = true;
    }
    return n.grad;
  }

  void backward_lstm(Node& n, const M& gy, std::vector<M>& grad_sink) {
    const M& gates = n.saved[0];
    const M& tanh_c = n.saved[1];
    const M& mask = n.saved[2];
    const M& x = value(n.a);
    const M& h_prev = value(n.b);
    const M& c_prev = value(n.c);
    const Eigen::Index B = h_prev.rows(), H = h_prev.cols();

    auto i = gates.leftCols(H).array();
    auto f = gates.middleCols(H, H).array();
    auto g = gates.middleCols(2 * H, H).array();
    auto o = gates.rightCols(H).array();

    M dh(B, H), dc(B, H);
    M& gh_prev = grad_of(n.b);
    M& gc_prev = grad_of(n.c);
    for (Eigen::Index r = 0; r < B; ++r) {
      S m = mask(r, 0);
      dh.row(r) = m * gy.row(r).leftCols(H);
      dc.row(r) = m * gy.row(r).rightCols(H);
      gh_prev.row(r) += (S(1) - m) * gy.row(r).leftCols(H);
      gc_prev.row(r) += (S(1) - m) * gy.row(r).rightCols(H);
    }

    M d_o = dh.array() * tanh_c.array();
    M dc_raw =
        dc.array() + dh.array() * o * (S(1) - tanh_c.array().square());
    M d_i = dc_raw.array() * g;
    M d_f = dc_raw.array() * c_prev.array();
    M d_g = dc_raw.array() * i;
    gc_prev.array() += dc_raw.array() * f;

    M dZ(B, 4 * H);
    dZ.leftCols(H) = (d_i.array() * i * (S(1) - i)).matrix();
    dZ.middleCols(H, H) = (d_f.array() * f * (S(1) - f)).matrix();
    dZ.middleCols(2 * H, H) = (d_g.array() * (S(1) - g.square())).matrix();
    dZ.rightCols(H) = (d_o.array() * o * (S(1) - o)).matrix();

    grad_of(n.a).noalias() += dZ * P(n.p1).transpose();
    gh_prev.noalias() += dZ * P(n.p2).transpose();
    sized(grad_sink[static_cast<size_t>(n.p1)], P(n.p1)).noalias() += x.transpose() * dZ;
    sized(grad_sink[static_cast<size_t>(n.p2)], P(n.p2)).noalias() += h_prev.transpose() * dZ;
    sized(grad_sink[static_cast<size_t>(n.p3)], P(n.p3)).row(0) += dZ.colwise().sum();
  }

  void backward_attend(Node& n, const M& gy) {
    const M& alpha = n.saved[0];
    const M& E = value(n.a);
    const M& Q = value(n.b);
    const Eigen::Index B = Q.rows(), T = alpha.cols();
    M& gE = grad_of(n.a);
    M& gQ = grad_of(n.b);
    for (Eigen::Index r = 0; r < B; ++r) {
      // d(alpha)
      Eigen::Matrix<S, 1, Eigen::Dynamic> dalpha(T);
      for (Eigen::Index t = 0; t < T; ++t) {
        dalpha(t) = alpha(r, t) == S(0) ? S(0) : E.row(t * B + r).dot(gy.row(r));
      }
      S inner = S(0);
      for (Eigen::Index t = 0; t < T; ++t) inner += alpha(r, t) * dalpha(t);
      for (Eigen::Index t = 0; t < T; ++t) {
        S ds = alpha(r, t) * (dalpha(t) - inner);
        if (ds != S(0)) {
          gQ.row(r) += ds * E.row(t * B + r);
          gE.row(t * B + r) += ds * Q.row(r);
        }
        if (alpha(r, t) != S(0)) gE.row(t * B + r) += alpha(r, t) * gy.row(r);
      }
    }
  }

  const std::vector<M>* params_;
  std::vector<Node> nodes_;
};

}  // namespace obfrev::ad

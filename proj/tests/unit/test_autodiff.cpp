#include "obfrev/autodiff.hpp"

#include "doctest.h"
#include "obfrev/nn.hpp"
#include "obfrev/rng.hpp"

using namespace obfrev;
using ad::Mat;
using ad::Tape;

namespace {

Mat<double> random_mat(Rng& rng, Eigen::Index r, Eigen::Index c, double range = 0.5) {
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(-range, range);
  }
  return m;
}

// A miniature translation step touching every op: gather -> two chained
// masked lstm cells -> stack/attend -> concat -> tanh -> linear -> nll.
struct MiniNet {
  nn::ParamStore<double> store;
  int emb, w_ih, w_hh, b, w_out, b_out;
  std::vector<int> ids{1, 3, 2, 0};
  std::vector<int> targets{2, 1, 0, 3};
  std::vector<int> mask{1, 1, 1, 0};
  Mat<double> step_mask;

  MiniNet() {
    emb = store.add("emb", 5, 4);
    w_ih = store.add("w_ih", 4, 4 * 3);
    w_hh = store.add("w_hh", 3, 4 * 3);
    b = store.add("b", 1, 4 * 3);
    w_out = store.add("w_out", 6, 5);
    b_out = store.add("b_out", 1, 5);
    Rng rng(17);
    store.init_uniform(rng, 0.4);
    step_mask.resize(4, 1);
    step_mask << 1, 1, 1, 0;
  }

  double loss(std::vector<Mat<double>>* grads) {
    Tape<double> tape(&store.values);
    auto x = tape.gather(emb, ids);
    auto h0 = tape.constant(Mat<double>::Zero(4, 3));
    auto c0 = tape.constant(Mat<double>::Zero(4, 3));
    auto hc1 = tape.lstm(x, h0, c0, w_ih, w_hh, b, step_mask);
    auto h1 = tape.slice_cols(hc1, 0, 3);
    auto c1 = tape.slice_cols(hc1, 3, 3);
    auto hc2 = tape.lstm(x, h1, c1, w_ih, w_hh, b, step_mask);
    auto h2 = tape.slice_cols(hc2, 0, 3);

    auto enc = tape.stack_rows({h1, h2});
    Mat<double> att_mask = Mat<double>::Ones(4, 2);
    att_mask(3, 1) = 0;
    auto ctx = tape.attend(enc, h2, att_mask);
    auto cat = tape.concat_cols(ctx, h2);
    auto act = tape.tanh(cat);
    auto logits = tape.linear(act, w_out, b_out);
    int tokens = 0;
    auto nll = tape.nll_log_softmax(logits, targets, mask, &tokens);
    auto loss_var = tape.scale(nll, 1.0 / tokens);
    if (grads) tape.backward(loss_var, *grads);
    return tape.value(loss_var)(0, 0);
  }
};

}  // namespace

TEST_CASE("every op path matches central finite differences") {
  MiniNet net;
  auto grads = net.store.zero_grads();
  net.loss(&grads);

  std::vector<int> all_slots{net.emb, net.w_ih, net.w_hh, net.b, net.w_out, net.b_out};
  auto report = nn::gradient_check<double>(
      net.store, all_slots, grads, [&]() { return net.loss(nullptr); }, 400, 5);
  CHECK(report.checked == 400);
  CHECK(report.max_rel_err <= 1e-4);
}

TEST_CASE("masked rows carry their state through unchanged") {
  nn::ParamStore<double> store;
  int w_ih = store.add("w_ih", 2, 12);
  int w_hh = store.add("w_hh", 3, 12);
  int b = store.add("b", 1, 12);
  Rng rng(3);
  store.init_uniform(rng, 0.5);

  Tape<double> tape(&store.values);
  Mat<double> x = random_mat(rng, 2, 2);
  Mat<double> h = random_mat(rng, 2, 3);
  Mat<double> c = random_mat(rng, 2, 3);
  Mat<double> mask(2, 1);
  mask << 1, 0;
  auto hc = tape.lstm(tape.constant(x), tape.constant(h), tape.constant(c), w_ih, w_hh, b, mask);
  const Mat<double>& out = tape.value(hc);
  CHECK(out.row(1).leftCols(3) == h.row(1));
  CHECK(out.row(1).rightCols(3) == c.row(1));
  CHECK(out.row(0).leftCols(3) != h.row(0));
}

TEST_CASE("attention ignores masked source positions") {
  nn::ParamStore<double> store;
  Rng rng(9);
  Tape<double> tape(&store.values);
  Mat<double> e1 = random_mat(rng, 1, 3), e2 = random_mat(rng, 1, 3);
  auto enc = tape.stack_rows({tape.constant(e1), tape.constant(e2)});
  auto q = tape.constant(random_mat(rng, 1, 3));
  Mat<double> mask(1, 2);
  mask << 1, 0;
  auto ctx = tape.attend(enc, q, mask);
  // Only the first position is attendable, so the context equals it.
  CHECK((tape.value(ctx) - e1).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("gradient clipping caps the global norm") {
  std::vector<Mat<double>> grads;
  grads.push_back(Mat<double>::Constant(4, 4, 2.0));
  grads.push_back(Mat<double>::Constant(2, 2, -3.0));
  double pre = nn::global_norm(grads);
  CHECK(pre > 5.0);
  double reported = nn::clip_grads(grads, 5.0);
  CHECK(reported == pre);
  CHECK(nn::global_norm(grads) <= 5.0 + 1e-9);

  // Under the limit nothing changes.
  std::vector<Mat<double>> small;
  small.push_back(Mat<double>::Constant(2, 2, 0.1));
  double n0 = nn::global_norm(small);
  nn::clip_grads(small, 5.0);
  CHECK(nn::global_norm(small) == n0);
}

TEST_CASE("float32 tape agrees with float64 within loose tolerance") {
  nn::ParamStore<double> s64;
  nn::ParamStore<float> s32;
  int w64 = s64.add("w", 3, 2), b64 = s64.add("b", 1, 2);
  int w32 = s32.add("w", 3, 2), b32 = s32.add("b", 1, 2);
  Rng rng(12);
  s64.init_uniform(rng, 0.5);
  for (size_t i = 0; i < s64.values.size(); ++i) {
    s32.values[i] = s64.values[i].cast<float>();
  }
  Rng rng2(13);
  Mat<double> x64 = random_mat(rng2, 4, 3);

  Tape<double> t64(&s64.values);
  auto y64 = t64.linear(t64.constant(x64), w64, b64);
  Tape<float> t32(&s32.values);
  auto y32 = t32.linear(t32.constant(x64.cast<float>()), w32, b32);
  CHECK((t64.value(y64).cast<float>() - t32.value(y32)).cwiseAbs().maxCoeff() < 1e-5f);
}

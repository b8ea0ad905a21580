#pragma once

#include "stmbr/model.hpp"

namespace stmbr {

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0;
};

namespace detail {

inline Var<double> probe_sum(const Var<double>& x, uint64_t seed) {
  Rng rng(seed);
  Tensor<double> w(x->value.shape);
  for (auto& v : w.data) v = rng.uniform(-1, 1);
  double acc = 0;
  for (size_t i = 0; i < w.data.size(); ++i) acc += w.data[i] * x->value.data[i];
  return make_op<double>(Tensor<double>::scalar(acc), "probe_sum", {x},
                         [x, w](Node<double>& self) {
                           Tensor<double> g(w.shape);
                           for (size_t i = 0; i < w.data.size(); ++i)
                             g.data[i] = w.data[i] * self.grad.data[0];
                           x->add_grad(g);
                         });
}

inline Tensor<double> rand_t(std::vector<int> shape, Rng& rng, double lo = -0.5, double hi = 0.5) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace detail

/// Finite-difference verification of every primitive and composite block,
/// `seeds` random draws each. Case errors are the max over seeds.
inline std::vector<GradCheckCase> run_gradcheck_suite(int seeds = 5) {
  std::vector<GradCheckCase> cases;
  auto record = [&](const std::string& name, auto make_inputs, auto fn) {
    double worst = 0;
    for (int s = 0; s < seeds; ++s) {
      Rng rng(1000 + 97 * s);
      auto inputs = make_inputs(rng);
      worst = std::max(worst, grad_check(fn, inputs));
    }
    cases.push_back({name, worst});
  };

  using V = std::vector<Var<double>>;
  using I = std::vector<Tensor<double>>;

  record("conv2d(s1,d1)",
         [](Rng& r) { return I{detail::rand_t({2, 2, 6, 6}, r), detail::rand_t({3, 2, 3, 3}, r),
                               detail::rand_t({3}, r)}; },
         [](const V& v) {
           return detail::probe_sum(vconv2d(v[0], v[1], v[2], 1, 1, same_pad(3, 3, 1)), 5);
         });
  record("conv2d(s2,d1)",
         [](Rng& r) { return I{detail::rand_t({1, 3, 8, 8}, r), detail::rand_t({4, 3, 3, 3}, r),
                               detail::rand_t({4}, r)}; },
         [](const V& v) { return detail::probe_sum(vconv2d(v[0], v[1], v[2], 2, 1, Pad{}), 7); });
  record("conv2d(s1,d2)",
         [](Rng& r) { return I{detail::rand_t({1, 2, 7, 7}, r), detail::rand_t({2, 2, 3, 3}, r),
                               detail::rand_t({2}, r)}; },
         [](const V& v) {
           return detail::probe_sum(vconv2d(v[0], v[1], v[2], 1, 2, same_pad(3, 3, 2)), 11);
         });
  record("conv2d(s2,d3)",
         [](Rng& r) { return I{detail::rand_t({1, 2, 9, 9}, r), detail::rand_t({2, 2, 2, 2}, r),
                               detail::rand_t({2}, r)}; },
         [](const V& v) { return detail::probe_sum(vconv2d(v[0], v[1], v[2], 2, 3, Pad{}), 13); });
  record("max_pool",
         [](Rng& r) { return I{detail::rand_t({2, 2, 6, 6}, r)}; },
         [](const V& v) { return detail::probe_sum(vmax_pool(v[0], 2, 2).out, 17); });
  record("avg_pool(s1,same)",
         [](Rng& r) { return I{detail::rand_t({2, 2, 6, 6}, r)}; },
         [](const V& v) { return detail::probe_sum(vavg_pool(v[0], 2, 1, Pad{0, 0, 1, 1}), 19); });
  record("max_unpool",
         [](Rng& r) { return I{detail::rand_t({1, 2, 6, 6}, r)}; },
         [](const V& v) {
           auto p = vmax_pool(v[0], 2, 2);
           return detail::probe_sum(vmax_unpool(p.out, p.indices, v[0]->value.shape), 23);
         });
  record("concat",
         [](Rng& r) { return I{detail::rand_t({1, 2, 4, 4}, r), detail::rand_t({1, 3, 4, 4}, r)}; },
         [](const V& v) { return detail::probe_sum(vconcat<double>({v[0], v[1]}), 29); });
  record("dense",
         [](Rng& r) { return I{detail::rand_t({3, 5}, r), detail::rand_t({5, 4}, r),
                               detail::rand_t({4}, r)}; },
         [](const V& v) { return detail::probe_sum(vdense(v[0], v[1], v[2]), 31); });
  record("softmax",
         [](Rng& r) { return I{detail::rand_t({3, 4}, r, -2, 2)}; },
         [](const V& v) { return detail::probe_sum(vsoftmax_rows(v[0]), 37); });
  record("softmax_channels",
         [](Rng& r) { return I{detail::rand_t({1, 3, 4, 4}, r, -2, 2)}; },
         [](const V& v) { return detail::probe_sum(vsoftmax_channels(v[0]), 41); });
  record("relu(|x|>10eps)",
         [](Rng& r) {
           Tensor<double> t({2, 2, 4, 4});
           for (auto& x : t.data)
             do {
               x = r.uniform(-1, 1);
             } while (std::abs(x) <= 1e-4);
           return I{t};
         },
         [](const V& v) { return detail::probe_sum(vrelu(v[0]), 43); });
  record("sigmoid",
         [](Rng& r) { return I{detail::rand_t({2, 6}, r, -3, 3)}; },
         [](const V& v) { return detail::probe_sum(vsigmoid(v[0]), 47); });
  record("dropout(mask replay)",
         [](Rng& r) { return I{detail::rand_t({1, 1, 6, 6}, r)}; },
         [](const V& v) {
           Rng mask(555);
           return detail::probe_sum(vdropout(v[0], 0.4, mask, true), 53);
         });
  record("global_avg_pool",
         [](Rng& r) { return I{detail::rand_t({2, 3, 4, 4}, r)}; },
         [](const V& v) { return detail::probe_sum(vglobal_avg_pool(v[0]), 59); });
  record("mul_pixel_gate",
         [](Rng& r) { return I{detail::rand_t({2, 3, 3, 3}, r), detail::rand_t({2, 1, 3, 3}, r)}; },
         [](const V& v) { return detail::probe_sum(vmul_pixel_gate(v[0], v[1]), 61); });
  record("cross_entropy",
         [](Rng& r) { return I{detail::rand_t({3, 2}, r, -2, 2)}; },
         [](const V& v) { return vcross_entropy(vsoftmax_rows(v[0]), {1, 0, 1}); });

  // Composite blocks. Parameters enter as leaves so both the input and every
  // trainable tensor are verified.
  record("stm_block",
         [](Rng& r) {
           return I{detail::rand_t({1, 3, 8, 8}, r),                        // x
                    detail::rand_t({2, 3, 3, 3}, r), detail::rand_t({2}, r),  // re1
                    detail::rand_t({2, 2, 3, 3}, r), detail::rand_t({2}, r),  // re2
                    detail::rand_t({2, 3, 3, 3}, r), detail::rand_t({2}, r),  // er1
                    detail::rand_t({2, 2, 3, 3}, r), detail::rand_t({2}, r),  // er2
                    detail::rand_t({2, 3, 3, 3}, r), detail::rand_t({2}, r),  // r
                    detail::rand_t({8, 8, 1, 1}, r), detail::rand_t({8}, r)}; // transition
         },
         [](const V& v) {
           StmBlockParams<double> p;
           p.cp = 2;
           p.re_w1 = v[1]; p.re_b1 = v[2]; p.re_w2 = v[3]; p.re_b2 = v[4];
           p.er_w1 = v[5]; p.er_b1 = v[6]; p.er_w2 = v[7]; p.er_b2 = v[8];
           p.r_w = v[9]; p.r_b = v[10];
           p.trans_w = v[11]; p.trans_b = v[12];
           Rng aux_rng(888);
           Tensor<double> aux = detail::rand_t({1, 2, 8, 8}, aux_rng);
           return detail::probe_sum(stm_block(v[0], p, aux), 67);
         });
  record("sa_gate",
         [](Rng& r) {
           return I{detail::rand_t({1, 4, 5, 5}, r),  // skip
                    detail::rand_t({1, 3, 5, 5}, r),  // gate input
                    detail::rand_t({4, 4, 1, 1}, r),  // wx
                    detail::rand_t({4, 3, 1, 1}, r), detail::rand_t({4}, r),
                    detail::rand_t({1, 4, 1, 1}, r), detail::rand_t({1}, r)};
         },
         [](const V& v) {
           SaGateParams<double> p{v[2], v[3], v[4], v[5], v[6]};
           return detail::probe_sum(sa_gate(v[0], v[1], p), 71);
         });
  record("encoder_block",
         [](Rng& r) {
           return I{detail::rand_t({1, 2, 6, 6}, r),
                    detail::rand_t({3, 2, 3, 3}, r), detail::rand_t({3}, r),
                    detail::rand_t({3, 3, 3, 3}, r), detail::rand_t({3}, r),
                    detail::rand_t({3, 6, 1, 1}, r), detail::rand_t({3}, r)};
         },
         [](const V& v) {
           EncDecBlockParams<double> p{v[1], v[2], v[3], v[4], v[5], v[6]};
           return detail::probe_sum(encoder_block(v[0], p).pooled, 73);
         });
  record("boosted_decoder_block",
         [](Rng& r) {
           return I{detail::rand_t({1, 3, 6, 6}, r),    // encoder pre-pool source
                    detail::rand_t({3, 6, 1, 1}, r), detail::rand_t({3}, r),   // fuse
                    detail::rand_t({4, 3, 1, 1}, r),                           // sa wx
                    detail::rand_t({4, 3, 1, 1}, r), detail::rand_t({4}, r),   // sa wsa
                    detail::rand_t({1, 4, 1, 1}, r), detail::rand_t({1}, r),   // sa f
                    detail::rand_t({2, 8, 3, 3}, r), detail::rand_t({2}, r)};  // out conv
         },
         [](const V& v) {
           // Derive pooled values and indices from the same leaf so the whole
           // mirrored path is covered.
           auto pooled = vmax_pool(v[0], 2, 2);
           BoostedDecoderParams<double> p;
           p.fuse_w = v[1]; p.fuse_b = v[2];
           p.gate = SaGateParams<double>{v[3], v[4], v[5], v[6], v[7]};
           p.out_w = v[8]; p.out_b = v[9];
           p.use_sa = true;
           Rng aux_rng(999);
           Tensor<double> aux = detail::rand_t({1, 2, 6, 6}, aux_rng);
           return detail::probe_sum(boosted_decoder_block(pooled.out, pooled.indices, v[0], aux, p), 79);
         });
  return cases;
}

}  // namespace stmbr

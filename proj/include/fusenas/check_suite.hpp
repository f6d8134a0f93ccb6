#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fusenas/gradcheck.hpp"
#include "fusenas/ops.hpp"

namespace fusenas {

// Finite-difference checks for every diffcore primitive and every fusion
// operator, all in double precision on shapes no larger than 1x8x8x8.
// Nonsmooth primitives are probed away from their kinks.
inline std::vector<CheckResult> gradient_check_suite(
    const std::string& only = "", double tolerance = 1e-3) {
  std::vector<CheckResult> results;
  Rng rng(20240811);

  // scalar probes: mean of out * random constant weights. The Rng is taken
  // by value so re-evaluations during finite differencing see the exact same
  // probe weights.
  auto weighted = [](Tape<double>& t, Var out, Rng wr) {
    Shape s = t.shape(out);
    std::vector<double> w(std::size_t(s.numel()), 0.0);
    for (auto& v : w) v = wr.uniform(-1.0, 1.0);
    return t.global_mean(t.mul(out, t.input(s, std::move(w))));
  };
  auto weighted_complex = [](Tape<double>& t, Var out, Rng wr) {
    Shape s = t.shape(out);
    std::vector<double> w(std::size_t(s.numel()), 0.0);
    for (auto& v : w) v = wr.uniform(0.2, 1.0);
    return t.global_mean(t.mul(t.complex_abs2(out), t.input(s, std::move(w))));
  };

  auto run = [&](const std::string& name,
                 std::function<double(Rng&)> fn) {
    if (!only.empty() && name != only) return;
    Rng local = rng.fork(name);
    CheckResult r;
    r.name = name;
    r.max_rel_err = fn(local);
    r.pass = r.max_rel_err < tolerance;
    results.push_back(r);
  };

  const Shape s446(1, 4, 4, 6);

  // ---- elementwise -----------------------------------------------------------
  run("add", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.add(v[0], v[1]), wr);
           })
        .add_input_random(s446, r)
        .add_input_random(s446, r)
        .max_rel_error();
  });
  run("sub", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.sub(v[0], v[1]), wr);
           })
        .add_input_random(s446, r)
        .add_input_random(s446, r)
        .max_rel_error();
  });
  run("mul", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.mul(v[0], v[1]), wr);
           })
        .add_input_random(s446, r)
        .add_input_random(s446, r)
        .max_rel_error();
  });
  run("div", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.div(v[0], v[1]), wr);
           })
        .add_input_random(s446, r)
        .add_input_random(s446, r, 0.5, 1.5)
        .max_rel_error();
  });
  run("scale_add_scalar", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.add_scalar(t.scale(v[0], 1.7), 0.3), wr);
           })
        .add_input_random(s446, r)
        .max_rel_error();
  });
  run("leaky_relu", [&](Rng& r) {
    Rng wr = r.fork("w");
    GradCheck gc([&](Tape<double>& t, const std::vector<Var>& v) {
      return weighted(t, t.leaky_relu(v[0]), wr);
    });
    std::vector<double> d(std::size_t(s446.numel()));
    for (auto& v : d) {
      v = r.uniform(-1.0, 1.0);
      if (std::abs(v) < 0.05) v = v < 0 ? v - 0.05 : v + 0.05;  // avoid kink
    }
    return gc.add_input(s446, std::move(d)).max_rel_error();
  });
  run("sigmoid", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.sigmoid(v[0]), wr);
           })
        .add_input_random(s446, r, -3.0, 3.0)
        .max_rel_error();
  });
  run("sqrt", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.sqrt_op(v[0]), wr);
           })
        .add_input_random(s446, r, 0.2, 2.0)
        .max_rel_error();
  });
  run("recip", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.recip(v[0]), wr);
           })
        .add_input_random(s446, r, 0.4, 2.0)
        .max_rel_error();
  });
  run("abs", [&](Rng& r) {
    Rng wr = r.fork("w");
    GradCheck gc([&](Tape<double>& t, const std::vector<Var>& v) {
      return weighted(t, t.abs_op(v[0]), wr);
    });
    std::vector<double> d(std::size_t(s446.numel()));
    for (auto& v : d) {
      v = r.uniform(-1.0, 1.0);
      if (std::abs(v) < 0.05) v = v < 0 ? v - 0.05 : v + 0.05;
    }
    return gc.add_input(s446, std::move(d)).max_rel_error();
  });
  run("clamp01", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.clamp01(v[0]), wr);
           })
        .add_input_random(s446, r, 0.05, 0.95)
        .max_rel_error();
  });
  run("arccos", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.arccos(v[0]), wr);
           })
        .add_input_random(s446, r, -0.9, 0.9)
        .max_rel_error();
  });

  // ---- broadcasting ------------------------------------------------------------
  run("add_b_channel", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.add_b(v[0], v[1]), wr);
           })
        .add_input_random(Shape(2, 4, 4, 4), r)
        .add_input_random(Shape(1, 4, 1, 1), r)
        .max_rel_error();
  });
  run("mul_b_scalar", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.mul_b(v[0], v[1]), wr);
           })
        .add_input_random(Shape(2, 3, 4, 4), r)
        .add_input_random(Shape(1, 1, 1, 1), r)
        .max_rel_error();
  });
  run("mul_b_per_sample", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.mul_b(v[0], v[1]), wr);
           })
        .add_input_random(Shape(2, 3, 4, 4), r)
        .add_input_random(Shape(2, 3, 1, 1), r, 0.5, 1.5)
        .max_rel_error();
  });

  // ---- structure -----------------------------------------------------------------
  run("concat_slice", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             Var cat = t.concat_channels({v[0], v[1]});
             return weighted(t, t.slice_channels(cat, 1, 5), wr);
           })
        .add_input_random(Shape(2, 3, 4, 4), r)
        .add_input_random(Shape(2, 3, 4, 4), r)
        .max_rel_error();
  });
  run("reshape", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.reshape(v[0], Shape(1, 1, 8, 12)), wr);
           })
        .add_input_random(s446, r)
        .max_rel_error();
  });
  run("downsample2x_avg", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.downsample2x_avg(v[0]), wr);
           })
        .add_input_random(Shape(1, 3, 6, 6), r)
        .max_rel_error();
  });
  run("upsample2x_nearest", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.upsample2x_nearest(v[0]), wr);
           })
        .add_input_random(Shape(1, 3, 4, 4), r)
        .max_rel_error();
  });

  // ---- reductions -------------------------------------------------------------------
  run("channel_mean", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.channel_mean(v[0]), wr);
           })
        .add_input_random(s446, r)
        .max_rel_error();
  });
  run("channel_std", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.channel_std(v[0]), wr);
           })
        .add_input_random(s446, r)
        .max_rel_error();
  });
  run("global_mean", [&](Rng& r) {
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return t.global_mean(v[0]);
           })
        .add_input_random(s446, r)
        .max_rel_error();
  });
  run("global_sum", [&](Rng& r) {
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return t.scale(t.global_sum(v[0]), 0.1);
           })
        .add_input_random(s446, r)
        .max_rel_error();
  });
  run("sum_per_sample", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.sum_per_sample(v[0]), wr);
           })
        .add_input_random(Shape(3, 2, 4, 4), r)
        .max_rel_error();
  });

  // ---- softmax / element --------------------------------------------------------------
  run("softmax_rows", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.softmax_rows(v[0]), wr);
           })
        .add_input_random(Shape(1, 1, 5, 7), r, -2.0, 2.0)
        .max_rel_error();
  });
  run("element", [&](Rng& r) {
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return t.scale(t.element(v[0], 0, 2, 1, 3), 2.0);
           })
        .add_input_random(s446, r)
        .max_rel_error();
  });

  // ---- matmul ----------------------------------------------------------------------------
  for (int ta = 0; ta <= 1; ++ta)
    for (int tb = 0; tb <= 1; ++tb) {
      std::string name = "matmul_t" + std::to_string(ta) + std::to_string(tb);
      run(name, [&, ta, tb](Rng& r) {
        Rng wr = r.fork("w");
        Shape sa = ta ? Shape(2, 1, 5, 3) : Shape(2, 1, 3, 5);
        Shape sb = tb ? Shape(2, 1, 4, 5) : Shape(2, 1, 5, 4);
        return GradCheck([&, ta, tb](Tape<double>& t,
                                     const std::vector<Var>& v) {
                 return weighted(t, t.matmul(v[0], v[1], ta, tb), wr);
               })
            .add_input_random(sa, r)
            .add_input_random(sb, r)
            .max_rel_error();
      });
    }

  // ---- convolution ----------------------------------------------------------------------
  struct ConvCase {
    const char* name;
    Shape x, w;
    int dil, groups;
  };
  const ConvCase conv_cases[] = {
      {"conv2d_3x3", Shape(2, 3, 5, 5), Shape(4, 3, 3, 3), 1, 1},
      {"conv2d_3x3_dil2", Shape(1, 2, 7, 7), Shape(3, 2, 3, 3), 2, 1},
      {"conv2d_5x5", Shape(1, 2, 6, 6), Shape(2, 2, 5, 5), 1, 1},
      {"conv2d_depthwise", Shape(1, 4, 5, 5), Shape(4, 1, 3, 3), 1, 4},
      {"conv2d_groups2", Shape(1, 4, 5, 5), Shape(6, 2, 3, 3), 1, 2},
      {"conv2d_1x1", Shape(2, 4, 4, 4), Shape(3, 4, 1, 1), 1, 1},
  };
  for (const auto& cc : conv_cases) {
    run(cc.name, [&](Rng& r) {
      Rng wr = r.fork("w");
      return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
               return weighted(t, t.conv2d(v[0], v[1], cc.dil, cc.groups), wr);
             })
          .add_input_random(cc.x, r)
          .add_input_random(cc.w, r)
          .max_rel_error();
    });
  }

  // ---- Fourier and complex -----------------------------------------------------------------
  run("fft2", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted_complex(t, t.fft2(v[0]), wr);
           })
        .add_input_random(Shape(1, 2, 4, 6), r)
        .max_rel_error();
  });
  run("ifft2", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             Var spec = t.make_complex(v[0], v[1]);
             return weighted_complex(t, t.ifft2(spec), wr);
           })
        .add_input_random(Shape(1, 2, 4, 4), r)
        .add_input_random(Shape(1, 2, 4, 4), r)
        .max_rel_error();
  });
  run("complex_real_roundtrip", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.complex_real(t.ifft2(t.fft2(v[0]))), wr);
           })
        .add_input_random(Shape(1, 1, 6, 6), r)
        .max_rel_error();
  });
  run("complex_mul", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             Var a = t.make_complex(v[0], v[1]);
             Var b = t.make_complex(v[2], v[3]);
             return weighted_complex(t, t.complex_mul(a, b), wr);
           })
        .add_input_random(Shape(1, 1, 3, 4), r)
        .add_input_random(Shape(1, 1, 3, 4), r)
        .add_input_random(Shape(1, 1, 3, 4), r)
        .add_input_random(Shape(1, 1, 3, 4), r)
        .max_rel_error();
  });
  run("complex_conj", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             Var a = t.make_complex(v[0], v[1]);
             Var b = t.make_complex(v[2], v[3]);
             return weighted_complex(t, t.complex_mul(t.complex_conj(a), b),
                                     wr);
           })
        .add_input_random(Shape(1, 1, 3, 3), r)
        .add_input_random(Shape(1, 1, 3, 3), r)
        .add_input_random(Shape(1, 1, 3, 3), r)
        .add_input_random(Shape(1, 1, 3, 3), r)
        .max_rel_error();
  });
  run("complex_abs2", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.complex_abs2(t.make_complex(v[0], v[1])),
                             wr);
           })
        .add_input_random(Shape(1, 2, 3, 3), r)
        .add_input_random(Shape(1, 2, 3, 3), r)
        .max_rel_error();
  });
  run("complex_abs", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             return weighted(t, t.complex_abs(t.make_complex(v[0], v[1])), wr);
           })
        .add_input_random(Shape(1, 2, 3, 3), r, 0.3, 1.5)
        .add_input_random(Shape(1, 2, 3, 3), r, 0.3, 1.5)
        .max_rel_error();
  });
  run("cdiv_real", [&](Rng& r) {
    Rng wr = r.fork("w");
    return GradCheck([&](Tape<double>& t, const std::vector<Var>& v) {
             Var a = t.make_complex(v[0], v[1]);
             return weighted_complex(t, t.cdiv_real(a, v[2]), wr);
           })
        .add_input_random(Shape(1, 1, 3, 4), r)
        .add_input_random(Shape(1, 1, 3, 4), r)
        .add_input_random(Shape(1, 1, 3, 4), r, 0.5, 1.5)
        .max_rel_error();
  });
  run("bce_logits", [&](Rng& r) {
    std::vector<double> targets(12);
    for (auto& v : targets) v = r.bernoulli(0.5) ? 1.0 : 0.0;
    return GradCheck([&, targets](Tape<double>& t,
                                  const std::vector<Var>& v) {
             return t.bce_logits(v[0], targets);
           })
        .add_input_random(Shape(1, 3, 2, 2), r, -2.0, 2.0)
        .max_rel_error();
  });

  // ---- fusion operators ---------------------------------------------------------------------
  for (ops::OperatorKind kind : ops::operator_registry()) {
    std::string name = std::string("op_") + ops::kind_name(kind);
    run(name, [&, kind](Rng& r) {
      Rng wr = r.fork("w");
      const int C = 8;
      ParamStore<double> store(r.next_u64());
      auto op = ops::make_operator<double>(kind, C, store, "chk");
      GradCheck gc([&, kind](Tape<double>& t, const std::vector<Var>& v) {
        return weighted(t, op->forward(t, v[0]), wr);
      });
      gc.add_input_random(Shape(1, C, 8, 8), r);
      store.for_each([&](Parameter<double>& p) { gc.add_param(&p); });
      return gc.max_rel_error();
    });
  }

  return results;
}

}  // namespace fusenas

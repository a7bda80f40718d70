#include "biscuit/suite.hpp"

#include <cmath>
#include <stdexcept>

namespace biscuit {

namespace {

ParamDef around(std::int64_t v) {
  ParamDef d;
  d.value = v;
  for (double f : {0.5, 0.75, 1.0, 1.25, 1.5}) d.train.push_back(std::llround(f * static_cast<double>(v)));
  d.run_lo = std::llround(0.85 * static_cast<double>(v));
  d.run_hi = std::llround(1.15 * static_cast<double>(v));
  return d;
}

FunctionItem item(LoopNest n) { return {std::move(n)}; }
FunctionItem work(std::int64_t n) { return {Work{n}}; }
FunctionItem call(std::string target, double p = 1.0, std::optional<BoundSpec> rounds = {}) {
  return {CallSite{std::move(target), p, std::move(rounds)}};
}

Function function(std::string name, std::vector<FunctionItem> body) {
  Function f;
  f.name = std::move(name);
  f.body = std::move(body);
  return f;
}

void add(Program& p, Function f) { p.functions[f.name] = std::move(f); }

// Two-level kernel: outer over a param (or data-dependent count), inner
// constant trip count.
struct Kernel {
  std::string id;
  std::int64_t outer;
  std::int64_t inner;
  std::int64_t inner_work;
  bool data_dependent = false;
};

LoopNest kernel_nest(Program& p, const Kernel& k, double mpki, double noise) {
  BoundSpec outer;
  if (k.data_dependent) {
    outer = BoundSpec::data(static_cast<double>(k.outer), 0.15 * static_cast<double>(k.outer), 1);
  } else {
    std::string param = "N_" + k.id;
    p.params[param] = around(k.outer);
    outer = BoundSpec::param(param);
  }
  return make_nest({{k.id, outer, 2000}, {k.id + "_i", BoundSpec::constant(k.inner), k.inner_work}},
                   mpki, 400.0, noise);
}

Program kernel_program(const std::string& name, double mpki, double sensitivity,
                       const std::vector<Kernel>& kernels, double noise = 0.04) {
  Program p;
  p.name = name;
  p.sensitivity = sensitivity;
  p.plain_mpki = 0.5;
  std::vector<FunctionItem> body{work(1000000)};
  for (const auto& k : kernels) body.push_back(item(kernel_nest(p, k, mpki, noise)));
  body.push_back(work(500000));
  add(p, function("main", std::move(body)));
  return p;
}

Program cipher_block() {
  Program p;
  p.name = "cipher_block";
  p.sensitivity = 0.015;
  p.plain_mpki = 0.2;
  p.params["BLK"] = around(400);
  p.params["KEYS"] = around(40);
  const double rho = 1.0, noise = 0.03;
  add(p, function("main",
                  {work(2000000),
                   item(make_nest({{"cb_key", BoundSpec::param("KEYS"), 1000},
                                   {"cb_key_r", BoundSpec::constant(10), 400000}},
                                  rho, 300.0, noise)),
                   call("encrypt_pass"), call("cbc_mac"), call("encrypt_pass")}));
  add(p, function("encrypt_pass",
                  {item(make_nest({{"cb_enc", BoundSpec::param("BLK"), 2000},
                                   {"cb_enc_r", BoundSpec::constant(16), 100000}},
                                  rho, 300.0, noise))}));
  add(p, function("cbc_mac", {item(make_nest({{"cb_mac", BoundSpec::param("BLK"), 5000},
                                               {"cb_mac_r", BoundSpec::constant(8), 100000}},
                                              rho, 300.0, noise)),
                              work(200000)}));
  return p;
}

// Square-and-multiply as a two-function recursion cycle; the number of
// rounds is the exponent bit count, known at the call.
Program cipher_modexp() {
  Program p;
  p.name = "cipher_modexp";
  p.sensitivity = 0.015;
  p.plain_mpki = 0.2;
  p.params["BITS"] = around(256);
  p.params["WIN"] = around(60);
  const double rho = 1.0, noise = 0.03;
  add(p, function("main",
                  {work(1000000),
                   item(make_nest({{"me_pre", BoundSpec::param("WIN"), 2000},
                                   {"me_pre_i", BoundSpec::constant(32), 150000}},
                                  rho, 300.0, noise)),
                   call("modexp", 1.0, BoundSpec::param("BITS")),
                   item(make_nest({{"me_post", BoundSpec::param("WIN"), 1000},
                                   {"me_post_i", BoundSpec::constant(16), 150000}},
                                  rho, 300.0, noise))}));
  add(p, function("modexp", {item(make_nest({{"me_mul", BoundSpec::constant(16), 1000},
                                              {"me_mul_i", BoundSpec::constant(4), 50000}},
                                             rho, 20.0, noise)),
                             call("square")}));
  add(p, function("square", {item(make_nest({{"me_sq", BoundSpec::constant(16), 1000},
                                              {"me_sq_i", BoundSpec::constant(3), 50000}},
                                             rho, 20.0, noise)),
                             call("modexp")}));
  return p;
}

// Point loop calling a single-nest helper: the helper's level joins the
// caller's beacon.
Program cipher_ecc() {
  Program p;
  p.name = "cipher_ecc";
  p.sensitivity = 0.015;
  p.plain_mpki = 0.2;
  p.params["PTS"] = around(500);
  p.params["SC"] = around(50);
  const double rho = 1.0, noise = 0.03;
  add(p, function("main",
                  {work(1000000),
                   item(make_nest({{"ec_scalar", BoundSpec::param("SC"), 2000},
                                   {"ec_scalar_i", BoundSpec::constant(24), 200000}},
                                  rho, 300.0, noise)),
                   item(make_nest({{"ec_pts", BoundSpec::param("PTS"), 5000}}, rho, 300.0, noise,
                                  {Stmt{CallSite{"point_add", 1.0, std::nullopt}}})),
                   item(make_nest({{"ec_final", BoundSpec::param("SC"), 1000},
                                   {"ec_final_i", BoundSpec::constant(40), 200000}},
                                  rho, 300.0, noise))}));
  add(p, function("point_add",
                  {item(make_nest({{"ec_add", BoundSpec::constant(8), 200000}}, rho, 0.0, noise)),
                   work(20000)}));
  return p;
}

// Keypoint loop with a data-dependent count and a conditional descriptor
// call per keypoint.
Program vis_sift() {
  Program p;
  p.name = "vis_sift";
  p.sensitivity = 0.03;
  p.plain_mpki = 0.5;
  const double rho = 2.0, noise = 0.04;
  p.params["N_sf_blur"] = around(250);
  add(p, function("main",
                  {work(1000000),
                   item(make_nest({{"sf_blur", BoundSpec::param("N_sf_blur"), 2000},
                                   {"sf_blur_i", BoundSpec::constant(12), 100000}},
                                  rho, 400.0, noise)),
                   item(make_nest({{"sf_kp", BoundSpec::data(400, 60, 1), 2000},
                                   {"sf_kp_i", BoundSpec::constant(8), 100000}},
                                  rho, 400.0, noise, {Stmt{CallSite{"describe", 0.6, std::nullopt}}})),
                   work(500000)}));
  add(p, function("describe", {item(make_nest({{"sf_desc", BoundSpec::constant(16), 50000}},
                                               rho, 10.0, noise))}));
  return p;
}

}  // namespace

LoopNest make_nest(const std::vector<Level>& levels, double mpki, double cold, double noise,
                   std::vector<Stmt> innermost) {
  if (levels.empty()) throw std::invalid_argument("make_nest: no levels");
  Loop inner;
  for (std::size_t i = levels.size(); i-- > 0;) {
    Loop l;
    l.id = levels[i].id;
    l.bound = levels[i].bound;
    l.body.push_back({Work{levels[i].work}});
    if (i + 1 == levels.size()) {
      for (auto& s : innermost) l.body.push_back(std::move(s));
    } else {
      l.body.push_back({std::move(inner)});
    }
    inner = std::move(l);
  }
  LoopNest nest;
  nest.root = std::move(inner);
  nest.noise_frac = noise;
  nest.true_coeffs.push_back(cold);
  for (const auto& lv : levels) nest.true_coeffs.push_back(mpki / 1000.0 * static_cast<double>(lv.work));
  return nest;
}

std::string_view to_string(Regime r) { return r == Regime::Accurate ? "accurate" : "degraded"; }

Regime regime_from_string(std::string_view s) {
  if (s == "accurate") return Regime::Accurate;
  if (s == "degraded") return Regime::Degraded;
  throw std::invalid_argument("unknown regime '" + std::string(s) + "'");
}

std::vector<Program> reference_suite() {
  std::vector<Program> s;
  s.push_back(cipher_block());
  s.push_back(cipher_modexp());
  s.push_back(cipher_ecc());
  s.push_back(kernel_program("img_blur", 2.5, 0.03,
                             {{"bl_h", 300, 20, 80000}, {"bl_v", 300, 20, 80000}, {"bl_mix", 200, 10, 100000}}));
  s.push_back(kernel_program("img_resize", 2.0, 0.03,
                             {{"rs_x", 400, 16, 100000}, {"rs_y", 250, 16, 100000}}));
  s.push_back(kernel_program("img_sobel", 3.0, 0.03,
                             {{"sb_gx", 350, 12, 100000}, {"sb_gy", 350, 12, 100000}, {"sb_mag", 200, 20, 50000}}));
  s.push_back(kernel_program("img_histogram", 1.5, 0.03,
                             {{"hg_bin", 500, 8, 150000}, {"hg_eq", 300, 10, 100000}}));
  s.push_back(kernel_program("img_warp", 2.2, 0.03,
                             {{"wp_map", 300, 24, 60000}, {"wp_interp", 300, 24, 60000}}));
  s.push_back(kernel_program("img_texture", 1.5, 0.8,
                             {{"tx_seed", 400, 16, 100000}, {"tx_match", 400, 16, 100000},
                              {"tx_synth", 400, 16, 100000}, {"tx_blend", 400, 16, 100000},
                              {"tx_refine", 400, 16, 100000}}));
  s.push_back(kernel_program("vis_disparity", 2.0, 0.03,
                             {{"dp_ssd", 300, 16, 100000, true}, {"dp_corr", 200, 12, 100000, true},
                              {"dp_sad", 200, 10, 100000}}));
  s.push_back(kernel_program("vis_tracking", 2.0, 0.03,
                             {{"tr_grad", 250, 16, 100000, true}, {"tr_feat", 300, 12, 100000, true}}));
  s.push_back(vis_sift());
  s.push_back(kernel_program("vis_mser", 2.5, 0.03,
                             {{"ms_sort", 350, 10, 100000, true}, {"ms_grow", 250, 16, 80000, true}}));
  s.push_back(kernel_program("vis_svm", 1.8, 0.03,
                             {{"sv_kernel", 300, 20, 80000, true}, {"sv_train", 200, 12, 100000}}));
  return s;
}

std::vector<std::string> suite_victims(Regime r) {
  if (r == Regime::Accurate) return {"cipher_block", "cipher_modexp", "cipher_ecc"};
  return {"vis_disparity", "vis_tracking", "vis_sift"};
}

std::vector<std::string> suite_corunners(Regime r) {
  if (r == Regime::Accurate) return {"img_blur", "img_resize", "img_sobel", "img_histogram", "img_warp"};
  return {"vis_disparity", "vis_tracking", "vis_sift", "vis_mser", "vis_svm"};
}

std::string stress_program() { return "img_texture"; }

Program attacker_program(double instructions) {
  Program p;
  p.name = "attacker";
  p.sensitivity = 0.0;
  p.plain_mpki = 40.0;
  add(p, function("main", {work(std::max<std::int64_t>(1, std::llround(instructions)))}));
  return p;
}

Program nest_suite(std::uint64_t seed, int count, int precise_count, double noise) {
  Rng rng(seed);
  std::uniform_real_distribution<double> cold(200.0, 2000.0), coeff(0.5, 5.0);
  Program p;
  p.name = "nest_suite";
  p.sensitivity = 0.0;
  std::vector<FunctionItem> main_body;
  for (int i = 0; i < count; ++i) {
    int depth = 1 + i % 3;
    std::vector<Level> levels;
    for (int d = 0; d < depth; ++d) {
      std::string id = "n" + std::to_string(i) + "_" + std::to_string(d);
      BoundSpec b;
      if (d == 0 && i >= precise_count) {
        b = BoundSpec::data(16.0, 2.4, 1);
      } else {
        ParamDef def;
        def.value = 16;
        def.train = {8, 12, 16, 20, 24};
        def.run_lo = 8;
        def.run_hi = 28;
        p.params["P" + id] = def;
        b = BoundSpec::param("P" + id);
      }
      levels.push_back({id, b, 1000});
    }
    LoopNest nest = make_nest(levels, 1.0, 0.0, noise);
    nest.true_coeffs[0] = cold(rng);
    for (std::size_t k = 1; k < nest.true_coeffs.size(); ++k) nest.true_coeffs[k] = coeff(rng);
    std::string fn = "kernel" + std::to_string(i);
    add(p, function(fn, {item(std::move(nest))}));
    main_body.push_back(call(fn));
  }
  add(p, function("main", std::move(main_body)));
  return p;
}

}  // namespace biscuit

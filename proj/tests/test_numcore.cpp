#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "emogen/checkpoint.hpp"
#include "emogen/config.hpp"
#include "emogen/gradcheck.hpp"
#include "emogen/graph.hpp"
#include "emogen/rng.hpp"
#include "emogen/tensor.hpp"

using namespace emogen;
namespace fs = std::filesystem;

static const double kPi = std::acos(-1.0);

// Quadrature oracle for the vMF mean resultant length E[mu.x]: integrate
// cos(t) exp(kappa cos t) sin(t)^(d-2) over [0,pi] against the same weight
// without the cos factor. The exp is shifted by -kappa so large kappa stays
// in range; the shift cancels in the ratio.
static double vmf_mean_dot_oracle(int d, double kappa) {
  auto f = [&](double t, bool with_cos) {
    return (with_cos ? std::cos(t) : 1.0) * std::exp(kappa * (std::cos(t) - 1.0)) *
           std::pow(std::sin(t), d - 2);
  };
  const int n = 20000;
  double h = kPi / n, num = 0, den = 0;
  for (int i = 0; i <= n; ++i) {
    double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    num += w * f(i * h, true);
    den += w * f(i * h, false);
  }
  return num / den;
}

static std::vector<double> random_unit(int d, Rng& rng) {
  std::vector<double> mu;
  double n2 = 0;
  while (n2 < 1e-12) {
    mu = rng.normal_vec(d);
    n2 = 0;
    for (double x : mu) n2 += x * x;
  }
  double inv = 1.0 / std::sqrt(n2);
  for (double& x : mu) x *= inv;
  return mu;
}

TEST_CASE("tensor shape and access") {
  Tensor t({2, 3});
  REQUIRE(t.size() == 6);
  REQUIRE(t.rows() == 2);
  REQUIRE(t.cols() == 3);
  t.at(1, 2) = 5.0;
  REQUIRE(t.v[5] == 5.0);
  REQUIRE_THROWS_AS(Tensor({0, 3}), DimError);
  REQUIRE_THROWS_AS(Tensor({2}, {1.0, 2.0, 3.0}), DimError);
  REQUIRE(Tensor::scalar(4.0).v[0] == 4.0);
}

TEST_CASE("param store ordering and errors") {
  ParamStore store(7);
  store.add("b", {2});
  store.add("a", {3});
  REQUIRE(store.entry(0).name == "b");
  REQUIRE(store.entry(1).name == "a");
  REQUIRE_THROWS_AS(store.add("a", {1}), ContractError);
  REQUIRE(store.rng_seed() == 7);

  store.entry("b").grad.v = {1.0, -2.0};
  store.entry("a").grad.v = {0.0, 0.0, 0.0};
  REQUIRE(store.grad_sq_norm() == Catch::Approx(5.0));
  std::vector<double> before = store.value("b").v;
  store.sgd_step(0.5);
  REQUIRE(store.value("b").v[0] == Catch::Approx(before[0] - 0.5));
  REQUIRE(store.value("b").v[1] == Catch::Approx(before[1] + 1.0));

  store.entry("b").grad.v = {3.0, 4.0};
  store.clip_grads(1.0);
  REQUIRE(std::sqrt(store.grad_sq_norm()) == Catch::Approx(1.0));

  store.entry("b").grad.v = {1.0, 1.0};
  std::vector<double> held = store.value("b").v;
  store.sgd_step(0.1, "b");
  REQUIRE(store.value("b").v == held);

  store.zero_grads();
  REQUIRE(store.grad_sq_norm() == 0.0);
  REQUIRE(store.grads_finite());
}

TEST_CASE("rng stream is seed-determined and platform-pinned") {
  // first outputs of splitmix64 seeded with 0, from the reference
  // implementation by Vigna (prng.di.unimi.it/splitmix64.c)
  Rng r0(0);
  REQUIRE(r0.next_u64() == 0xE220A8397B1DCDAFull);
  REQUIRE(r0.next_u64() == 0x6E789E6AA1B965F4ull);
  REQUIRE(r0.next_u64() == 0x06C45D188009454Full);

  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
  Rng c(43);
  bool differs = false;
  Rng a2(42);
  for (int i = 0; i < 8 && !differs; ++i) differs = a2.next_u64() != c.next_u64();
  REQUIRE(differs);
}

TEST_CASE("rng moments") {
  Rng rng(11);
  const int n = 10000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  REQUIRE(std::fabs(s / n) < 0.05);
  REQUIRE(std::fabs(s2 / n - s / n * (s / n) - 1.0) < 0.07);

  double g = 0;
  for (int i = 0; i < n; ++i) g += rng.gamma(2.0);
  REQUIRE(std::fabs(g / n - 2.0) < 0.07);

  double bsum = 0;
  for (int i = 0; i < n; ++i) bsum += rng.beta(3.5, 3.5);
  REQUIRE(std::fabs(bsum / n - 0.5) < 0.01);
}

TEST_CASE("uniform interval sampling") {
  Rng rng(5);
  REQUIRE(sample_uniform_interval(0.0, 0.0, rng) == 0.0);

  double s = 0;
  for (int i = 0; i < 10000; ++i) {
    double x = sample_uniform_interval(2.0, 3.0, rng);
    REQUIRE(x >= 2.0);
    REQUIRE(x <= 3.0);
    s += x;
  }
  REQUIRE(std::fabs(s / 10000 - 2.5) < 0.02);

  Rng r1(7), r2(7);
  REQUIRE(sample_uniform_interval(0.0, 1.0, r1) == sample_uniform_interval(0.0, 1.0, r2));
  REQUIRE_THROWS_AS(sample_uniform_interval(1.0, 0.0, rng), ContractError);
}

TEST_CASE("vmf sampler output is unit length") {
  Rng rng(3);
  for (int d : {2, 3, 8}) {
    std::vector<double> mu(d, 0.0);
    mu[0] = 1.0;
    for (double kappa : {0.0, 0.5, 1.0, 10.0, 100.0, 1e6}) {
      for (int rep = 0; rep < 20; ++rep) {
        auto x = sample_vmf(mu, kappa, rng);
        double n2 = 0;
        for (double v : x) n2 += v * v;
        REQUIRE(std::fabs(std::sqrt(n2) - 1.0) < 1e-9);
      }
    }
  }
}

TEST_CASE("vmf kappa=0 is uniform on the sphere") {
  Rng rng(17);
  const int d = 8, n = 10000;
  std::vector<double> mu(d, 0.0);
  mu[d - 1] = 1.0;
  std::vector<double> mean(d, 0.0);
  for (int i = 0; i < n; ++i) {
    auto x = sample_vmf(mu, 0.0, rng);
    for (int j = 0; j < d; ++j) mean[j] += x[j] / n;
  }
  double norm = 0;
  for (double v : mean) norm += v * v;
  REQUIRE(std::sqrt(norm) < 0.05);
}

TEST_CASE("vmf high kappa concentrates at the mean") {
  Rng rng(19);
  std::vector<double> mu = random_unit(8, rng);
  for (int rep = 0; rep < 50; ++rep) {
    auto x = sample_vmf(mu, 1e6, rng);
    double dot = 0;
    for (int j = 0; j < 8; ++j) dot += x[j] * mu[j];
    REQUIRE(dot > 0.999);
  }
}

TEST_CASE("vmf mean resultant length matches quadrature oracle") {
  Rng rng(23);
  const int d = 8, n = 10000;
  for (double kappa : {1.0, 10.0}) {
    std::vector<double> mu = random_unit(d, rng);
    double dotsum = 0;
    for (int i = 0; i < n; ++i) {
      auto x = sample_vmf(mu, kappa, rng);
      for (int j = 0; j < d; ++j) dotsum += x[j] * mu[j];
    }
    REQUIRE(std::fabs(dotsum / n - vmf_mean_dot_oracle(d, kappa)) < 0.02);
  }
}

TEST_CASE("vmf input validation") {
  Rng rng(1);
  std::vector<double> zero(4, 0.0);
  REQUIRE_THROWS_AS(sample_vmf(zero, 1.0, rng), ContractError);
  std::vector<double> mu1{1.0};
  REQUIRE_THROWS_AS(sample_vmf(mu1, 1.0, rng), ContractError);
  std::vector<double> mu{1.0, 0.0};
  REQUIRE_THROWS_AS(sample_vmf(mu, -1.0, rng), ContractError);
}

TEST_CASE("graph forward oracles") {
  ParamStore store;
  Graph g(store);

  Expr u = g.log_softmax(g.input(Tensor({3}, {0.0, 0.0, 0.0})));
  for (int i = 0; i < 3; ++i)
    REQUIRE(g.value(u).v[i] == Catch::Approx(-std::log(3.0)).epsilon(1e-12));

  Expr x = g.input(Tensor({4}, {1.0, -2.0, 0.5, 3.0}));
  Expr z = g.add(x, g.input(Tensor({4}, {0.0, 0.0, 0.0, 0.0})));
  REQUIRE(g.value(z).v == g.value(x).v);

  Expr s = g.sum(g.mul(x, x));
  REQUIRE(g.value_scalar(s) == Catch::Approx(1 + 4 + 0.25 + 9));
}

TEST_CASE("tanh derivative at zero is one") {
  ParamStore store;
  store.add("x", {1});
  Graph g(store);
  Expr y = g.sum(g.tanh(g.param("x")));
  g.backward(y);
  REQUIRE(store.entry("x").grad.v[0] == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("log softmax exponentiates to a distribution") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    ParamStore store;
    Graph g(store);
    Tensor logits({6});
    for (auto& v : logits.v) v = rng.uniform(-5.0, 5.0);
    Expr ls = g.log_softmax(g.input(logits));
    double total = 0;
    for (double v : g.value(ls).v) total += std::exp(v);
    REQUIRE(std::fabs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("masked log softmax zeros excluded entries") {
  Rng rng(9);
  ParamStore store;
  Graph g(store);
  Tensor logits({6});
  for (auto& v : logits.v) v = rng.uniform(-3.0, 3.0);
  std::vector<char> support{1, 0, 1, 0, 0, 1};
  Expr ls = g.masked_log_softmax(g.input(logits), support);
  double total = 0;
  for (size_t i = 0; i < support.size(); ++i) {
    double p = std::exp(g.value(ls).v[i]);
    if (support[i])
      total += p;
    else
      REQUIRE(p == 0.0);
  }
  REQUIRE(std::fabs(total - 1.0) < 1e-9);
  REQUIRE_THROWS_AS(g.masked_log_softmax(g.input(logits), std::vector<char>(6, 0)), ContractError);
}

TEST_CASE("quadratic form gradient matches analytic oracle") {
  // loss = x . (A x); gradient is (A + A^T) x
  Tensor A({3, 3}, {2.0, -1.0, 0.5, 0.0, 1.5, -0.25, 1.0, 0.0, 3.0});
  ParamStore store;
  Rng rng(31);
  store.add_uniform("x", {3}, 1.0, rng);
  auto build = [&](Graph& g) {
    Expr x = g.param("x");
    return g.sum(g.mul(x, g.matmul(g.input(A), x)));
  };

  store.zero_grads();
  {
    Graph g(store);
    g.backward(build(g));
  }
  const auto& x = store.value("x").v;
  for (int i = 0; i < 3; ++i) {
    double expect = 0;
    for (int j = 0; j < 3; ++j) expect += (A.at(i, j) + A.at(j, i)) * x[j];
    REQUIRE(store.entry("x").grad.v[i] == Catch::Approx(expect).epsilon(1e-10));
  }
  REQUIRE(finite_diff_check(store, build) < 1e-6);
}

TEST_CASE("constant loss has zero gradient error") {
  ParamStore store;
  Rng rng(5);
  store.add_uniform("x", {4}, 1.0, rng);
  auto build = [](Graph& g) { return g.input_scalar(2.5); };
  REQUIRE(finite_diff_check(store, build) == 0.0);
}

TEST_CASE("nondeterministic loss builder is rejected") {
  ParamStore store;
  store.add("x", {1});
  int calls = 0;
  auto build = [&](Graph& g) { return g.input_scalar(static_cast<double>(calls++)); };
  REQUIRE_THROWS_AS(finite_diff_check(store, build), ContractError);
}

// one randomized gradcheck per op family, 20 seeds each, dims <= 8
TEST_CASE("finite differences validate every op") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);

    SECTION("matvec + tanh, seed " + std::to_string(seed)) {
      ParamStore store;
      store.add_uniform("W", {3, 4}, 0.8, rng);
      store.add_uniform("x", {4}, 0.8, rng);
      auto build = [](Graph& g) {
        return g.sum(g.tanh(g.matmul(g.param("W"), g.param("x"))));
      };
      REQUIRE(finite_diff_check(store, build) < 1e-4);
    }

    SECTION("matmat + sigmoid, seed " + std::to_string(seed)) {
      ParamStore store;
      store.add_uniform("A", {2, 3}, 0.8, rng);
      store.add_uniform("B", {3, 2}, 0.8, rng);
      auto build = [](Graph& g) {
        return g.sum(g.sigmoid(g.matmul(g.param("A"), g.param("B"))));
      };
      REQUIRE(finite_diff_check(store, build) < 1e-4);
    }

    SECTION("add sub mul affine, seed " + std::to_string(seed)) {
      ParamStore store;
      store.add_uniform("a", {5}, 1.0, rng);
      store.add_uniform("b", {5}, 1.0, rng);
      auto build = [](Graph& g) {
        Expr a = g.param("a"), b = g.param("b");
        return g.sum(g.mul(g.add(a, b), g.affine(g.sub(a, b), 1.7, -0.3)));
      };
      REQUIRE(finite_diff_check(store, build) < 1e-4);
    }

    SECTION("concat + row + matvec, seed " + std::to_string(seed)) {
      ParamStore store;
      store.add_uniform("W", {4, 5}, 0.8, rng);
      store.add_uniform("a", {2}, 1.0, rng);
      store.add_uniform("b", {3}, 1.0, rng);
      auto build = [](Graph& g) {
        Expr cat = g.concat({g.param("a"), g.param("b")});
        Expr through = g.sum(g.tanh(g.matmul(g.param("W"), cat)));
        Expr picked = g.sum(g.tanh(g.row(g.param("W"), 2)));
        return g.add(through, picked);
      };
      REQUIRE(finite_diff_check(store, build) < 1e-4);
    }

    SECTION("add_n and max_n, seed " + std::to_string(seed)) {
      ParamStore store;
      // keep elementwise values separated so max_n has no near-ties
      for (const char* name : {"p", "q", "r"}) {
        Tensor& t = store.add(name, {4});
        for (auto& v : t.v) {
          v = rng.uniform(-1.0, 1.0);
        }
      }
      bool ok = false;
      while (!ok) {
        ok = true;
        auto& P = store.value("p").v;
        auto& Q = store.value("q").v;
        auto& R = store.value("r").v;
        for (size_t i = 0; i < P.size() && ok; ++i)
          if (std::fabs(P[i] - Q[i]) < 1e-3 || std::fabs(P[i] - R[i]) < 1e-3 ||
              std::fabs(Q[i] - R[i]) < 1e-3)
            ok = false;
        if (!ok)
          for (const char* name : {"p", "q", "r"})
            for (auto& v : store.value(name).v) v = rng.uniform(-1.0, 1.0);
      }
      auto build = [](Graph& g) {
        std::vector<Expr> parts{g.param("p"), g.param("q"), g.param("r")};
        return g.add(g.sum(g.add_n(parts)), g.sum(g.max_n(parts)));
      };
      REQUIRE(finite_diff_check(store, build) < 1e-4);
    }

    SECTION("log softmax pick, seed " + std::to_string(seed)) {
      ParamStore store;
      store.add_uniform("x", {6}, 2.0, rng);
      auto build = [](Graph& g) { return g.pick(g.log_softmax(g.param("x")), 2); };
      REQUIRE(finite_diff_check(store, build) < 1e-4);
    }

    SECTION("masked log softmax pick, seed " + std::to_string(seed)) {
      ParamStore store;
      store.add_uniform("x", {6}, 2.0, rng);
      std::vector<char> support{1, 0, 1, 1, 0, 1};
      auto build = [support](Graph& g) {
        return g.pick(g.masked_log_softmax(g.param("x"), support), 3);
      };
      REQUIRE(finite_diff_check(store, build) < 1e-4);
    }
  }
}

TEST_CASE("gru step gradcheck on a 4-dim toy") {
  Rng rng(41);
  ParamStore store;
  const int d = 4;
  for (const char* n : {"Wz", "Uz", "Wr", "Ur", "Wn", "Un"})
    store.add_uniform(n, {d, d}, 0.5, rng);
  for (const char* n : {"bz", "br", "bn"}) store.add_uniform(n, {d}, 0.5, rng);
  store.add_uniform("x", {d}, 0.5, rng);
  store.add_uniform("h", {d}, 0.5, rng);

  auto build = [d](Graph& g) {
    Expr x = g.param("x"), h = g.param("h");
    Expr z = g.sigmoid(g.add(g.add(g.matmul(g.param("Wz"), x), g.matmul(g.param("Uz"), h)),
                             g.param("bz")));
    Expr r = g.sigmoid(g.add(g.add(g.matmul(g.param("Wr"), x), g.matmul(g.param("Ur"), h)),
                             g.param("br")));
    Expr n = g.tanh(g.add(g.add(g.matmul(g.param("Wn"), x), g.matmul(g.param("Un"), g.mul(r, h))),
                          g.param("bn")));
    Expr one = g.input(Tensor(std::vector<int>{d}, std::vector<double>(d, 1.0)));
    Expr hn = g.add(g.mul(g.sub(one, z), n), g.mul(z, h));
    return g.sum(g.mul(hn, hn));
  };
  REQUIRE(finite_diff_check(store, build) < 1e-4);
}

TEST_CASE("backward accumulation is run-to-run identical") {
  Rng rng(77);
  ParamStore store;
  store.add_uniform("W", {4, 4}, 0.7, rng);
  store.add_uniform("x", {4}, 0.7, rng);
  auto run = [&]() {
    store.zero_grads();
    Graph g(store);
    Expr h = g.tanh(g.matmul(g.param("W"), g.param("x")));
    Expr loss = g.pick(g.log_softmax(h), 1);
    g.backward(loss);
    std::vector<double> flat;
    for (const auto& e : store.entries()) flat.insert(flat.end(), e.grad.v.begin(), e.grad.v.end());
    return flat;
  };
  auto g1 = run();
  auto g2 = run();
  REQUIRE(g1 == g2);
}

TEST_CASE("unused parameters receive zero gradient") {
  ParamStore store;
  Rng rng(13);
  store.add_uniform("used", {3}, 1.0, rng);
  store.add_uniform("idle", {3}, 1.0, rng);
  store.zero_grads();
  Graph g(store);
  g.param("idle");  // on the tape but not on the loss path
  g.backward(g.sum(g.param("used")));
  for (double v : store.entry("idle").grad.v) REQUIRE(v == 0.0);
  for (double v : store.entry("used").grad.v) REQUIRE(v == 1.0);
}

TEST_CASE("non-finite values abort the op") {
  ParamStore store;
  Graph g(store);
  REQUIRE_THROWS_AS(g.input(Tensor({1}, {std::nan("")})), NumericError);
  Expr big = g.input_scalar(1e308);
  REQUIRE_THROWS_AS(g.mul(big, big), NumericError);
}

TEST_CASE("expressions cannot cross graphs") {
  ParamStore store;
  Graph g1(store), g2(store);
  Expr a = g1.input_scalar(1.0);
  REQUIRE_THROWS_AS(g2.add(a, a), ContractError);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  fs::path dir = fs::temp_directory_path() / "emogen_numcore_ckpt";
  fs::create_directories(dir);
  std::string prefix = (dir / "model").string();

  Rng rng(99);
  ParamStore store(424242);
  store.add_uniform("alpha", {2, 3}, 3.0, rng);
  store.add_uniform("beta", {4}, 3.0, rng);
  ordered_json meta;
  meta["k"] = 7;
  meta["note"] = "round trip";
  meta["lr"] = 0.0625;
  save_checkpoint(prefix, store, meta);

  ordered_json meta2;
  ParamStore loaded = load_checkpoint(prefix, &meta2);
  REQUIRE(loaded.size() == store.size());
  REQUIRE(loaded.rng_seed() == store.rng_seed());
  REQUIRE(meta2 == meta);
  for (int i = 0; i < static_cast<int>(store.size()); ++i) {
    REQUIRE(loaded.entry(i).name == store.entry(i).name);
    REQUIRE(loaded.entry(i).value.shape == store.entry(i).value.shape);
    REQUIRE(std::memcmp(loaded.entry(i).value.v.data(), store.entry(i).value.v.data(),
                        store.entry(i).value.v.size() * sizeof(double)) == 0);
  }

  // saving the loaded store again reproduces both files byte for byte
  std::string prefix2 = (dir / "model2").string();
  save_checkpoint(prefix2, loaded, meta2);
  for (const char* ext : {".json", ".bin"}) {
    std::ifstream f1(prefix + ext, std::ios::binary), f2(prefix2 + ext, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(s1 == s2);
  }
  fs::remove_all(dir);
}

TEST_CASE("checkpoint rejects damaged files") {
  fs::path dir = fs::temp_directory_path() / "emogen_numcore_ckpt_bad";
  fs::create_directories(dir);
  std::string prefix = (dir / "model").string();
  ParamStore store;
  Rng rng(1);
  store.add_uniform("w", {4}, 1.0, rng);
  save_checkpoint(prefix, store);

  fs::resize_file(prefix + ".bin", 8);
  REQUIRE_THROWS_AS(load_checkpoint(prefix), DataError);

  std::ofstream(prefix + ".json") << "{\"format\": \"other\"}\n";
  REQUIRE_THROWS_AS(load_checkpoint(prefix), DataError);

  REQUIRE_THROWS_AS(load_checkpoint((dir / "missing").string()), DataError);
  fs::remove_all(dir);
}

TEST_CASE("config file parsing") {
  fs::path dir = fs::temp_directory_path() / "emogen_numcore_cfg";
  fs::create_directories(dir);
  std::string path = (dir / "a.cfg").string();
  std::ofstream(path) << "# comment\n"
                         "\n"
                         "  lda.k = 8\n"
                         "lr=0.05\n"
                         "name = three clause\n"
                         "edit = true\n";
  Config c = Config::from_file(path);
  REQUIRE(c.get_int("lda.k", 0) == 8);
  REQUIRE(c.get_double("lr", 0.0) == Catch::Approx(0.05));
  REQUIRE(c.get_str("name", "") == "three clause");
  REQUIRE(c.get_bool("edit", false));
  REQUIRE(c.get_int("absent", 12) == 12);
  REQUIRE_FALSE(c.has("absent"));
  REQUIRE_THROWS_AS(c.get_int("name", 0), UsageError);
  REQUIRE_THROWS_AS(c.get_bool("lr", false), UsageError);

  std::string bad = (dir / "b.cfg").string();
  std::ofstream(bad) << "just a line without equals\n";
  REQUIRE_THROWS_AS(Config::from_file(bad), UsageError);
  REQUIRE_THROWS_AS(Config::from_file((dir / "missing.cfg").string()), UsageError);
  fs::remove_all(dir);
}

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "doctest.h"
#include "havana/nets.hpp"
#include "oracles.hpp"

using namespace havana;
using oracles::PrecisionGuard;

namespace {

std::filesystem::path temp_file(const std::string& stem) {
  static int counter = 0;
  return std::filesystem::temp_directory_path() /
         (stem + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
}

ModelDims small_dims() {
  ModelDims d;
  d.feat = 6;
  d.classes = 3;
  return d.resolved();
}

}  // namespace

TEST_CASE("dims resolve to H=D, L=H, M=max(1, L/4)") {
  ModelDims d;
  d.feat = 16;
  d.classes = 5;
  ModelDims r = d.resolved();
  CHECK(r.hidden == 16);
  CHECK(r.latent == 16);
  CHECK(r.hvd == 4);

  d.latent = 2;
  r = d.resolved();
  CHECK(r.hvd == 1);  // 2/4 truncates to 0, floored at 1

  d.hidden = 32;
  d.latent = 0;
  d.hvd = 0;
  r = d.resolved();
  CHECK(r.latent == 32);
  CHECK(r.hvd == 8);

  ModelDims bad;
  bad.classes = 2;
  CHECK_THROWS_AS(bad.resolved().validate(), UsageError);  // feat 0
  ModelDims inverted = small_dims();
  inverted.hvd = inverted.latent + 1;
  CHECK_THROWS_AS(inverted.validate(), UsageError);
}

TEST_CASE("init is deterministic with He-scaled weights and zero biases") {
  PrecisionGuard guard(Precision::f64);
  ModelDims d;
  d.feat = 40;
  d.classes = 7;
  Rng r1(123), r2(123), r3(124);
  HavanaModel a = HavanaModel::init(d, true, r1);
  HavanaModel b = HavanaModel::init(d, true, r2);
  HavanaModel c = HavanaModel::init(d, true, r3);

  auto pa = a.named_params();
  auto pb = b.named_params();
  auto pc = c.named_params();
  REQUIRE(pa.size() == 24);
  bool same = true, diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    same = same && oracles::bitwise_equal(*pa[i].second, *pb[i].second);
    diff = diff || !oracles::bitwise_equal(*pa[i].second, *pc[i].second);
  }
  CHECK(same);
  CHECK(diff);

  // bias vectors are exactly zero
  for (auto& [name, tensor] : pa) {
    if (name.size() >= 2 && name.substr(name.size() - 2) == ".b") {
      for (std::size_t i = 0; i < tensor->numel(); ++i) CHECK((*tensor)[i] == 0.0);
    }
  }

  // sample variance of a large weight matrix is close to 2/fan_in
  const Tensor& w = a.enc_trunk.W;  // fan_in = 40
  double m = mean(w).value();
  double var = 0.0;
  for (std::size_t i = 0; i < w.numel(); ++i) var += (w[i] - m) * (w[i] - m);
  var /= static_cast<double>(w.numel() - 1);
  CHECK(var == doctest::Approx(2.0 / 40.0).epsilon(0.15));

  // log-sigma heads start entirely at zero, so sigma is 1 for any input
  for (const Tensor* head : {&a.enc_logsig.W, &a.hvd_enc_logsig.W, &a.hvd_dec_logsig.W}) {
    for (std::size_t i = 0; i < head->numel(); ++i) CHECK((*head)[i] == 0.0);
  }
  Rng r4(55);
  HavanaModel fresh = HavanaModel::init(d, false, r4);
  Rng xr(56);
  Tensor probe = randn(xr, {3, 40});
  Tensor ls0 = infer_logsigma(fresh, probe);
  for (std::size_t i = 0; i < ls0.numel(); ++i) CHECK(ls0[i] == 0.0);

  // stable naming scheme, paired W/b
  CHECK(pa[0].first == "enc.trunk.W");
  CHECK(pa[1].first == "enc.trunk.b");
  CHECK(pa[4].first == "enc.logsig.W");
  CHECK(pa[22].first == "cls.W");
  CHECK(pa[23].first == "cls.b");

  CHECK(a.inference_param_count() ==
        (d.feat + 1) * a.dims.hidden + (a.dims.hidden + 1) * a.dims.latent);
}

TEST_CASE("one_hot encodes labels and rejects out-of-range ones") {
  PrecisionGuard guard(Precision::f64);
  Tensor y = one_hot({2, 0}, 3);
  REQUIRE(y.shape() == std::vector<std::size_t>{2, 3});
  CHECK(y.at(0, 2) == 1.0);
  CHECK(y.at(0, 0) == 0.0);
  CHECK(y.at(1, 0) == 1.0);
  CHECK(sum(y).value() == 2.0);
  CHECK_THROWS_AS(one_hot({3}, 3), DataError);
  CHECK_THROWS_AS(one_hot({-1}, 3), DataError);
}

TEST_CASE("vnae_forward wiring, covariance constraint, and gradients") {
  PrecisionGuard guard(Precision::f64);
  ModelDims d = small_dims();
  Rng rng(55);
  Rng data_rng(56);
  Tensor x = randn(data_rng, {4, d.feat});
  Tensor eps = randn(data_rng, {4, d.latent});

  SUBCASE("constrained: log_sigma is a constant zero leaf") {
    Rng init_rng(55);
    HavanaModel model = HavanaModel::init(d, true, init_rng);
    Tape t;
    ModelVars vars = push_params(t, model);
    VnaeVars out = vnae_forward(t, vars, model, t.leaf(x), eps);

    const Tensor& ls = t.value(out.z.log_sigma);
    REQUIRE(ls.shape() == std::vector<std::size_t>{4, d.latent});
    for (std::size_t i = 0; i < ls.numel(); ++i) CHECK(ls[i] == 0.0);

    // sigma = 1 everywhere, so the sample is mu + eps exactly
    const Tensor& mu = t.value(out.z.mu);
    const Tensor& zs = t.value(out.z_sample);
    for (std::size_t i = 0; i < zs.numel(); ++i)
      CHECK(zs[i] == doctest::Approx(mu[i] + eps[i]).epsilon(1e-12));

    t.backward(sum(mul(out.x_recon, out.x_recon)));
    Tensor g_logsig = t.grad(vars.enc_logsig.W);
    for (std::size_t i = 0; i < g_logsig.numel(); ++i) CHECK(g_logsig[i] == 0.0);
    double g_mu_norm = sum(mul(t.grad(vars.enc_mu.W), t.grad(vars.enc_mu.W))).value();
    CHECK(g_mu_norm > 0.0);
  }

  SUBCASE("unconstrained: the log-sigma head is live") {
    Rng init_rng(55);
    HavanaModel model = HavanaModel::init(d, false, init_rng);
    Tape t;
    ModelVars vars = push_params(t, model);
    VnaeVars out = vnae_forward(t, vars, model, t.leaf(x), eps);
    t.backward(sum(mul(out.z_sample, out.z_sample)));
    double g = sum(mul(t.grad(vars.enc_logsig.W), t.grad(vars.enc_logsig.W))).value();
    CHECK(g > 0.0);
  }

  SUBCASE("shape contracts") {
    Rng init_rng(55);
    HavanaModel model = HavanaModel::init(d, true, init_rng);
    Tape t;
    ModelVars vars = push_params(t, model);
    Tensor bad_eps = Tensor::zeros({4, d.latent + 1});
    CHECK_THROWS_AS(vnae_forward(t, vars, model, t.leaf(x), bad_eps), DataError);
    Tensor bad_x = Tensor::zeros({4, d.feat + 2});
    CHECK_THROWS_AS(vnae_forward(t, vars, model, t.leaf(bad_x), eps), DataError);
  }
}

TEST_CASE("batch forward equals per-item forward") {
  PrecisionGuard guard(Precision::f32);  // production precision
  ModelDims d = small_dims();
  Rng init_rng(9);
  HavanaModel model = HavanaModel::init(d, true, init_rng);
  Rng data_rng(10);
  Tensor x = randn(data_rng, {3, d.feat});
  Tensor eps = randn(data_rng, {3, d.latent});

  Tape t;
  ModelVars vars = push_params(t, model);
  VnaeVars batch = vnae_forward(t, vars, model, t.leaf(x), eps);

  for (std::size_t i = 0; i < 3; ++i) {
    Tape ti;
    ModelVars vi = push_params(ti, model);
    Tensor xi = Tensor::from(row(x, i).data(), {1, d.feat});
    Tensor ei = Tensor::from(row(eps, i).data(), {1, d.latent});
    VnaeVars single = vnae_forward(ti, vi, model, ti.leaf(xi), ei);
    Tensor want_mu = ti.value(single.z.mu);
    Tensor got_mu = row(t.value(batch.z.mu), i);
    Tensor want_rec = ti.value(single.x_recon);
    Tensor got_rec = row(t.value(batch.x_recon), i);
    for (std::size_t j = 0; j < got_mu.numel(); ++j)
      CHECK(std::abs(got_mu[j] - want_mu[j]) < 1e-6);
    for (std::size_t j = 0; j < got_rec.numel(); ++j)
      CHECK(std::abs(got_rec[j] - want_rec[j]) < 1e-6);
  }
}

TEST_CASE("hvd_forward shapes and one-hot validation") {
  PrecisionGuard guard(Precision::f64);
  ModelDims d = small_dims();
  Rng init_rng(77);
  HavanaModel model = HavanaModel::init(d, true, init_rng);
  Rng data_rng(78);
  Tensor x = randn(data_rng, {4, d.feat});
  Tensor eps_z = randn(data_rng, {4, d.latent});
  Tensor eps_v = randn(data_rng, {4, d.hvd});
  Tensor y = one_hot({0, 1, 2, 1}, d.classes);

  Tape t;
  ModelVars vars = push_params(t, model);
  VnaeVars vnae = vnae_forward(t, vars, model, t.leaf(x), eps_z);
  HvdVars hvd = hvd_forward(t, vars, model, vnae.z_sample, y, eps_v);

  CHECK(t.value(hvd.v.mu).shape() == std::vector<std::size_t>{4, d.hvd});
  CHECK(t.value(hvd.v_sample).shape() == std::vector<std::size_t>{4, d.hvd});
  CHECK(t.value(hvd.z_recon.mu).shape() == std::vector<std::size_t>{4, d.latent});
  CHECK(t.value(hvd.z_recon.log_sigma).shape() == std::vector<std::size_t>{4, d.latent});

  Tensor not_one_hot = y;
  not_one_hot.mutable_data()[0] = 0.5;
  CHECK_THROWS_AS(hvd_forward(t, vars, model, vnae.z_sample, not_one_hot, eps_v), DataError);
  Tensor two_hot = y;
  two_hot.mutable_data()[1] = 1.0;
  CHECK_THROWS_AS(hvd_forward(t, vars, model, vnae.z_sample, two_hot, eps_v), DataError);
  CHECK_THROWS_AS(hvd_forward(t, vars, model, vnae.z_sample, y, Tensor::zeros({4, d.hvd + 1})),
                  DataError);

  Var logits = classifier_logits(vars, vnae.z.mu);
  CHECK(t.value(logits).shape() == std::vector<std::size_t>{4, d.classes});
}

TEST_CASE("inference path matches the tape encoder") {
  PrecisionGuard guard(Precision::f64);
  ModelDims d = small_dims();
  Rng init_rng(31);
  HavanaModel model = HavanaModel::init(d, false, init_rng);
  Rng data_rng(32);
  Tensor x = randn(data_rng, {5, d.feat});

  Tensor mu = infer_embedding(model, x);
  REQUIRE(mu.shape() == std::vector<std::size_t>{5, d.latent});

  // same values as the tape forward's z.mu
  Tape t;
  ModelVars vars = push_params(t, model);
  VnaeVars out = vnae_forward(t, vars, model, t.leaf(x), Tensor::zeros({5, d.latent}));
  CHECK(oracles::max_abs_diff(mu, t.value(out.z.mu)) < 1e-12);

  // rank-1 input round-trips through a one-row batch
  Tensor x0 = row(x, 0);
  Tensor mu0 = infer_embedding(model, x0);
  REQUIRE(mu0.rank() == 1);
  CHECK(oracles::max_abs_diff(mu0, row(mu, 0)) < 1e-12);

  // manual recomputation with raw ops
  Tensor h = relu(add(matmul(x, model.enc_trunk.W), model.enc_trunk.b));
  Tensor manual = add(matmul(h, model.enc_mu.W), model.enc_mu.b);
  CHECK(oracles::max_abs_diff(mu, manual) == 0.0);

  Tensor ls = infer_logsigma(model, x);
  Tensor manual_ls = add(matmul(h, model.enc_logsig.W), model.enc_logsig.b);
  CHECK(oracles::max_abs_diff(ls, manual_ls) == 0.0);

  HavanaModel cc = model;
  cc.covariance_constraint = true;
  Tensor zero_ls = infer_logsigma(cc, x);
  for (std::size_t i = 0; i < zero_ls.numel(); ++i) CHECK(zero_ls[i] == 0.0);

  CHECK_THROWS_AS(infer_embedding(model, Tensor::zeros({5, d.feat + 1})), DataError);
  CHECK_THROWS_AS(infer_embedding(model, Tensor::zeros({2, 2, 2})), DataError);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

TEST_CASE("checkpoint byte layout matches the documented format") {
  PrecisionGuard guard(Precision::f32);
  auto path = temp_file("hvck_layout");

  std::vector<std::pair<std::string, Tensor>> entries;
  entries.emplace_back("a.W", Tensor::matrix(1, 2, {1.5, -2.25}));
  save_checkpoint(path.string(), entries);

  // expected bytes, assembled by hand
  std::vector<unsigned char> want = {'H', 'V', 'C', 'K', 1, 0, 0, 0,
                                     3, 0, 0, 0, 'a', '.', 'W',
                                     2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0};
  auto push_f32 = [&want](float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int k = 0; k < 4; ++k) want.push_back(static_cast<unsigned char>((bits >> (8 * k)) & 0xff));
  };
  push_f32(1.5f);
  push_f32(-2.25f);

  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> got((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  CHECK(got == want);

  auto loaded = load_checkpoint(path.string());
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].first == "a.W");
  CHECK(loaded[0].second.shape() == std::vector<std::size_t>{1, 2});
  CHECK(loaded[0].second[0] == 1.5);
  CHECK(loaded[0].second[1] == -2.25);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint round-trip is bit-exact in f32 mode") {
  PrecisionGuard guard(Precision::f32);
  ModelDims d = small_dims();
  Rng rng(1001);
  HavanaModel model = HavanaModel::init(d, true, rng);

  auto path = temp_file("hvck_model");
  save_model(path.string(), model);
  HavanaModel back = load_model(path.string());

  CHECK(back.dims.feat == d.feat);
  CHECK(back.dims.hidden == d.hidden);
  CHECK(back.dims.latent == d.latent);
  CHECK(back.dims.hvd == d.hvd);
  CHECK(back.dims.classes == d.classes);
  CHECK(back.covariance_constraint == true);

  auto pa = model.named_params();
  auto pb = back.named_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(oracles::bitwise_equal(*pa[i].second, *pb[i].second));
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint corruption reports offsets and names") {
  PrecisionGuard guard(Precision::f32);
  ModelDims d = small_dims();
  Rng rng(7);
  HavanaModel model = HavanaModel::init(d, false, rng);
  auto path = temp_file("hvck_corrupt");
  save_model(path.string(), model);

  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
    f.close();
    CHECK_THROWS_WITH_AS(load_model(path.string()),
                         doctest::Contains("bad magic at byte 0"), DataError);
  }

  SUBCASE("unsupported version") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    unsigned char v2[4] = {2, 0, 0, 0};
    f.write(reinterpret_cast<char*>(v2), 4);
    f.close();
    CHECK_THROWS_WITH_AS(load_model(path.string()),
                         doctest::Contains("unsupported checkpoint version"), DataError);
  }

  SUBCASE("truncated") {
    auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 3);
    CHECK_THROWS_WITH_AS(load_model(path.string()), doctest::Contains("truncated"), DataError);
  }

  SUBCASE("missing entry") {
    auto entries = load_checkpoint(path.string());
    entries.erase(entries.begin());  // drop enc.trunk.W
    CHECK_THROWS_WITH_AS(model_from_entries(entries, path.string()),
                         doctest::Contains("missing entry enc.trunk.W"), DataError);
  }

  SUBCASE("shape mismatch") {
    auto entries = load_checkpoint(path.string());
    for (auto& [name, tensor] : entries) {
      if (name == "cls.b") tensor = Tensor::zeros({d.classes + 1});
    }
    CHECK_THROWS_WITH_AS(model_from_entries(entries, path.string()),
                         doctest::Contains("cls.b"), DataError);
  }

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_model("/nonexistent/path/model.hvck"), DataError);
  }

  std::filesystem::remove(path);
}

TEST_CASE("f64 models survive the f32 checkpoint within rounding error") {
  PrecisionGuard guard(Precision::f64);
  ModelDims d = small_dims();
  Rng rng(404);
  HavanaModel model = HavanaModel::init(d, true, rng);
  auto path = temp_file("hvck_f64");
  save_model(path.string(), model);
  HavanaModel back = load_model(path.string());
  auto pa = model.named_params();
  auto pb = back.named_params();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const Tensor& a = *pa[i].second;
    const Tensor& b = *pb[i].second;
    for (std::size_t j = 0; j < a.numel(); ++j) {
      CHECK(b[j] == static_cast<double>(static_cast<float>(a[j])));
    }
  }
  std::filesystem::remove(path);
}

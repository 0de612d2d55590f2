#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "mae/errors.hpp"
#include "mae/model.hpp"
#include "model_oracles.hpp"
#include "oracles.hpp"

using namespace mae;

namespace {

ModelConfig small_config(DecoderKind dec, PriorKind prior = PriorKind::kStandardNormal) {
  ModelConfig c;
  c.data_dim = 9;
  c.latent_dim = 4;
  c.encoder_hidden = {16, 16};
  c.decoder_hidden = {16};
  c.decoder = dec;
  c.prior = prior;
  c.flow_hidden = 8;
  return c;
}

std::vector<double> random_binary(std::size_t n, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  std::vector<double> x(n);
  for (auto& v : x) v = coin(rng) ? 1.0 : 0.0;
  return x;
}

}  // namespace

TEST_CASE("made connectivity is strictly autoregressive") {
  for (bool reversed : {false, true}) {
    std::vector<std::size_t> order(7);
    for (std::size_t p = 0; p < 7; ++p) order[p] = reversed ? 6 - p : p;
    const MadeMasks m = MadeMasks::build(order, {13, 5});
    const Tensor conn = m.connectivity();
    for (std::size_t j = 0; j < 7; ++j) {
      for (std::size_t i = 0; i < 7; ++i) {
        const bool allowed = m.input_degrees[j] < m.input_degrees[i];
        if (!allowed) CHECK(conn.at(j, i) == 0.0);
      }
    }
    // The last unit in the ordering depends on every earlier one.
    const std::size_t last = order.back();
    for (std::size_t p = 0; p + 1 < 7; ++p) CHECK(conn.at(order[p], last) == 1.0);
  }
  CHECK_THROWS_AS(MadeMasks::build({0, 0, 1}, {4}), ContractError);
}

TEST_CASE("autoregressive logits ignore current and later pixels") {
  for (bool direct : {false, true}) {
  CAPTURE(direct);
  std::mt19937_64 rng(1);
  ModelConfig c = small_config(DecoderKind::kAutoregressive);
  c.decoder_direct = direct;
  const VaeModel model = VaeModel::create(c, 3);
  const auto z = oracle::random_tensor({4}, rng).values();
  const auto x = random_binary(9, rng);
  const auto base = decode_autoregressive(model, z, x);
  for (std::size_t j = 0; j < 9; ++j) {
    auto xp = x;
    xp[j] = 1.0 - xp[j];
    const auto moved = decode_autoregressive(model, z, xp);
    for (std::size_t i = 0; i <= j; ++i) CHECK(moved[i] == base[i]);
    bool later_changed = false;
    for (std::size_t i = j + 1; i < 9; ++i) later_changed = later_changed || moved[i] != base[i];
    if (j + 1 < 9) CHECK(later_changed);
  }
  }
}

TEST_CASE("three-pixel autoregressive decoder by hand") {
  ModelConfig c;
  c.data_dim = 3;
  c.latent_dim = 2;
  c.encoder_hidden = {4};
  c.decoder_hidden = {4};
  c.decoder = DecoderKind::kAutoregressive;
  const VaeModel model = VaeModel::create(c, 17);
  const auto& p = model.params();

  // Degrees: inputs 1,2,3; hidden k mod 3.
  const int in_deg[3] = {1, 2, 3};
  const int hid_deg[4] = {0, 1, 2, 0};
  const std::vector<double> z{0.3, -0.7};
  const std::vector<double> x{1, 0, 1};
  double h[4];
  for (int b = 0; b < 4; ++b) {
    double s = p.at("dec.b0")[b];
    for (int a = 0; a < 3; ++a) s += hid_deg[b] >= in_deg[a] ? x[a] * p.at("dec.w0").at(a, b) : 0.0;
    for (int k = 0; k < 2; ++k) s += z[k] * p.at("dec.v0").at(k, b);
    h[b] = std::tanh(s);
  }
  const auto logits = decode_autoregressive(model, z, x);
  for (int i = 0; i < 3; ++i) {
    double s = p.at("dec.b_out")[i];
    for (int a = 0; a < 4; ++a) s += in_deg[i] > hid_deg[a] ? h[a] * p.at("dec.w_out").at(a, i) : 0.0;
    for (int k = 0; k < 2; ++k) s += z[k] * p.at("dec.v_out").at(k, i);
    CHECK(logits[i] == doctest::Approx(s).epsilon(1e-14));
  }
}

TEST_CASE("zero z-injection makes the decoder blind to z") {
  VaeModel model = VaeModel::create(small_config(DecoderKind::kAutoregressive), 4);
  for (auto& [name, t] : model.params()) {
    if (name.find("dec.v") == 0) t.fill(0.0);
  }
  std::mt19937_64 rng(2);
  const auto x = random_binary(9, rng);
  const auto a = decode_autoregressive(model, oracle::random_tensor({4}, rng).values(), x);
  const auto b = decode_autoregressive(model, oracle::random_tensor({4}, rng).values(), x);
  CHECK(a == b);
}

TEST_CASE("zeroed latent paths start at the prior") {
  ModelConfig c = small_config(DecoderKind::kAutoregressive);
  c.decoder_direct = true;
  VaeModel model = VaeModel::create(c, 4);
  model.zero_latent_paths();
  std::mt19937_64 rng(2);
  const auto x = random_binary(9, rng);
  CHECK(encode(model, x) == DiagGaussian::standard(4));
  CHECK(decode_autoregressive(model, oracle::random_tensor({4}, rng).values(), x) ==
        decode_autoregressive(model, oracle::random_tensor({4}, rng).values(), x));
  // The rest of the decoder is untouched.
  const Tensor& direct = model.params().at("dec.direct");
  CHECK_FALSE(direct == Tensor(direct.shape(), 0.0));
}

TEST_CASE("zero networks") {
  VaeModel model = VaeModel::create(small_config(DecoderKind::kFactorized), 5);
  model.set_zero();
  std::mt19937_64 rng(3);
  const auto q = encode(model, random_binary(9, rng));
  CHECK(q == DiagGaussian::standard(4));

  model.params().at("dec.b_out") = Tensor::vector({1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK(decode_factorized(model, oracle::random_tensor({4}, rng).values()) ==
        std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
}

TEST_CASE("encoder separates distinct inputs and checks lengths") {
  const VaeModel model = VaeModel::create(small_config(DecoderKind::kFactorized), 6);
  std::vector<double> a(9, 0.0), b(9, 0.0);
  b[4] = 1.0;
  CHECK_FALSE(encode(model, a) == encode(model, b));
  CHECK_THROWS_AS(encode(model, std::vector<double>(8, 0.0)), ShapeError);
  CHECK_THROWS_AS(decode_factorized(model, std::vector<double>(3, 0.0)), ShapeError);
}

TEST_CASE("network gradients against finite differences") {
  for (auto dec : {DecoderKind::kFactorized, DecoderKind::kAutoregressive}) {
    CAPTURE(to_string(dec));
    ModelConfig c = small_config(dec, PriorKind::kAffineArFlow);
    c.decoder_direct = dec == DecoderKind::kAutoregressive;
    VaeModel model = VaeModel::create(c, 7);
    std::mt19937_64 rng(4);
    oracle::jitter(model, 0.1, rng);
    const Tensor x({2, 9}, random_binary(18, rng));
    const Tensor z = oracle::random_tensor({2, 4}, rng);
    const double err = oracle::model_grad_error(model, [&](const ModelGraph& g) {
      ad::Tape& t = g.tape();
      const GaussianNode q = g.encode(t.input("x", x));
      const ad::Var logits = g.decode(t.input("z", z), t.input("x2", x));
      return ad::sum(q.mean) + ad::sum(q.log_var) + ad::mean(ad::softplus(logits)) +
             ad::sum(g.prior_log_density(t.input("z2", z)));
    });
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("identity flow is the standard normal") {
  VaeModel model = VaeModel::create(small_config(DecoderKind::kFactorized, PriorKind::kAffineArFlow), 8);
  for (auto& [name, t] : model.params()) {
    if (name.find("flow") == 0) t.fill(0.0);
  }
  std::mt19937_64 rng(5);
  for (int i = 0; i < 50; ++i) {
    const auto z = oracle::random_tensor({4}, rng, -3, 3).values();
    CHECK(std::abs(prior_log_density(model, z) - standard_normal_log_density(z)) <= 1e-12);
  }
  ModelConfig two = small_config(DecoderKind::kFactorized);
  two.latent_dim = 2;
  const VaeModel standard = VaeModel::create(two, 1);
  CHECK(prior_log_density(standard, std::vector<double>{0, 0}) == doctest::Approx(-1.837877).epsilon(1e-6));
}

TEST_CASE("one-dimensional flow prior integrates to one") {
  ModelConfig c = small_config(DecoderKind::kFactorized, PriorKind::kAffineArFlow);
  c.latent_dim = 1;
  c.flow_count = 1;
  VaeModel model = VaeModel::create(c, 9);
  // With K = 1 the only autoregressive inputs are the biases.
  model.params().at("flow0.b_shift") = Tensor::vector({0.8});
  model.params().at("flow0.b_scale") = Tensor::vector({-0.4});
  const double mass = oracle::integrate(
      [&](double z) { return std::exp(prior_log_density(model, std::vector<double>{z})); }, -15, 15);
  CHECK(std::abs(mass - 1.0) <= 1e-5);
}

TEST_CASE("multi-flow prior integrates to one in two dimensions") {
  ModelConfig c = small_config(DecoderKind::kFactorized, PriorKind::kAffineArFlow);
  c.latent_dim = 2;
  VaeModel model = VaeModel::create(c, 10);
  std::mt19937_64 rng(6);
  oracle::jitter(model, 0.5, rng);
  const double mass = oracle::integrate(
      [&](double a) {
        return oracle::integrate(
            [&](double b) { return std::exp(prior_log_density(model, std::vector<double>{a, b})); }, -30, 30);
      },
      -30, 30);
  CHECK(std::abs(mass - 1.0) <= 1e-5);
}

TEST_CASE("prior samples invert the flow") {
  ModelConfig c = small_config(DecoderKind::kFactorized, PriorKind::kAffineArFlow);
  VaeModel model = VaeModel::create(c, 11);
  std::mt19937_64 rng(7);
  oracle::jitter(model, 0.5, rng);
  std::mt19937_64 a(3), b(3);
  const Tensor z = sample_prior(model, 5, a);
  // Pushing samples back through the density direction recovers the base noise.
  std::normal_distribution<double> normal;
  ad::Tape tape;
  ModelGraph g(model, tape);
  ad::Var u = tape.input("z", z);
  for (std::size_t f = 0; f < c.flow_count; ++f) u = g.flow_step(f, u).first;
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(u.value()[i] == doctest::Approx(normal(b)).epsilon(1e-10));
}

TEST_CASE("ancestral sampling") {
  ModelConfig c = small_config(DecoderKind::kAutoregressive);
  VaeModel model = VaeModel::create(c, 12);
  model.set_zero();
  model.params().at("dec.b_out").fill(20.0);
  std::mt19937_64 rng(8);
  CHECK(sample_autoregressive(model, std::vector<double>(4, 0.0), rng) == std::vector<double>(9, 1.0));

  VaeModel random = VaeModel::create(c, 13);
  std::mt19937_64 r1(9), r2(9);
  const auto z = std::vector<double>{0.1, 0.2, -0.3, 0.4};
  CHECK(sample_autoregressive(random, z, r1) == sample_autoregressive(random, z, r2));

  // Pixel 0 sees only z and the bias.
  const double p0 = oracle::sigmoid(decode_autoregressive(random, z, std::vector<double>(9, 0.0))[0]);
  const int n = 10000;
  Tensor zs({static_cast<std::size_t>(n), 4});
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 4; ++k) zs.at(i, k) = z[k];
  }
  std::mt19937_64 r3(10);
  const Tensor draws = sample_pixels(random, zs, r3);
  double ones = 0;
  for (int i = 0; i < n; ++i) ones += draws.at(i, 0);
  CHECK(std::abs(ones / n - p0) <= 4 * std::sqrt(p0 * (1 - p0) / n));
}

TEST_CASE("checkpoint round trip is bit exact") {
  for (auto prior : {PriorKind::kStandardNormal, PriorKind::kAffineArFlow}) {
    VaeModel model = VaeModel::create(small_config(DecoderKind::kAutoregressive, prior), 14);
    std::mt19937_64 rng(11);
    oracle::jitter(model, 1e-3, rng);
    const auto path = (std::filesystem::temp_directory_path() / "mae_ckpt_test.txt").string();
    save_checkpoint(model, path);
    const VaeModel back = load_checkpoint(path);
    CHECK(back.config() == model.config());
    CHECK(back.params() == model.params());
    std::filesystem::remove(path);
  }
  CHECK_THROWS(load_checkpoint("/nonexistent/ckpt"));
}

TEST_CASE("parameter shapes are validated") {
  const ModelConfig c = small_config(DecoderKind::kFactorized);
  ParameterSet ps = VaeModel::create(c, 1).params();
  ps.at("enc.w0") = Tensor({3, 3}, 0.0);
  CHECK_THROWS_AS(VaeModel(c, ps), ShapeError);
}
